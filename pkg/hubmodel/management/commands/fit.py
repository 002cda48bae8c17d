import logging

from hubmodel import formats
from hubmodel.forms import FitForm, bind
from hubmodel.management.base import HubModelCommand, add_fit_arguments
from hubmodel.services import record_run, run_fit


class Command(HubModelCommand):
    help = "Fit the temporal hub model (or the classical one) to a groups file by EM"

    def add_arguments(self, parser):
        parser.add_argument("groups", help="Groups file (comma-separated 0/1 rows)")
        parser.add_argument("--output", required=True, help="Output directory")
        parser.add_argument(
            "--timestamps",
            action="store_true",
            help="The first column of the groups file is a time tag",
        )
        parser.add_argument("--init", help="params.json to warm-start EM from")
        parser.add_argument(
            "--compare-independent",
            action="store_true",
            help="Also fit the classical hub model and compare densities",
        )
        add_fit_arguments(parser)

    def handle(self, *args, **options):
        cfg = bind(FitForm, options).fit_config()
        # Verbosity 2 shows every EM iteration
        if options["verbosity"] >= 2:
            logging.getLogger("hubmodel").setLevel(logging.DEBUG)

        # Load the groups and the optional warm start
        inputs = [options["groups"]]
        with self.runtime_errors():
            groups = formats.read_groups(
                options["groups"], timestamps=options["timestamps"]
            )
            start = None
            if options["init"]:
                start, _ = formats.read_params(options["init"])
                inputs.append(options["init"])
            self.stdout.write(
                f"Fitting {groups.T} groups over {groups.n} nodes"
                + (" (classical hub model)" if cfg.constrain_independent else "")
            )

            # Run EM and write every output file
            with record_run(
                "fit", options["output"], config=cfg.as_dict(), input_paths=inputs
            ) as record:
                outcome = run_fit(
                    groups,
                    cfg,
                    record.output_path,
                    start=start,
                    compare_independent=options["compare_independent"],
                )
                record.config["compare_independent"] = options["compare_independent"]
                record.seeds = list(cfg.restart_seeds)

        # Report results
        result = outcome.result
        if not result.converged:
            self.stdout.write(
                self.style.WARNING(
                    f"EM did not converge in {result.iterations} iterations"
                )
            )
        rows = [
            ("log P(G)", f"{result.log_marginal:.6f}"),
            ("Iterations", result.iterations),
            ("alpha", f"{result.params.alpha:.4f}"),
            ("beta", f"{result.params.beta:.4f}"),
            ("gamma", f"{result.params.gamma:.4f}"),
            ("Graph density", f"{outcome.density:.4f}"),
            ("Segments", len(outcome.segments)),
        ]
        if outcome.independent is not None:
            rows += [
                ("Classical log P(G)", f"{outcome.independent.log_marginal:.6f}"),
                ("Classical graph density", f"{outcome.independent_density:.4f}"),
            ]
        rows.append(("Output", record.output_path))
        self.summary("Fit", rows)
