from django.core.management.base import CommandError

from hubmodel.forms import StudyForm, bind
from hubmodel.management.base import HubModelCommand
from hubmodel.models import Run, StudyReplicate
from hubmodel.services import create_study, prepare_output, record_run, write_study
from hubmodel.tasks import run_study_replicate


class Command(HubModelCommand):
    help = (
        "Simulation study: RMSE of the estimated A for the classical and the "
        "temporal hub model over seeded replicates"
    )

    def add_arguments(self, parser):
        parser.add_argument("--output", required=True, help="Output directory")
        parser.add_argument("--n", type=int, help="Number of nodes")
        parser.add_argument("--T", type=int, help="Number of groups")
        parser.add_argument(
            "--alpha", help="Leader persistence: a number or log-half-n, log-n, log-2n"
        )
        parser.add_argument("--beta", type=float, default=3.0)
        parser.add_argument("--gamma", type=float, default=-1.0)
        parser.add_argument("--replicates", type=int, default=10)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument(
            "--summarize",
            type=int,
            metavar="RUN_ID",
            help="Only summarize the replicates of an earlier study run",
        )

    def handle(self, *args, **options):
        if options["summarize"] is not None:
            self._summarize(options["summarize"], options["output"])
            return

        # Validate options
        form = bind(StudyForm, options)
        data = form.cleaned_data
        alpha = form.alpha_value()
        config = {
            "n": data["n"],
            "T": data["T"],
            "alpha": alpha,
            "alpha_setting": data["alpha"],
            "beta": data["beta"],
            "gamma": data["gamma"],
            "replicates": data["replicates"],
        }

        with self.runtime_errors():
            with record_run(
                "study", options["output"], config=config, seeds=[data["seed"]]
            ) as record:
                if record.run is None:
                    raise CommandError(
                        "The study needs the run ledger; run `manage.py migrate` first"
                    )
                # One row per replicate, then one task each; the immediate
                # backend runs them before enqueue returns
                create_study(
                    record.run,
                    data["n"],
                    data["T"],
                    alpha,
                    data["beta"],
                    data["gamma"],
                    data["replicates"],
                    data["seed"],
                )
                for replicate in record.run.replicates.all():
                    run_study_replicate.enqueue(replicate.pk)
                    if options["verbosity"] >= 2:
                        self.stdout.write(f"  - Queued replicate {replicate.index}")
                # Summarize whatever has finished
                summary = write_study(record.run, record.output_path)

        self._report(record.run, summary)

    def _summarize(self, run_id, output):
        try:
            run = Run.objects.get(pk=run_id, command="study")
        except Run.DoesNotExist:
            raise CommandError(f"No study run with id {run_id}", returncode=2)
        with self.runtime_errors():
            summary = write_study(run, prepare_output(output))
        self._report(run, summary)

    def _report(self, run, summary):
        pending = run.replicates.filter(status=StudyReplicate.Status.PENDING).count()
        if pending:
            self.stdout.write(
                self.style.WARNING(
                    f"{pending} replicates still queued; rerun with "
                    f"--summarize {run.pk} once the workers finish"
                )
            )
        self.summary(
            f"Study #{run.pk}",
            [
                ("Replicates done", summary["done"]),
                ("Replicates failed", summary["failed"]),
                ("Temporal fit better", summary["temporal_better"]),
            ],
        )
        for method in ("independent", "temporal"):
            row = summary[method]
            if row["mean_rmse"] is None:
                continue
            sd = row["sd_rmse_x1000"]
            self.stdout.write(
                f"  {method}: mean RMSE {row['mean_rmse']:.3f}"
                + (f" (sd x 10^3 {sd:.1f})" if sd is not None else "")
            )
