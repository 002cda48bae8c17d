from hubmodel import formats
from hubmodel.forms import SimulateForm, bind
from hubmodel.management.base import HubModelCommand
from hubmodel.services import record_run, run_simulate


class Command(HubModelCommand):
    help = "Simulate groups, leaders and parameters from the temporal hub model"

    def add_arguments(self, parser):
        parser.add_argument("--output", required=True, help="Output directory")
        parser.add_argument("--n", type=int, help="Number of nodes")
        parser.add_argument("--T", type=int, required=True, help="Number of groups")
        parser.add_argument(
            "--alpha",
            default="0",
            help="Leader persistence: a number or log-half-n, log-n, log-2n",
        )
        parser.add_argument("--beta", type=float, help="Stay adjustment")
        parser.add_argument("--gamma", type=float, help="Join adjustment")
        parser.add_argument("--u-mean", type=float)
        parser.add_argument("--u-sd", type=float)
        parser.add_argument("--theta-mean", type=float)
        parser.add_argument("--theta-sd", type=float)
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument(
            "--sample-from",
            help="params.json to simulate from instead of sampling parameters",
        )

    def handle(self, *args, **options):
        form = bind(SimulateForm, options)
        sample_from = form.cleaned_data.get("sample_from")

        # Sample parameters, or take them from an earlier params.json
        with self.runtime_errors():
            params = None
            labels = ()
            if sample_from:
                params, document = formats.read_params(sample_from)
                labels = document.get("node_labels", ())
            cfg = form.sim_config(n=params.n if params is not None else None)
            if params is not None and options["verbosity"] >= 1:
                self.stdout.write(
                    f"Simulating {cfg.T} groups from {sample_from} (n={params.n})"
                )

            with record_run(
                "simulate",
                options["output"],
                config={
                    "n": cfg.n,
                    "T": cfg.T,
                    "alpha": cfg.alpha if params is None else params.alpha,
                    "beta": cfg.beta if params is None else params.beta,
                    "gamma": cfg.gamma if params is None else params.gamma,
                    "u_mean": cfg.u_mean,
                    "u_sd": cfg.u_sd,
                    "theta_mean": cfg.theta_mean,
                    "theta_sd": cfg.theta_sd,
                    "sample_from": sample_from,
                },
                seeds=[cfg.seed],
                input_paths=[sample_from] if sample_from else [],
            ) as record:
                params, leaders, groups = run_simulate(
                    cfg, record.output_path, params=params, node_labels=labels
                )

        # Report results
        stays = (leaders.z[1:] == leaders.z[:-1]).mean() if leaders.T > 1 else 0.0
        self.summary(
            "Simulation",
            [
                ("Nodes", groups.n),
                ("Groups", groups.T),
                ("Mean group size", f"{groups.G.sum(axis=1).mean():.2f}"),
                ("Leader stays", f"{stays:.3f}"),
                ("Output", record.output_path),
            ],
        )
