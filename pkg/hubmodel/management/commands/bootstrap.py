from django.conf import settings

from hubmodel.forms import BootstrapForm, bind
from hubmodel.management.base import HubModelCommand, add_fit_arguments
from hubmodel.services import record_run, run_bootstrap


class Command(HubModelCommand):
    help = "Parametric bootstrap intervals for alpha, beta and gamma of a fit"

    def add_arguments(self, parser):
        parser.add_argument("fit_dir", help="Output directory of a previous fit")
        parser.add_argument("--output", required=True, help="Output directory")
        parser.add_argument(
            "--B", dest="replicates", type=int, help="Number of bootstrap replicates"
        )
        parser.add_argument("--level", type=float, help="Confidence level")
        parser.add_argument("--seed", type=int, default=0)
        parser.add_argument(
            "--jobs", type=int, default=1, help="Replicates fitted in parallel"
        )
        add_fit_arguments(parser)

    def handle(self, *args, **options):
        # Validate options; unset ones fall back to settings.HUB_MODEL
        form = bind(BootstrapForm, options)
        cfg = form.fit_config()
        data = form.cleaned_data
        defaults = settings.HUB_MODEL
        B = data.get("replicates") or defaults.get("BOOTSTRAP_REPLICATES", 200)
        level = data.get("level") or defaults.get("BOOTSTRAP_LEVEL", 0.95)
        seed = data["seed"]
        max_failure_rate = defaults.get("BOOTSTRAP_MAX_FAILURE_RATE", 0.10)

        # Refit B data sets simulated from the saved fit
        self.stdout.write(f"Running {B} bootstrap replicates...")
        with self.runtime_errors():
            with record_run(
                "bootstrap",
                options["output"],
                config={
                    **cfg.as_dict(),
                    "B": B,
                    "level": level,
                    "jobs": data["jobs"],
                    "max_failure_rate": max_failure_rate,
                },
                seeds=[seed],
                input_paths=[options["fit_dir"]],
            ) as record:
                result = run_bootstrap(
                    options["fit_dir"],
                    cfg,
                    record.output_path,
                    B,
                    level,
                    seed,
                    jobs=data["jobs"],
                    max_failure_rate=max_failure_rate,
                )

        # Report intervals
        if result.failures:
            self.stdout.write(
                self.style.WARNING(f"  {result.failures} replicates failed")
            )
        self.stdout.write("\n" + "=" * 60)
        self.stdout.write(self.style.SUCCESS(f"\n{level:.0%} percentile intervals:"))
        for name, row in result.summary().items():
            line = (
                f"  {name}: {row['estimate']:.4f} "
                f"[{row['lower']:.4f}, {row['upper']:.4f}]"
            )
            if row["significant"]:
                self.stdout.write(self.style.SUCCESS(line + " excludes 0"))
            else:
                self.stdout.write(line)
        self.stdout.write(f"  Replicates: {result.replicates}")
        self.stdout.write(f"  Output: {record.output_path}")
