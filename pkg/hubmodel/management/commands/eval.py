from hubmodel import formats
from hubmodel.management.base import HubModelCommand
from hubmodel.services import run_eval


class Command(HubModelCommand):
    help = "Compare estimated parameters against the true ones (RMSE of A)"

    def add_arguments(self, parser):
        parser.add_argument("estimated", help="Estimated params.json")
        parser.add_argument("truth", help="True params.json")
        parser.add_argument("--output", help="Also write the report to this JSON file")

    def handle(self, *args, **options):
        with self.runtime_errors():
            report = run_eval(options["estimated"], options["truth"])
            if options["output"]:
                formats.write_json(options["output"], report)

        self.stdout.write(self.style.SUCCESS("Evaluation:"))
        self.stdout.write(f"  n: {report['n']}")
        self.stdout.write(f"  RMSE(A): {report['rmse_A']:.6f}")
        for name, error in report["abs_error"].items():
            self.stdout.write(f"  |{name} error|: {error:.6f}")
