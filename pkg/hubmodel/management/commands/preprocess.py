from hubmodel import formats
from hubmodel.management.base import HubModelCommand
from hubmodel.services import record_run, run_preprocess


class Command(HubModelCommand):
    help = "Reduce raw multi-group events to one group per event"

    def add_arguments(self, parser):
        parser.add_argument(
            "raw", help="Raw records file ('time | group | group' per line)"
        )
        parser.add_argument("--output", required=True, help="Output directory")

    def handle(self, *args, **options):
        # Parse the raw records and keep one group per event
        with self.runtime_errors():
            raw = formats.read_raw_records(options["raw"])
            with record_run(
                "preprocess", options["output"], input_paths=[options["raw"]]
            ) as record:
                result = run_preprocess(raw, record.output_path)

        # Report results
        ambiguous = sum(len(event.candidates) > 1 for event in raw.events)
        if options["verbosity"] >= 2:
            for event, index in zip(raw.events, result.retained):
                if len(event.candidates) > 1:
                    self.stdout.write(
                        f"  - {event.time_tag}: kept candidate {index} "
                        f"of {len(event.candidates)}"
                    )
        for label in result.removed_labels:
            self.stdout.write(self.style.WARNING(f"  Removed node '{label}'"))
        self.summary(
            "Preprocess",
            [
                ("Events", result.groups.T),
                ("Events with several groups", ambiguous),
                ("Nodes kept", result.groups.n),
                ("Nodes removed", len(result.removed_labels)),
                ("Output", record.output_path),
            ],
        )
