from contextlib import contextmanager

from django.core.management.base import BaseCommand, CommandError

from ..exceptions import HubModelError


def add_fit_arguments(parser):
    """EM options shared by ``fit`` and ``bootstrap``; defaults come from settings."""
    group = parser.add_argument_group("EM options")
    group.add_argument("--max-em-iters", type=int, help="Maximum EM iterations")
    group.add_argument(
        "--em-tol", type=float, help="Stop when log P(G) improves less than this"
    )
    group.add_argument(
        "--mstep-tol", type=float, help="Q improvement tolerance per M-step cycle"
    )
    group.add_argument(
        "--mstep-grad-tol",
        type=float,
        help="Largest first derivative allowed at M-step convergence",
    )
    group.add_argument("--mstep-max-cycles", type=int)
    group.add_argument("--newton-max-steps", type=int)
    group.add_argument("--newton-damping", type=int, help="Step-halvings per step")
    group.add_argument("--theta-max", type=float, help="Clamp for |theta_ij|")
    group.add_argument(
        "--independent",
        action="store_true",
        help="Fit the classical hub model (alpha = beta = gamma = 0)",
    )
    group.add_argument(
        "--restart-seeds",
        help="Comma-separated seeds for extra perturbed starts; best fit wins",
    )
    group.add_argument("--restart-scale", type=float)


class HubModelCommand(BaseCommand):
    """Base for the hub model commands: runtime failures exit with status 1."""

    @contextmanager
    def runtime_errors(self):
        try:
            yield
        except HubModelError as e:
            raise CommandError(str(e)) from e
        except OSError as e:
            raise CommandError(f"I/O error: {e}") from e

    def summary(self, title, rows):
        self.stdout.write("\n" + "=" * 60)
        self.stdout.write(self.style.SUCCESS(f"\n{title}:"))
        for label, value in rows:
            self.stdout.write(f"  {label}: {value}")
