import time

from kernels.tensor import NumericalError

from runs.config import ConfigError
from runs.fragments import FRAGMENTS, run_fragments
from runs.management.base import CalibrationCommand


class Command(CalibrationCommand):
    help = "Finite-difference check of every registered differentiable fragment."

    def add_arguments(self, parser):
        parser.add_argument("--module", action="append", default=None, dest="modules",
                            help=f"Fragment to check (repeatable): {', '.join(FRAGMENTS)}. Default: all.")
        parser.add_argument("--tol", type=float, default=None, help="Override every fragment's tolerance.")

    def run(self, **options):
        if options["tol"] is not None and options["tol"] <= 0:
            raise ConfigError(f"--tol must be positive, got {options['tol']}")
        start = time.perf_counter()
        try:
            results = run_fragments(options["modules"], options["tol"])
        except KeyError as exc:
            raise ConfigError(exc.args[0])

        self.stdout.write(f"{'fragment':<20} {'max rel. err':>12} {'tol':>8} {'expected':>8} {'result':>6}")
        for result in results:
            row = result.as_row()
            outcome = "pass" if row["passed"] else "fail"
            line = f"{row['fragment']:<20} {row['max_rel_error']:>12.3e} {row['tol']:>8.0e} {row['expected']:>8} {outcome:>6}"
            self.stdout.write(line if result.ok else self.style.ERROR(line))
        self.stdout.write(f"{len(results)} fragments in {time.perf_counter() - start:.1f} s")

        failed = [r.report.name for r in results if not r.ok]
        if failed:
            raise NumericalError(f"unexpected grad check outcome: {', '.join(failed)}")
        self.stdout.write(self.style.SUCCESS("All fragments behaved as expected."))
