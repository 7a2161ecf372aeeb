import logging
import time
from pathlib import Path

from django.conf import settings
from django.core.management.base import BaseCommand, CommandError

from apps.driving.services import DrivingError
from apps.evt.types import ThresholdError
from apps.experiments.constants import (
    EXIT_ASSERTION,
    EXIT_CONFIG,
    FAILURES_FILE,
    SUMMARY_FILE,
    get_example_presets,
    get_subcommands,
)
from apps.experiments.presets import get_preset
from apps.experiments.serializers import ConfigError, dump_config, load_config, load_config_file
from apps.experiments.services import RUNNERS, run_example
from apps.experiments.types import RunResult
from apps.experiments.writers import write_json
from apps.thermo.types import ConvergenceError
from apps.transfer_op.types import WindowError


logger = logging.getLogger(__name__)


class _WarningCollector(logging.Handler):
    def __init__(self):
        super().__init__(level=logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        self.messages.append(f"{record.name}: {record.getMessage()}")


class Command(BaseCommand):
    help = "Run one experiment and write its CSV, JSON and SVG artifacts."

    def add_arguments(self, parser):
        parser.add_argument("subcommand", choices=get_subcommands())
        parser.add_argument("preset", nargs="?", choices=get_example_presets(), help="worked example for 'example'")
        parser.add_argument("--config", type=Path, help="YAML experiment config")
        parser.add_argument("--seed", type=int, help="overrides both the path and the Monte Carlo seed")
        parser.add_argument("--out", type=Path, help="output directory")
        parser.add_argument("--threads", type=int, help="worker threads for Monte Carlo runs")
        parser.add_argument("--strict", action="store_true", help="treat logged warnings as failures")

    def handle(self, *args, **options):
        subcommand = options["subcommand"]
        try:
            config = self._config(subcommand, options)
        except ConfigError as exc:
            for message in exc.errors:
                self.stderr.write(message)
            raise CommandError("invalid config", returncode=EXIT_CONFIG)

        out = Path(options["out"] or config["output"] or settings.EXPERIMENT_OUTPUT_DIR)
        out.mkdir(parents=True, exist_ok=True)
        (out / "config.yaml").write_text(dump_config(config), encoding="utf-8")

        collector = _WarningCollector()
        logging.getLogger("apps").addHandler(collector)
        started = time.perf_counter()
        try:
            if subcommand == "example":
                result = run_example(config, out, options["preset"])
            else:
                result = RUNNERS[subcommand](config, out)
        except (ValueError, WindowError, ThresholdError, DrivingError, ConvergenceError) as exc:
            logger.error(f"{subcommand} aborted: {exc}")
            raise CommandError(str(exc), returncode=EXIT_CONFIG)
        finally:
            logging.getLogger("apps").removeHandler(collector)

        if options["strict"]:
            for message in collector.messages:
                result.fail("warning", message)
        self._finish(result, config, out, time.perf_counter() - started, collector.messages)

    def _config(self, subcommand: str, options) -> dict:
        if subcommand == "example":
            if options["preset"] is None:
                raise ConfigError([f"preset: choose one of {', '.join(get_example_presets())}"])
            config = get_preset(options["preset"])
        elif options["config"] is not None:
            config = load_config_file(options["config"])
        else:
            config = load_config("")
        if options["seed"] is not None:
            config["seeds"] = {"path": options["seed"], "mc": options["seed"]}
        if options["threads"] is not None:
            config["threads"] = options["threads"]
        return load_config(dump_config(config))

    def _finish(self, result: RunResult, config: dict, out: Path, elapsed: float, warnings: list[str]) -> None:
        summary = {
            "subcommand": result.subcommand,
            "name": config["name"],
            "passed": result.passed,
            "failures": len(result.failures),
            "files": sorted(Path(f).name for f in result.files),
            "seeds": config["seeds"],
            "tolerances": config["tolerances"],
            "warnings": warnings,
            "results": result.summary,
        }
        write_json(out / SUMMARY_FILE, summary)
        logger.info(f"{result.subcommand} finished in {elapsed:.1f}s with {len(result.failures)} failure(s)")
        if result.passed:
            (out / FAILURES_FILE).unlink(missing_ok=True)
            self.stdout.write(self.style.SUCCESS(f"{result.subcommand}: all checks passed ({out})"))
            return
        write_json(out / FAILURES_FILE, [failure.as_dict() for failure in result.failures])
        for failure in result.failures:
            self.stderr.write(f"{failure.check}: {failure.message}")
        raise CommandError(f"{len(result.failures)} check(s) failed", returncode=EXIT_ASSERTION)
