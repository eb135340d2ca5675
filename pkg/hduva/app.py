"""
hduva main entry point
"""
import argparse
import logging
import sys
from pathlib import Path

from tqdm import tqdm

from .commands import CommandContext, CommandRegistry, register_commands
from .config import RunConfig
from .errors import HduvaError
from .run_registry import RunRegistry
from .schema import parse_flag_pairs

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

# Config keys whose comma-separated values run one command per value.
SWEEP_KEYS = ("train.gamma_y",)


def build_parser(registry: CommandRegistry) -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hduva",
        description="Domain generalization with hierarchical topic-conditioned VAEs.",
        epilog="Settings are dotted config keys, e.g. --train.max_epochs 10; "
               "HDUVA_DATA_DIR sets the default dataset root.")
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    parser.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")
    parser.add_argument("--config", help="Key-value config file (section.key = value)")
    subparsers = parser.add_subparsers(dest="command", metavar="command")
    for name in registry.names:
        sub = subparsers.add_parser(name, help=registry.help[name])
        if registry.arguments[name] is not None:
            registry.arguments[name](sub)
    return parser


def expand_sweeps(argv: list[str]) -> list[list[str]]:
    """
    One argv per value of every swept key given as a comma list, e.g.
    ``--train.gamma_y 1e3,1e5`` gives two command lines.
    """
    expanded = [list(argv)]
    for key in SWEEP_KEYS:
        flag = f"--{key}"
        result = []
        for args in expanded:
            position, values = None, None
            for i, token in enumerate(args):
                if token == flag and i + 1 < len(args):
                    position, values = i, args[i + 1]
                elif token.startswith(flag + "="):
                    position, values = i, token.split("=", 1)[1]
            if position is None or "," not in values:
                result.append(args)
                continue
            for value in (v.strip() for v in values.split(",") if v.strip()):
                copy = list(args)
                if copy[position] == flag:
                    copy[position + 1] = value
                else:
                    copy[position] = f"{flag}={value}"
                result.append(copy)
        expanded = result
    return expanded


def configure_logging(verbose: bool = False, quiet: bool = False):
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


class App:
    """
    Parses a command line, resolves the configuration and runs the command
    inside a recorded run directory.
    """

    def __init__(self, registry: CommandRegistry | None = None, echo=print):
        self.registry = registry or register_commands(CommandRegistry())
        self.parser = build_parser(self.registry)
        self.echo = echo

    def parse(self, argv: list[str]):
        args, rest = self.parser.parse_known_args(argv)
        if args.command is None:
            self.parser.print_help()
            raise SystemExit(2)
        pairs = parse_flag_pairs(rest)
        config = RunConfig()
        if args.config:
            config.load_file(args.config)
        config.set_config({k: v for k, v in pairs if "." in k})
        params = [(k, v) for k, v in pairs if "." not in k]
        if params and args.command != "gen-scenario":
            unknown = ", ".join(f"--{k}" for k, _ in params)
            self.parser.error(f"unrecognized arguments: {unknown}")
        return args, config, params

    def _progress(self, quiet: bool):
        bar = tqdm(total=100, unit="%", leave=False, disable=quiet)

        def progress(percent: int):
            bar.update(max(0, min(100, percent)) - bar.n)

        return bar, progress

    def execute(self, argv: list[str], run_dir: Path, progress=None, registry=None, record=None):
        """Runs one command line into `run_dir`; returns (status, outputs)."""
        args, config, params = self.parse(argv)
        run_dir.mkdir(parents=True, exist_ok=True)
        ctx = CommandContext(config=config, run_dir=run_dir, args=args, params=params,
                             echo=self.echo, registry=registry,
                             record=record if record is not None else {},
                             rerun=lambda stored, target, prog: self.execute(
                                 stored, Path(target), prog, registry))
        return self.registry.run(args.command, ctx, progress)

    def run_once(self, argv: list[str]) -> int:
        args, config, _params = self.parse(argv)
        registry = RunRegistry(config["run.out"])
        run_id = registry.start(args.command, argv, config.snapshot())
        run_dir = registry.run_dir(run_id)
        record = {}
        bar, progress = self._progress(args.quiet)
        try:
            status, outputs = self.execute(argv, run_dir, progress, registry, record)
        except HduvaError as exc:
            registry.finish(run_id, status='failed', exit_code=exc.exit_code, **record)
            logger.error("%s", exc)
            return exc.exit_code
        finally:
            bar.close()
        row = registry.finish(run_id, status=status, outputs=outputs, **record)
        registry.write_record_json(row, run_dir / "record.json")
        self.echo(f"run {run_id}: {run_dir}")
        return 0 if status == 'completed' else 1

    def run(self, argv: list[str]) -> int:
        try:
            preliminary, _ = self.parser.parse_known_args(argv)
        except SystemExit as exc:
            return int(exc.code or 0)
        configure_logging(preliminary.verbose, preliminary.quiet)
        exit_code = 0
        try:
            for single in expand_sweeps(argv):
                exit_code = self.run_once(single)
                if exit_code:
                    break
        except HduvaError as exc:
            logger.error("%s", exc)
            return exc.exit_code
        except SystemExit as exc:
            return int(exc.code or 0)
        return exit_code


def main():
    sys.exit(App().run(sys.argv[1:]))
