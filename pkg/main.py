import argparse
import sys
from pathlib import Path

from loguru import logger
from rich.console import Console
from rich.panel import Panel

from core.config import METHODS, load_config
from core.errors import ConfigError, HPDSError
from core.log_setup import setup_logging
from modules.experiments import ALS_METHODS, COMMANDS, command_for, run_command

console = Console(stderr=True)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_NOT_CONVERGED = 3


def display_banner():
    """Displays the tool's banner."""
    console.print(Panel.fit(
        "HPDS identification toolkit\nTT / HT / CP alternating least squares + lifting baseline",
        style="bold blue",
    ))


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hpds",
        description="Identify homogeneous polynomial dynamical systems with low-rank tensor models.",
    )
    parser.add_argument(
        "command", nargs="?", choices=sorted(COMMANDS),
        help="Experiment to run (defaults to the one named by `kind` in the config).",
    )
    parser.add_argument("--config", help="YAML or JSON experiment configuration.")
    parser.add_argument("--seed", type=int, help="Base seed (overrides the config).")
    parser.add_argument("--out", help="Run directory (overrides out_dir).")
    parser.add_argument("--method", choices=list(METHODS) + ["all"], help="Restrict to one method.")
    parser.add_argument("--parallel", type=int, help="Number of experiment cells run concurrently.")
    parser.add_argument("--log-level", default=None, help="Console log level (DEBUG, INFO, WARNING...).")
    parser.add_argument("--full-grid", action="store_true", help="Scaling: include n = 200 and 400.")
    parser.add_argument("--no-banner", action="store_true", help=argparse.SUPPRESS)
    return parser


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as e:
        # argparse exits with 2 on usage errors; usage errors map to 1 here
        return EXIT_OK if e.code in (0, None) else EXIT_CONFIG
    setup_logging(args.log_level or "INFO")
    if not args.no_banner:
        display_banner()

    try:
        cfg = load_config(args.config).with_overrides(
            seed=args.seed,
            out=args.out,
            method=args.method,
            parallel=args.parallel,
            full_grid=args.full_grid,
            log_level=args.log_level,
        )
    except ConfigError as e:
        console.print(f"[bold red][!] Configuration error: {e}[/bold red]")
        return EXIT_CONFIG

    Path(cfg.out_dir).mkdir(parents=True, exist_ok=True)
    setup_logging(cfg.log_level, Path(cfg.out_dir) / "run.log")

    command = args.command or command_for(cfg)
    try:
        result = run_command(command, cfg)
    except ConfigError as e:
        console.print(f"[bold red][!] Configuration error: {e}[/bold red]")
        return EXIT_CONFIG
    except (HPDSError, OSError) as e:
        console.print(f"[bold red][!] {type(e).__name__}: {e}[/bold red]")
        return EXIT_RUNTIME

    if command == "identify":
        stalled = [m for m, r in result.items() if m in ALS_METHODS and not r.converged]
        if stalled:
            console.print(f"[yellow][!] Not converged: {', '.join(stalled)}[/yellow]")
            return EXIT_NOT_CONVERGED
    console.print(f"[bold green][+] Done. Outputs in {cfg.out_dir}[/bold green]")
    return EXIT_OK


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        logger.warning("interrupted")
        sys.exit(130)
