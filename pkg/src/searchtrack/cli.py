"""Command-line interface: single runs, Monte Carlo batches, scenario
validation, and access to the bundled scenario presets.

Every error exits nonzero with a single ``error: <category>: <reason>`` line on
stderr so callers can parse failures mechanically.
"""

from __future__ import annotations

import argparse
import logging
import sys
from importlib import resources
from pathlib import Path

from . import control, scenario_io, sim

PRESETS = ("fig1", "fig2", "fig3")


class CliError(Exception):
    def __init__(self, category: str, message: str):
        super().__init__(message)
        self.category = category


class _Parser(argparse.ArgumentParser):
    # Keep argparse's own failures on one machine-parsable line.
    def error(self, message):
        raise CliError("usage", message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="searchtrack", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p, needs_out: bool):
        p.add_argument("--scenario", type=Path, default=None, help="scenario file (defaults apply when omitted)")
        p.add_argument("--seed", type=int, default=None, help="override the scenario seed")
        p.add_argument(
            "--planner",
            choices=list(control.BACKENDS),
            default=None,
            help="override the planner backend",
        )
        p.add_argument(
            "--set",
            dest="overrides",
            action="append",
            default=[],
            metavar="SECTION.KEY=VALUE",
            help="override a scenario setting (repeatable)",
        )
        if needs_out:
            p.add_argument("--out", type=Path, required=True, help="output directory")

    run_p = sub.add_parser("run", help="run one episode and write CSV logs")
    add_common(run_p, needs_out=True)

    mc_p = sub.add_parser("mc", help="run a Monte Carlo batch and write aggregate tables")
    add_common(mc_p, needs_out=True)
    mc_p.add_argument("--trials", type=int, default=30, help="trials per configuration")
    mc_p.add_argument(
        "--agents",
        type=str,
        default=None,
        help="comma-separated agent counts, e.g. 2,3,4 (default: the scenario's count)",
    )
    mc_p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    val_p = sub.add_parser("validate", help="parse and validate a scenario file")
    add_common(val_p, needs_out=False)

    pre_p = sub.add_parser(
        "paper-scenario", help="write one of the bundled scenario presets"
    )
    pre_p.add_argument("name", choices=list(PRESETS))
    pre_p.add_argument("--out", type=Path, default=None, help="directory to write into (default: stdout)")

    return parser


def preset_text(name: str) -> str:
    """Text of a bundled scenario preset (fig1, fig2 or fig3)."""
    if name not in PRESETS:
        raise CliError("usage", f"unknown preset '{name}'")
    return (resources.files("searchtrack") / "scenarios" / f"{name}.scenario").read_text(
        encoding="utf-8"
    )


def _load(args) -> sim.Scenario:
    overrides = list(args.overrides)
    if args.seed is not None:
        overrides.append(f"run.seed={args.seed}")
    if args.planner is not None:
        overrides.append(f"plan.backend={args.planner}")
    if args.scenario is not None:
        return scenario_io.load_scenario(args.scenario, overrides)
    text = scenario_io.apply_overrides("", overrides) if overrides else ""
    if overrides:
        text = scenario_io._resolve_duplicates(text)
    return scenario_io.parse_scenario(text)


def _cmd_run(args) -> int:
    scenario = _load(args)
    episode = sim.run_episode(scenario)
    files = scenario_io.emit_episode(episode, args.out)
    print(f"wrote {len(files)} files to {args.out}")
    return 0


def _cmd_mc(args) -> int:
    scenario = _load(args)
    if args.trials < 1:
        raise CliError("usage", "--trials must be at least 1")
    counts = None
    if args.agents is not None:
        try:
            counts = [int(part) for part in args.agents.split(",") if part.strip()]
        except ValueError:
            raise CliError("usage", f"--agents expects integers, got '{args.agents}'") from None
        if not counts:
            raise CliError("usage", "--agents must name at least one count")
    aggregates = sim.run_monte_carlo(scenario, args.trials, counts, jobs=args.jobs)
    files = scenario_io.emit_monte_carlo(aggregates, scenario, args.out)
    print(f"wrote {len(files)} files to {args.out}")
    return 0


def _cmd_validate(args) -> int:
    scenario = _load(args)
    print(
        f"ok: {scenario.agent_count()} agents, {len(scenario.targets)} targets, "
        f"horizon {scenario.horizon}"
    )
    return 0


def _cmd_preset(args) -> int:
    text = preset_text(args.name)
    if args.out is None:
        sys.stdout.write(text)
    else:
        path = Path(args.out) / f"{args.name}.scenario"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(text, encoding="utf-8")
        print(f"wrote {path}")
    return 0


_COMMANDS = {
    "run": _cmd_run,
    "mc": _cmd_mc,
    "validate": _cmd_validate,
    "paper-scenario": _cmd_preset,
}


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        args = _build_parser().parse_args(argv)
        return _COMMANDS[args.command](args)
    except CliError as exc:
        print(f"error: {exc.category}: {exc}", file=sys.stderr)
        return 2
    except scenario_io.ScenarioParseError as exc:
        print(f"error: scenario-parse: {exc}", file=sys.stderr)
        return 2
    except sim.ScenarioError as exc:
        print(f"error: scenario-invalid: {exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
