"""Command-line drivers: ``fracplap solve|capacity|perturb --config FILE``.

Exit status: 0 success, 1 invalid input, 2 a solve did not converge,
3 file-system error.  Artifacts are written only on success.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .capacity import relative_capacity
from .config import ConfigError, RunConfig, parse_config
from .geometry import DomainMask, rasterize
from .kernel import DiscreteField, exterior_weights
from .lab import convergence_table, run_experiment, run_summary
from .solver import SolverError, solve_dirichlet

log = logging.getLogger("fracplap")

EXIT_OK, EXIT_INVALID, EXIT_NONCONVERGED, EXIT_IO = 0, 1, 2, 3


class NotConverged(RuntimeError):
    pass


def field_to_csv(u: DiscreteField, value_name: str = "u") -> str:
    """Columns ``node, x, [y], <value_name>`` for every grid node."""
    grid = u.grid
    xyz = grid.coordinates()
    header = ["node", "x", "y"][: grid.dimension + 1] + [value_name]
    lines = [",".join(header)]
    for i in range(grid.size):
        coords = ",".join(f"{v:.12g}" for v in xyz[i])
        lines.append(f"{i},{coords},{u.values[i]:.17g}")
    return "\n".join(lines) + "\n"


def _initial(cfg: RunConfig, mask: DomainMask, seed: int | None):
    if cfg["solver"]["initialization"] != "random":
        return None
    return np.random.default_rng(seed).uniform(0.0, 1.0, mask.count)


def cmd_solve(cfg: RunConfig, seed: int | None, deterministic: bool | None) -> dict[str, str]:
    if not cfg.has("domain"):
        raise ValueError("solve needs a [domain] section")
    grid, params = cfg.grid(), cfg.params()
    mask = rasterize(grid, cfg["domain"]["shape"])
    report = solve_dirichlet(mask, cfg.source(grid), params, cfg.solver_options(deterministic),
                             initial=_initial(cfg, mask, seed))
    if not report.converged:
        raise NotConverged(f"Dirichlet solve: {report.message}")
    return {"solution.csv": field_to_csv(report.solution), "summary.txt": report.summary()}


def cmd_capacity(cfg: RunConfig, seed: int | None, deterministic: bool | None) -> dict[str, str]:
    if not cfg.has("capacity"):
        raise ValueError("capacity needs a [capacity] section")
    grid, params = cfg.grid(), cfg.params()
    section = cfg["capacity"]
    E = DomainMask.empty(grid) if section["set"] == "empty" else rasterize(grid, section["set"], allow_empty=True)
    D = grid.interior() if section["domain"] == "box" else rasterize(grid, section["domain"])
    report = relative_capacity(E, D, params, cfg.solver_options(deterministic))
    if not report.converged:
        raise NotConverged(f"capacity solve: {report.message}")
    return {"potential.csv": field_to_csv(report.potential, "potential"), "summary.txt": report.summary()}


def cmd_perturb(cfg: RunConfig, seed: int | None, deterministic: bool | None) -> dict[str, str]:
    if not cfg.has("sequence"):
        raise ValueError("perturb needs a [sequence] section")
    grid, params = cfg.grid(), cfg.params()
    run = run_experiment(cfg.sequence_spec(), cfg.source(grid), params,
                         cfg.experiment_options(seed, deterministic))
    bad = [r.k for r in run.records if r.step_status != "ok"]
    if bad:
        raise NotConverged(f"sub-solves did not converge at steps {bad}")
    return {"convergence.csv": convergence_table(run), "summary.txt": run_summary(run)}


COMMANDS = {"solve": cmd_solve, "capacity": cmd_capacity, "perturb": cmd_perturb}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fracplap", description="Fractional p-Laplacian experiments on grids.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("solve", "solve the Dirichlet problem on [domain]"),
        ("capacity", "relative capacity of [capacity] set inside [capacity] domain"),
        ("perturb", "run a domain-perturbation sequence"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, type=Path, help="run configuration file")
        p.add_argument("--out", type=Path, default=None, help="output directory (default: [output] dir)")
        p.add_argument("--deterministic", action="store_true", default=None,
                       help="fixed-order reductions for bit-identical output")
        p.add_argument("--seed", type=int, default=None, help="random seed (unsigned 64-bit)")
        p.add_argument("--quiet", action="store_true", help="only report errors")
    return parser


def _write(out: Path, artifacts: dict[str, str]) -> None:
    out.mkdir(parents=True, exist_ok=True)
    for name, text in artifacts.items():
        (out / name).write_text(text, encoding="utf-8")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.ERROR if args.quiet else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    if args.seed is not None and not 0 <= args.seed < 2**64:
        print(f"error: --seed must be an unsigned 64-bit integer, got {args.seed}", file=sys.stderr)
        return EXIT_INVALID
    try:
        text = args.config.read_text(encoding="utf-8")
    except (OSError, UnicodeDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_IO
    try:
        cfg = parse_config(text)
        seed = args.seed if args.seed is not None else cfg["output"]["seed"]
        artifacts = COMMANDS[args.command](cfg, seed, args.deterministic)
    except ConfigError as exc:
        for line, message in exc.errors:
            where = f"{args.config}:{line}: " if line else f"{args.config}: "
            print(f"error: {where}{message}", file=sys.stderr)
        return EXIT_INVALID
    except NotConverged as exc:
        print(f"error: no convergence: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (ValueError, SolverError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    out = args.out if args.out is not None else Path(cfg["output"]["dir"])
    try:
        _write(out, artifacts)
    except OSError as exc:
        print(f"error: cannot write output: {exc}", file=sys.stderr)
        return EXIT_IO
    if not args.quiet:
        print(artifacts["summary.txt"], end="")
        print(f"wrote {', '.join(sorted(artifacts))} to {out}")
    return EXIT_OK
