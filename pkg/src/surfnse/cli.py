"""Command line entry point: ``surfnse {convergence,penalty-sweep,energy}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys

from .experiments import ExperimentConfig, run


def int_range(text: str) -> list[int]:
    """Parse '1..3', '0,2,4' or '3'."""
    out = []
    for part in text.split(","):
        part = part.strip()
        if ".." in part:
            lo, hi = part.split("..")
            out += list(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return out


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--nu", type=float, default=1.0)
    p.add_argument("--tau", type=float, help="literal penalty value (overrides --tau-rule)")
    p.add_argument("--tau-rule", default="h-2", choices=["h-2"])
    p.add_argument("--tmax", dest="t_end", type=float, default=1.0)
    p.add_argument("--dt", type=float, help="time step (default 2^(1-level)/10)")
    p.add_argument("--form", default="convective", choices=["convective", "rotational", "none"])
    p.add_argument("--out", default=".")
    p.add_argument("--quad-degree", type=int, default=4)
    p.add_argument("--volume-degree", type=int, default=2)
    p.add_argument("--backend", default="direct", choices=["direct", "gmres", "auto"])
    p.add_argument("--vtk", action="store_true", help="write legacy VTK snapshots of the surface")
    p.add_argument("--allow-level5", action="store_true")
    p.add_argument("--config", help="JSON file with configuration keys (CLI flags take precedence)")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="surfnse", description="Trace FEM for surface Navier-Stokes on the unit sphere")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("convergence", help="error norms and rates across refinement levels")
    p.add_argument("--levels", type=int_range, default=[1, 2, 3])
    p.add_argument("--case", default="exact1", choices=["exact1", "sol2a", "sol2b"])
    _common(p)

    p = sub.add_parser("penalty-sweep", help="errors for tau = 2^k at a fixed level")
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--case", default="sol2b", choices=["exact1", "sol2a", "sol2b"])
    p.add_argument("--tau-exponents", type=int_range, default=list(range(17)))
    _common(p)

    p = sub.add_parser("energy", help="kinetic energy time series")
    p.add_argument("--level", type=int, default=3)
    p.add_argument("--case", default="killing", choices=["killing", "sol2a"])
    _common(p)
    return parser


def config_from_args(args: argparse.Namespace, argv: list[str]) -> ExperimentConfig:
    data = {}
    if args.config:
        with open(args.config, encoding="utf-8") as fh:
            data = json.load(fh)
        data.pop("command", None)
    given = {a.split("=")[0] for a in argv if a.startswith("--")}

    def take(key, flag, value):
        if flag in given or key not in data:
            data[key] = value

    levels = args.levels if args.command == "convergence" else [args.level]
    take("levels", "--levels" if args.command == "convergence" else "--level", levels)
    for key in ("nu", "tau", "tau_rule", "t_end", "dt", "form", "out", "quad_degree",
                "volume_degree", "backend", "vtk", "allow_level5", "case"):
        flag = {"t_end": "--tmax"}.get(key, "--" + key.replace("_", "-"))
        take(key, flag, getattr(args, key))
    if args.command == "penalty-sweep":
        take("tau_exponents", "--tau-exponents", args.tau_exponents)
    return ExperimentConfig.from_dict({"command": args.command, **data})


def main(argv: list[str] | None = None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        config = config_from_args(args, argv)
        path, rows = run(config)
    except (ValueError, RuntimeError) as exc:
        print(f"surfnse: error: {exc}", file=sys.stderr)
        return 2
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
