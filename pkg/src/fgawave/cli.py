"""Command line entry point: ``fgawave <subcommand>``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import _accel
from .atoms import AtomSet
from .harness import (
    BUILTIN,
    ExperimentConfig,
    emit_report,
    eps_label,
    fga_decompose,
    fga_propagate,
    fga_reconstruct,
    number,
    restrict,
    run_comparison,
    run_reference,
    write_trajectories,
)

log = logging.getLogger("fgawave")


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--config", default=argparse.SUPPRESS,
                   help=f"YAML config path or a built-in name ({', '.join(BUILTIN)})")
    p.add_argument("--threads", type=int, default=argparse.SUPPRESS, help="worker threads for compiled kernels")
    p.add_argument("--out", default=argparse.SUPPRESS, help="output directory (default: out)")
    p.add_argument("--eps", action="append", default=argparse.SUPPRESS,
                   help="restrict to this epsilon (repeatable, e.g. 1/128)")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    ap = argparse.ArgumentParser(prog="fgawave", parents=[common],
                                 description="Frozen Gaussian approximation for high-frequency waves.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("decompose", parents=[common], help="initial atoms -> atoms0_<eps>.npz")
    p = sub.add_parser("propagate", parents=[common], help="atoms at T -> atomsT_<eps>.npz")
    p.add_argument("--trajectories", type=int, default=0, metavar="N",
                   help="also write trajectories.csv with N samples per atom")
    sub.add_parser("reconstruct", parents=[common], help="field_fga_<eps>.csv from propagated atoms")
    sub.add_parser("reference", parents=[common], help="reference field on the reconstruction grid")
    for name, text in (("compare", "run all methods against the reference"),
                       ("table1", "Example 1 error table"),
                       ("example2", "Example 2, single spreading beam"),
                       ("example3", "Example 3, 2D cusp caustic")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--methods", default=None, help="comma separated subset of fga,gbm")
        p.add_argument("--no-fields", action="store_true", help="skip the field CSVs")
    return ap


def _load_config(spec: str | None, command: str) -> ExperimentConfig:
    if command in BUILTIN and spec is None:
        return ExperimentConfig.builtin(command)
    if spec is None:
        raise SystemExit("--config is required for this subcommand")
    if spec in BUILTIN and not Path(spec).exists():
        return ExperimentConfig.builtin(spec)
    return ExperimentConfig.load(spec)


def _select(cfg: ExperimentConfig, eps_args) -> list[float]:
    if not eps_args:
        return list(cfg.epsilons)
    wanted = [number(e) for e in eps_args]
    for w in wanted:
        if w <= 0:
            raise SystemExit(f"epsilon must be positive, got {w}")
    return wanted


def _print_report(report) -> None:
    for row in report.rows:
        parts = [f"eps={row['label'].replace('_', '/')}"]
        for m, r in row["methods"].items():
            parts.append(f"{m}: linf={r['linf']:.3e} l2={r['l2']:.3e}")
        print("  ".join(parts))
    for m, fits in report.orders.items():
        txt = "  ".join(f"{n}={f['slope']:.3f}" + (" (poor fit)" if f["flagged"] else "") for n, f in fits.items())
        print(f"order {m}: {txt}")


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(message)s")
    _accel.set_threads(getattr(args, "threads", None))
    out = Path(getattr(args, "out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    cfg = _load_config(getattr(args, "config", None), args.command)
    epsilons = _select(cfg, getattr(args, "eps", None))

    if args.command == "decompose":
        census = {}
        for eps in epsilons:
            atoms = fga_decompose(cfg, eps)
            atoms.save(out / f"atoms0_{eps_label(eps)}.npz")
            census[eps_label(eps)] = atoms.census
        print(json.dumps(census, indent=2, sort_keys=True))
    elif args.command == "propagate":
        rows = []
        for eps in epsilons:
            src = out / f"atoms0_{eps_label(eps)}.npz"
            atoms = AtomSet.load(src) if src.exists() else fga_decompose(cfg, eps)
            moved, traj = fga_propagate(cfg, eps, atoms, samples=args.trajectories)
            moved.save(out / f"atomsT_{eps_label(eps)}.npz")
            print(f"eps={eps_label(eps)} alive={moved.census['alive']} dead={moved.census['dead']}")
            rows.extend(traj or [])
        if rows:
            print(write_trajectories(rows, cfg.problem.d, out / "trajectories.csv"))
    elif args.command == "reconstruct":
        for eps in epsilons:
            src = out / f"atomsT_{eps_label(eps)}.npz"
            if not src.exists():
                raise SystemExit(f"{src} not found; run 'propagate' first")
            f = fga_reconstruct(cfg, eps, AtomSet.load(src))
            print(f.write_csv(out / f"field_fga_{eps_label(eps)}.csv"))
    elif args.command == "reference":
        for eps in epsilons:
            f, info = run_reference(cfg, eps)
            f = restrict(f, cfg.grid(eps))
            print(f.write_csv(out / f"field_{info['method']}_{eps_label(eps)}.csv"))
    else:
        cfg.epsilons = epsilons
        methods = args.methods.split(",") if args.methods else None
        report = run_comparison(cfg, methods)
        emit_report(report, out, write_fields=not args.no_fields)
        _print_report(report)
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
