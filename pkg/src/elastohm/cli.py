"""``elastohm`` command-line front end.

Subcommands:

``rhs``     right-hand side by fixed-accuracy ACA and by AMVM
``solve``   full-ACA solve next to the block-adaptive solve
``verify``  invariant suites of all modules
``bench``   storage and wall-time ratios of the adaptive methods

Tables go to ``--out`` as CSV and JSON, plus a plain-text ``summary.txt``.
Timings are written separately to ``timings.json`` because they are the only
part of the output that changes between identical runs.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__

__all__ = ["main", "build_parser"]

logger = logging.getLogger("elastohm")


def _limit_threads(n: Optional[int]) -> None:
    if not n:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS", "NUMBA_NUM_THREADS"):
        os.environ[var] = str(n)
    try:
        import numba

        numba.set_num_threads(min(n, numba.config.NUMBA_NUM_THREADS))
    except (ImportError, ValueError):
        pass


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="elastohm", description="Adaptive H-matrix BEM for linear elastostatics")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' configuration file")
    common.add_argument("--out", help="output directory (default: config key 'out')")
    common.add_argument("--threads", type=int, help="cap on worker threads")
    common.add_argument("--seed", type=int, help="random seed (default: config key 'seed')")
    common.add_argument("--mesh", help="shipped mesh name or OFF path (overrides the config)")
    common.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name, text in (("rhs", "fixed ACA and AMVM right-hand sides"), ("solve", "full ACA and BACA solves")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--oracle", action="store_true", help="add dense-truth errors (small meshes only)")
    v = sub.add_parser("verify", parents=[common], help="run the invariant suites")
    v.add_argument("--suite", action="append", help="run only this suite (repeatable)")
    b = sub.add_parser("bench", parents=[common], help="storage and wall-time ratios")
    b.add_argument("--beam-config", help="configuration of the wall-time run (default: shipped beam)")
    b.add_argument("--skip-beam", action="store_true", help="only the storage ratio")
    sub.add_parser("config", parents=[common], help="print the effective configuration")
    return p


def _config(args):
    from .config import load_config

    return load_config(args.config, out=args.out, seed=args.seed, mesh=args.mesh)


def _write_result(out: Path, res, summary_lines: list[str]) -> None:
    from .report import write_table

    out.mkdir(parents=True, exist_ok=True)
    for name, rows in res.tables.items():
        write_table(out, name, rows)
    for name, arr in res.arrays.items():
        np.save(out / f"{name}.npy", arr)
    (out / "timings.json").write_text(json.dumps({k: round(v, 4) for k, v in res.timings.items()}, indent=1) + "\n")
    (out / "summary.txt").write_text("\n".join(summary_lines) + "\n")


def _table_text(rows: list[dict]) -> list[str]:
    if not rows:
        return []
    cols = list(rows[0])
    cells = [[str(c) for c in cols]] + [[f"{r[c]:.4g}" if isinstance(r[c], float) else str(r[c]) for c in cols]
                                        for r in rows]
    width = [max(len(row[i]) for row in cells) for i in range(len(cols))]
    return ["  ".join(s.rjust(w) for s, w in zip(row, width)) for row in cells]


def _summary(title: str, res) -> list[str]:
    lines = [title]
    for name, rows in res.tables.items():
        lines += ["", f"[{name}]"] + _table_text(rows)
    lines += [""] + [f"note: {n}" for n in res.notes]
    return lines


def _cmd_rhs(args, cfg) -> int:
    from .bench import run_rhs

    res = run_rhs(cfg, oracle=args.oracle)
    lines = _summary(f"rhs on {cfg.mesh}", res)
    _write_result(Path(cfg.out), res, lines)
    print("\n".join(lines))
    return 0 if res.ok else 1


def _cmd_solve(args, cfg) -> int:
    from .bench import run_solve

    res = run_solve(cfg, oracle=args.oracle)
    lines = _summary(f"solve on {cfg.mesh}", res)
    lines.append(f"time: full ACA {res.timings['aca_total']:.2f} s, BACA {res.timings['baca_total']:.2f} s")
    _write_result(Path(cfg.out), res, lines)
    print("\n".join(lines))
    return 0 if res.ok else 1


def _cmd_verify(args, cfg) -> int:
    from .verify import run_verify

    results = run_verify(cfg, args.suite)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    report = [{"suite": r.suite, "status": r.status, "detail": r.detail} for r in results]
    (out / "verify.json").write_text(json.dumps(report, indent=1) + "\n")
    for r in results:
        print(f"{r.status.upper():4s}  {r.suite:20s}  {r.detail}")
    failed = [r for r in results if r.status == "fail"]
    return 1 if failed else 0


def _cmd_bench(args, cfg) -> int:
    from .bench import run_ratios
    from .config import load_config

    beam = None
    if not args.skip_beam:
        beam = load_config(args.beam_config) if args.beam_config else replace(
            cfg, mesh="double_t_beam", labeling="x1 == 0", load="beam")
    res = run_ratios(cfg, beam)
    lines = _summary("efficiency ratios (adaptive / full ACA)", res)
    _write_result(Path(cfg.out), res, lines)
    print("\n".join(lines))
    return 0


COMMANDS = {"rhs": _cmd_rhs, "solve": _cmd_solve, "verify": _cmd_verify, "bench": _cmd_bench}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    _limit_threads(args.threads)
    try:
        cfg = _config(args)
        if args.command == "config":
            print(cfg.to_text(), end="")
            return 0
        return COMMANDS[args.command](args, cfg)
    except (ValueError, FileNotFoundError) as exc:  # config, mesh and data errors
        print(f"elastohm: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
