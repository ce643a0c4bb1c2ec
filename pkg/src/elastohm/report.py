"""Tables written by the command-line front end.

Every table is a list of flat dicts with a fixed column order.  They are
written as CSV and as JSON; :func:`read_csv` and :func:`read_json` read them
back with the numeric columns converted.
"""
from __future__ import annotations

import csv
import io
import json
from pathlib import Path
from typing import Iterable, Union

import numpy as np

from .hmatrix import HMatrix

__all__ = ["MB", "storage_report", "table_csv", "table_json", "read_csv", "read_json", "write_table"]

MB = float(2**20)


def storage_report(leaves: Iterable[HMatrix], mode: str = "current") -> list[dict]:
    """One row per leaf: low-rank, near-field and total storage in MB and the share of the dense matrix.

    Dense storage is ``8 * rows * cols`` bytes.
    """
    rows = []
    for h in leaves:
        total = h.storage_bytes(mode)
        near = sum(8 * a.size for a in h.dense.values())
        dense = h.dense_bytes()
        rows.append({
            "operator": h.name,
            "rows": h.shape[0],
            "cols": h.shape[1],
            "lowrank_mb": round((total - near) / MB, 6),
            "near_mb": round(near / MB, 6),
            "storage_mb": round(total / MB, 6),
            "dense_mb": round(dense / MB, 6),
            "percent_of_dense": round(100.0 * total / dense, 4),
        })
    return rows


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6e}"
    if isinstance(v, np.integer):
        return int(v)
    return v


def table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.DictWriter(buf, fieldnames=list(rows[0]), lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(v) for k, v in r.items()})
    return buf.getvalue()


def _plain(v):
    if isinstance(v, np.floating):
        return float(v)
    if isinstance(v, np.integer):
        return int(v)
    if isinstance(v, np.ndarray):
        return v.tolist()
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


def table_json(obj) -> str:
    return json.dumps(_plain(obj), indent=1, sort_keys=False) + "\n"


def _number(s: str):
    for kind in (int, float):
        try:
            return kind(s)
        except ValueError:
            pass
    return s


def read_csv(text: str) -> list[dict]:
    return [{k: _number(v) for k, v in r.items()} for r in csv.DictReader(io.StringIO(text))]


def read_json(text: str):
    return json.loads(text)


def write_table(out_dir: Union[str, Path], stem: str, rows: list[dict]) -> list[Path]:
    """Write ``stem.csv`` and ``stem.json``; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = [out / f"{stem}.csv", out / f"{stem}.json"]
    paths[0].write_text(table_csv(rows))
    paths[1].write_text(table_json(rows))
    return paths
