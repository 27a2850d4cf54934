"""Deterministic report emission: canonical JSON, flat CSV, optional MD.

Reports are the single serialization point of a run. Two runs with the same
config, data, and software version must produce byte-identical files, so
everything here is order-stable: JSON keys are sorted, row order is fixed
by the caller, floats go through Python's shortest-repr formatting, and no
wall-clock data enters a canonical file (timings land in a separate
timings.csv that is excluded from the determinism contract).
"""
from __future__ import annotations

import csv
import hashlib
import json
import os

import numpy as np

from . import __version__
from .errors import ShapeError


def jsonable(obj):
    """Recursively convert numpy containers/scalars to plain Python."""
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if obj is None or isinstance(obj, (bool, int, float, str)):
        return obj
    raise ShapeError(f"cannot serialize {type(obj).__name__} into a report")


def canonical_json(obj) -> str:
    return json.dumps(jsonable(obj), sort_keys=True, indent=2,
                      ensure_ascii=False) + "\n"


def config_hash(semantic: dict) -> str:
    """sha256 over the canonical JSON of the semantic config fields."""
    blob = json.dumps(jsonable(semantic), sort_keys=True,
                      separators=(",", ":"), ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def report_header(phase: str, cfg_hash: str, seed: int,
                  provenance: str) -> dict:
    return {
        "phase": phase,
        "version": __version__,
        "config_hash": cfg_hash,
        "seed": seed,
        "dataset_provenance": provenance,
    }


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list, tuple)):
        return json.dumps(jsonable(v), sort_keys=True, separators=(",", ":"))
    return str(v)


def write_report(out_dir: str | os.PathLike, name: str, report: dict,
                 columns: list[str] | None = None,
                 markdown: bool = False) -> dict:
    """Write <name>.json (always) plus <name>.csv / <name>.md for the rows.

    ``columns`` fixes the CSV/MD column order; it defaults to the sorted
    union of row keys. Returns the paths written.
    """
    os.makedirs(out_dir, exist_ok=True)
    paths = {}
    jpath = os.path.join(out_dir, f"{name}.json")
    with open(jpath, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(canonical_json(report))
    paths["json"] = jpath

    rows = report.get("rows", [])
    if rows:
        if columns is None:
            keys: set[str] = set()
            for r in rows:
                keys.update(r)
            columns = sorted(keys)
        cpath = os.path.join(out_dir, f"{name}.csv")
        with open(cpath, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(columns)
            for r in rows:
                writer.writerow([_cell(jsonable(r.get(c))) for c in columns])
        paths["csv"] = cpath
        if markdown:
            mpath = os.path.join(out_dir, f"{name}.md")
            with open(mpath, "w", encoding="utf-8", newline="\n") as fh:
                fh.write(f"# {name}\n\n")
                meta = report.get("meta", {})
                for k in sorted(meta):
                    fh.write(f"- {k}: {meta[k]}\n")
                fh.write("\n| " + " | ".join(columns) + " |\n")
                fh.write("|" + "|".join(" --- " for _ in columns) + "|\n")
                for r in rows:
                    cells = [_cell(jsonable(r.get(c))) for c in columns]
                    fh.write("| " + " | ".join(cells) + " |\n")
            paths["md"] = mpath
    return paths


def write_timings(out_dir: str | os.PathLike, name: str,
                  timings: list[tuple[str, float]]) -> str:
    """Wall-clock log, one (unit, seconds) row; not a canonical output."""
    os.makedirs(out_dir, exist_ok=True)
    path = os.path.join(out_dir, f"{name}.timings.csv")
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["unit", "seconds"])
        for unit, seconds in timings:
            writer.writerow([unit, f"{seconds:.6f}"])
    return path


def read_report(out_dir: str | os.PathLike, name: str) -> dict | None:
    """Load a previously written JSON report; None when absent."""
    path = os.path.join(out_dir, f"{name}.json")
    if not os.path.exists(path):
        return None
    with open(path, "r", encoding="utf-8") as fh:
        return json.load(fh)
