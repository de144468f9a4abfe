"""Deterministic JSON and CSV output for pipeline reports."""
from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import numpy as np


def to_plain(obj):
    """Plain JSON types; non-finite floats become the strings "inf", "-inf", "nan"."""
    if isinstance(obj, dict):
        return {str(k): to_plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, set, frozenset)):
        seq = sorted(obj) if isinstance(obj, (set, frozenset)) else obj
        return [to_plain(v) for v in seq]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    if isinstance(obj, complex):
        return [to_plain(obj.real), to_plain(obj.imag)]
    if isinstance(obj, np.ndarray):
        return to_plain(obj.tolist())
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def to_json(report) -> str:
    d = report.to_dict() if hasattr(report, "to_dict") else report
    return json.dumps(to_plain(d), sort_keys=True, indent=2, allow_nan=False) + "\n"


def _csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow(["" if v is None else (to_plain(v) if not isinstance(v, str) else v) for v in r])
    return buf.getvalue()


def csv_tables(report) -> dict:
    """name -> CSV text, one table per series."""
    d = to_plain(report.to_dict() if hasattr(report, "to_dict") else report)
    stages = d.get("stages", {})
    out = {}
    rows = (d.get("verdict") or {}).get("rows", [])
    out["gap_sweep.csv"] = _csv(["s", "gap", "bound", "multiplicity", "E", "status"],
                                [[r["s"], r["gap"], r["bound"], r["multiplicity"], r["E"], r["status"]]
                                 for r in rows])
    lg = stages.get("model", {}).get("local_gaps", {})
    per = lg.get("per_scale", {})
    out["local_gaps.csv"] = _csv(["n", "gamma", "required", "passed"],
                                 [[n, per[n].get("gamma"), per[n].get("required"), per[n].get("passed")]
                                  for n in sorted(per, key=int)])
    lt = stages.get("ltqo", {})
    tab = lt.get("table", {}) or {}
    lower = tab.get("lower_by_distance", {})
    upper = tab.get("upper_by_distance", {})
    env = ((lt.get("fit") or {}).get("envelope")) or {}
    rs = sorted(set(lower) | set(upper), key=int)
    out["ltqo_G0.csv"] = _csv(["r", "lower", "upper", "envelope"],
                              [[r, lower.get(r), upper.get(r), env.get(r)] for r in rs])
    dec = stages.get("decomposition", {})
    G = dec.get("G", {}) or {}
    G2 = dec.get("G2", {}) or {}
    terms = (stages.get("beta", {}).get("beta") or {}).get("terms", {})
    ns = sorted(set(G) | set(G2), key=int)
    out["envelope_G.csv"] = _csv(["n", "G", "G2", "beta_term"],
                                 [[n, G.get(n), G2.get(n), terms.get(n)] for n in ns])
    out["residuals.csv"] = _csv(["name", "value", "tolerance", "passed"],
                                [[r["name"], r["value"], r["tolerance"], r["passed"]]
                                 for r in d.get("residuals", [])])
    return out


def emit(report, out_dir, fmt: str = "json") -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if fmt == "json":
        p = out / "report.json"
        p.write_text(to_json(report), encoding="utf-8")
        written.append(p)
    elif fmt == "csv":
        for name, text in csv_tables(report).items():
            p = out / name
            p.write_text(text, encoding="utf-8")
            written.append(p)
    else:
        raise ValueError(f"unknown format {fmt!r}")
    return written
