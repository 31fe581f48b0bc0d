"""Render EvalReport rows as per-model tables (csv or markdown)."""
from __future__ import annotations

import csv
import io
import math

from .experiment import BASELINE, VARIANTS
from .size import BUDGET_32K, BUDGET_64K, KB

GROUPS = ("Exceed 64 KB", "Under 64 KB", "Under 32 KB")
FAMILY_ORDER = {"mdcsa": 0, "mamba": 1}
_LABEL = {"baseline": "Baseline", "static_quant": "Static", "dynamic_quant": "Dynamic",
          "distill": "KD", "distill_static_quant": "KD+Static"}


def size_kb(nbytes):
    return math.ceil(nbytes / KB)


def _tightest(nbytes):
    if nbytes <= BUDGET_32K:
        return "Under 32 KB"
    if nbytes <= BUDGET_64K:
        return "Under 64 KB"
    return None


def budget_group(model_rows):
    """Budget section for one model's rows.

    The baseline's class when the baseline fits 64 KB; otherwise the
    tightest class reached by any compressed variant, else "Exceed 64 KB".
    """
    ok = [r for r in model_rows if not r.error]
    base = [r for r in ok if r.variant == BASELINE]
    if base and _tightest(base[0].serialized_bytes):
        return _tightest(base[0].serialized_bytes)
    fits = [_tightest(r.serialized_bytes) for r in ok]
    for g in ("Under 32 KB", "Under 64 KB"):
        if g in fits:
            return g
    return "Exceed 64 KB"


def _pivot(rows):
    if not rows:
        raise ValueError("no rows to report")
    models = {}
    for r in rows:
        models.setdefault(r.model, []).append(r)
    variants = [v for v in VARIANTS if any(r.variant == v for r in rows)]
    table = []
    for name, mrows in models.items():
        first = mrows[0]
        params = max(r.param_count for r in mrows)
        entry = {"group": budget_group(mrows), "model": name, "params": params,
                 "_key": (GROUPS.index(budget_group(mrows)), FAMILY_ORDER.get(first.family, 9),
                          -first.hidden, first.layers, name)}
        by_var = {r.variant: r for r in mrows}
        for v in variants:
            r = by_var.get(v)
            ok = r is not None and not r.error
            entry[v] = (f"{100 * r.macro_f1:.2f}" if ok else "",
                        f"{100 * r.accuracy:.2f}" if ok else "",
                        str(size_kb(r.serialized_bytes)) if ok else ("ERR" if r else ""))
        table.append(entry)
    table.sort(key=lambda e: e["_key"])
    return table, variants


def _header(variants):
    cols = ["model", "params"]
    for v in variants:
        lab = _LABEL[v]
        cols += [f"{lab} F1(%)", f"{lab} Acc(%)", f"{lab} Size(KB)"]
    return cols


def _cells(entry, variants):
    out = [entry["model"], str(entry["params"])]
    for v in variants:
        out += list(entry[v])
    return out


def emit_report(rows, fmt="md"):
    """Per-model pivot: F1(%), Acc(%) and Size(KB, rounded up) per variant.

    Models are grouped by budget class, then ordered mdcsa before mamba and
    by descending hidden size.
    """
    table, variants = _pivot(rows)
    header = _header(variants)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["group"] + header)
        for e in table:
            w.writerow([e["group"]] + _cells(e, variants))
        return buf.getvalue()
    if fmt not in ("md", "markdown"):
        raise ValueError(f"unknown report format {fmt!r}")
    lines = []
    for g in GROUPS:
        members = [e for e in table if e["group"] == g]
        if not members:
            continue
        if lines:
            lines.append("")
        lines += [f"### {g}", "", "| " + " | ".join(header) + " |",
                  "|" + "|".join("---" for _ in header) + "|"]
        lines += ["| " + " | ".join(_cells(e, variants)) + " |" for e in members]
    return "\n".join(lines) + "\n"


ROW_FIELDS = ("model", "family", "hidden", "layers", "variant", "param_count", "serialized_bytes",
              "macro_f1", "accuracy", "budget_64k", "budget_32k", "seed", "dataset_id",
              "teacher", "tau", "alpha", "pre_quant_f1", "pre_quant_accuracy", "error")


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, float):
        return "" if math.isnan(v) else f"{v:.6f}"
    return str(v)


def emit_rows(rows, fmt="csv"):
    """One line per EvalReport with every field (the raw form of a report)."""
    if not rows:
        raise ValueError("no rows to report")
    data = [[_fmt(getattr(r, f)) for f in ROW_FIELDS] for r in rows]
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(ROW_FIELDS)
        w.writerows(data)
        return buf.getvalue()
    if fmt not in ("md", "markdown"):
        raise ValueError(f"unknown report format {fmt!r}")
    lines = ["| " + " | ".join(ROW_FIELDS) + " |", "|" + "|".join("---" for _ in ROW_FIELDS) + "|"]
    lines += ["| " + " | ".join(c.replace("|", "\\|") for c in row) + " |" for row in data]
    return "\n".join(lines) + "\n"
