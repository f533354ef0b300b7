"""Markdown rendering of evaluation and runtime results."""

from __future__ import annotations

from collections import defaultdict
from typing import Sequence

import numpy as np

from .metrics import APDR_ROW, EvalRecord

# column -> True when larger is better
_DIRECTION = {"Acc": True, "Aua": True, "Asr": False, "AvgQ": True, "Pdr": False, "Apdr": False}


def _median(vals):
    vals = [v for v in vals if v is not None]
    return float(np.median(vals)) if vals else None


def _cell(v, bold: bool) -> str:
    if v is None:
        return "-"
    s = f"{v:.2f}"
    return f"**{s}**" if bold else s


def aggregate(rows: Sequence[EvalRecord]) -> dict:
    """Median over seeds: ``{dataset: {(model, defence): {attack: {metric: value}}}}``."""
    acc = defaultdict(lambda: defaultdict(lambda: defaultdict(lambda: defaultdict(list))))
    for r in rows:
        cell = acc[r.dataset][(r.model, r.defence)][r.attack]
        for name in ("acc", "aua", "asr", "avgq", "pdr"):
            cell[name].append(getattr(r, name))
    return {ds: {k: {a: {m: _median(v) for m, v in metrics_.items()} for a, metrics_ in attacks.items()}
                 for k, attacks in groups.items()} for ds, groups in acc.items()}


def markdown_report(rows: Sequence[EvalRecord]) -> str:
    """One table per dataset with defence rows; best value per column in bold."""
    agg = aggregate(rows)
    out = []
    for ds in sorted(agg):
        groups = agg[ds]
        attacks = []
        for g in groups.values():
            for a in g:
                if a != APDR_ROW and a not in attacks:
                    attacks.append(a)
        columns = [("Acc", None, "acc")]
        for a in attacks:
            columns += [("Aua", a, "aua"), ("Asr", a, "asr"), ("AvgQ", a, "avgq"), ("Pdr", a, "pdr")]
        columns.append(("Apdr", APDR_ROW, "pdr"))

        table = []
        for (model, defence), g in groups.items():
            values = []
            for col, attack, key in columns:
                if attack is None:
                    values.append(_median([m["acc"] for m in g.values()]))
                else:
                    values.append(g.get(attack, {}).get(key))
            table.append((model, defence, values))

        best = []
        for j, (col, _, _) in enumerate(columns):
            vals = [v[j] for _, _, v in table if v[j] is not None]
            best.append((max if _DIRECTION[col] else min)(vals) if vals else None)

        header = ["Model", "Defence"] + [c if a in (None, APDR_ROW) else f"{a} {c}" for c, a, _ in columns]
        out.append(f"## {ds}\n")
        out.append("| " + " | ".join(header) + " |")
        out.append("|" + "|".join(["---"] * 2 + ["---:"] * len(columns)) + "|")
        for model, defence, values in table:
            cells = [_cell(v, v is not None and best[j] is not None and round(v, 2) == round(best[j], 2))
                     for j, v in enumerate(values)]
            out.append("| " + " | ".join([model, defence] + cells) + " |")
        out.append("")
    return "\n".join(out) + "\n"


def runtime_table(rows: Sequence[dict]) -> str:
    """Multipliers rendered as ``x6.3``; the baseline row reads ``1``."""
    lines = ["| Defence | Runtime |", "|---|---:|"]
    for r in rows:
        m = r["multiplier"]
        lines.append(f"| {r['defence']} | {'1' if r['defence'] == 'Baseline' else f'x{m:.1f}'} |")
    return "\n".join(lines) + "\n"
