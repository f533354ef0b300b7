"""Robustness metrics: Acc, Aua, Asr, AvgQ, Pdr and Apdr.

Protocol: every test example is first classified cleanly. Clean-incorrect
examples are not attacked; they count as errors under attack and are left
out of the Asr and AvgQ denominators. Under this protocol Pdr equals Asr.
All percentages are on a 0-100 scale.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

CSV_FIELDS = ("dataset", "model", "defence", "attack", "acc", "aua", "asr", "avgq", "pdr")
APDR_ROW = "apdr"


class SubsampleError(ValueError):
    """Metrics requested on a subsampled test set without opting in."""


@dataclass(frozen=True)
class AttackRecord:
    label: int
    clean_pred: int
    success: bool
    queries: int = 0

    def __post_init__(self):
        if self.success and self.clean_pred != self.label:
            raise ValueError("a clean-incorrect example cannot be successfully attacked")

    @property
    def clean_correct(self) -> bool:
        return self.clean_pred == self.label


@dataclass
class AttackedDataset:
    """Attack outcomes over a test set; ``subsampled`` marks a partial test set."""

    records: list[AttackRecord]
    subsampled: bool = False

    def __iter__(self):
        return iter(self.records)

    def __len__(self):
        return len(self.records)


def _records(records, allow_subsample: bool) -> list[AttackRecord]:
    if isinstance(records, AttackedDataset):
        if records.subsampled and not allow_subsample:
            raise SubsampleError("metrics are defined on the full test set; pass allow_subsample=True")
        records = records.records
    records = list(records)
    if not records:
        raise ValueError("no records")
    return records


def clean_accuracy(records, allow_subsample: bool = False) -> float:
    recs = _records(records, allow_subsample)
    return 100.0 * sum(r.clean_correct for r in recs) / len(recs)


def accuracy_under_attack(records, allow_subsample: bool = False) -> float:
    recs = _records(records, allow_subsample)
    return 100.0 * sum(r.clean_correct and not r.success for r in recs) / len(recs)


def attack_success_rate(records, allow_subsample: bool = False) -> float:
    recs = _records(records, allow_subsample)
    attacked = [r for r in recs if r.clean_correct]
    if not attacked:
        raise ValueError("attack success rate undefined: no clean-correct examples")
    return 100.0 * sum(r.success for r in attacked) / len(attacked)


def avg_queries(records, allow_subsample: bool = False) -> float | None:
    """Mean queries over successful attacks; ``None`` when nothing succeeded."""
    wins = [r.queries for r in _records(records, allow_subsample) if r.success]
    return sum(wins) / len(wins) if wins else None


def pdr(acc: float, aua: float) -> float:
    if acc <= 0:
        raise ValueError("performance drop rate needs acc > 0")
    return 100.0 * (1.0 - aua / acc)


def pdr_from_records(records, allow_subsample: bool = False) -> float:
    """Indicator-sum form: 1 - #correct after attack / #correct before."""
    recs = _records(records, allow_subsample)
    before = sum(r.clean_correct for r in recs)
    after = sum(r.clean_correct and not r.success for r in recs)
    if before == 0:
        raise ValueError("performance drop rate undefined: no clean-correct examples")
    return 100.0 * (1.0 - after / before)


def apdr(pdrs: Sequence[float]) -> float:
    pdrs = list(pdrs)
    if not pdrs:
        raise ValueError("apdr of an empty list")
    return sum(pdrs) / len(pdrs)


@dataclass
class EvalRecord:
    dataset: str
    model: str
    defence: str
    attack: str
    acc: float
    aua: float | None = None
    asr: float | None = None
    avgq: float | None = None
    pdr: float | None = None

    def __post_init__(self):
        for name in ("acc", "aua", "asr", "pdr"):
            v = getattr(self, name)
            if v is not None and not 0 <= v <= 100 + 1e-9:
                raise ValueError(f"{name}={v} outside [0, 100]")
        if self.aua is not None and self.aua > self.acc + 1e-9:
            raise ValueError("aua cannot exceed acc")

    @property
    def is_summary(self) -> bool:
        return self.attack == APDR_ROW


def evaluate(records, dataset: str, model: str, defence: str, attack: str,
             allow_subsample: bool = False) -> EvalRecord:
    recs = _records(records, allow_subsample)
    acc = clean_accuracy(recs)
    aua = accuracy_under_attack(recs)
    asr = attack_success_rate(recs) if any(r.clean_correct for r in recs) else 0.0
    return EvalRecord(dataset, model, defence, attack, acc, aua, asr, avg_queries(recs),
                      pdr(acc, aua) if acc > 0 else 0.0)


def summary_row(rows: Sequence[EvalRecord]) -> EvalRecord:
    """The Apdr row for one (dataset, model, defence) group; Apdr sits in ``pdr``."""
    first = rows[0]
    return EvalRecord(first.dataset, first.model, first.defence, APDR_ROW, first.acc,
                      pdr=apdr([r.pdr for r in rows]))


def with_summaries(rows: Iterable[EvalRecord]) -> list[EvalRecord]:
    groups: dict[tuple, list[EvalRecord]] = {}
    for r in rows:
        if not r.is_summary:
            groups.setdefault((r.dataset, r.model, r.defence), []).append(r)
    out = []
    for group in groups.values():
        out.extend(group)
        out.append(summary_row(group))
    return out


def _fmt(v) -> str:
    return "" if v is None else repr(float(v))


def write_csv(path, rows: Iterable[EvalRecord]) -> None:
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in rows:
            w.writerow([r.dataset, r.model, r.defence, r.attack, _fmt(r.acc), _fmt(r.aua),
                        _fmt(r.asr), _fmt(r.avgq), _fmt(r.pdr)])


def read_csv(path) -> list[EvalRecord]:
    def num(s):
        return None if s == "" else float(s)

    with Path(path).open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: unexpected header {reader.fieldnames}")
        return [EvalRecord(row["dataset"], row["model"], row["defence"], row["attack"],
                           float(row["acc"]), num(row["aua"]), num(row["asr"]), num(row["avgq"]),
                           num(row["pdr"])) for row in reader]

