"""End-to-end experiment pieces shared by the CLI and the acceptance suite.

``prepare`` turns a dataset section into splits, a vocabulary, encoded
instances and a synonym table; ``fit`` trains one defence; ``attack_split``
runs the attacks over the full test split and ``evaluate_attacks`` turns the
outcomes into metric rows.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import partial
from typing import Sequence

import numpy as np

from . import attacks, data, defences, metrics
from .data import Example, Splits, SynonymTable, Vocabulary
from .model import TextClassifier


class ConfigError(ValueError):
    """Invalid run configuration."""


@dataclass
class Prepared:
    name: str
    splits: Splits
    vocab: Vocabulary
    train: list
    validation: list
    test: list
    synonyms: SynonymTable
    num_classes: int
    shape: str


def load_splits(ds: dict, seed: int) -> Splits:
    kind = ds.get("kind", "synth")
    if kind == "synth":
        keys = ("n", "vocab_size", "num_classes", "noise", "signal_per_class")
        params = {k: ds[k] for k in keys if k in ds}
        return data.synth_dataset(int(ds.get("seed", seed)), **params)
    if kind == "files":
        if "path" not in ds:
            raise ConfigError("dataset.path is required for kind = 'files'")
        return data.load_dataset(ds["path"], ds.get("format"), ds.get("shape"), ds.get("label_map"))
    raise ConfigError(f"unknown dataset kind {kind!r}")


def prepare(ds: dict, syn_cfg: dict | None, seed: int) -> Prepared:
    splits = load_splits(ds, seed)
    vocab = data.build_vocab(splits.train, int(ds.get("min_count", 2)))
    shape = splits.train[0].shape
    enc = lambda xs: [(data.encode(vocab, e), e.label) for e in xs]
    if shape == "choice":
        num_classes = 1
    else:
        num_classes = int(ds.get("num_classes", max(e.label for e in splits.train) + 1))
    syn_cfg = syn_cfg or {}
    if "path" in syn_cfg:
        synonyms = SynonymTable.load(syn_cfg["path"])
    else:
        corpus = [ids for e in splits.train for ids in data.encode(vocab, e)]
        synonyms = data.build_synonym_table(corpus, vocab, int(syn_cfg.get("embed_dim", 50)),
                                            int(syn_cfg.get("k", 10)), int(syn_cfg.get("window", 2)))
    return Prepared(ds.get("name", ds.get("kind", "synth")), splits, vocab, enc(splits.train),
                    enc(splits.validation), enc(splits.test), synonyms, num_classes, shape)


def new_model(prep: Prepared, model_cfg: dict | None, seed: int) -> TextClassifier:
    model_cfg = model_cfg or {}
    return TextClassifier(len(prep.vocab), prep.num_classes, int(model_cfg.get("embed_dim", 32)),
                          int(model_cfg.get("hidden_dim", 64)), seed=seed, vocab_hash=prep.vocab.hash())


def model_label(model: TextClassifier) -> str:
    return f"meanpool-d{model.embed_dim}-h{model.hidden_dim}"


def fit(prep: Prepared, defence_cfg: dict, model_cfg: dict | None, train_cfg: dict | None,
        seed: int) -> tuple[defences.TrainResult, defences.DefenceConfig, list]:
    """Train one defence. An SLS/ALS ``eps`` or flooding ``b`` of "sweep" is tuned on validation.

    Returns the training result, the resolved defence and the sweep table.
    """
    tc = defences.TrainConfig(seed=seed, **(train_cfg or {}))
    cfg = dict(defence_cfg)
    kind = cfg.get("kind")
    sweep_key = {"sls": "eps", "als": "eps", "flooding": "b"}.get(kind)
    model = new_model(prep, model_cfg, seed)
    if sweep_key and cfg.get(sweep_key) == "sweep":
        values = defences.LS_SEARCH if sweep_key == "eps" else defences.FLOOD_SEARCH
        make = lambda v: defences.defence_from_dict({**cfg, sweep_key: v})
        table, result = defences.sweep(model, prep.train, prep.validation, make, values, tc)
        best_v = next(v for v, acc in table if acc == result.val_acc)
        return result, make(best_v), table
    try:
        resolved = defences.defence_from_dict(cfg)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    return defences.train(model, prep.train, prep.validation, resolved, tc), resolved, []


# ----------------------------------------------------------------------------
# attacks


@dataclass(frozen=True)
class AttackSpec:
    name: str
    budget: attacks.AttackBudget = field(default_factory=attacks.AttackBudget)

    @classmethod
    def from_dict(cls, d: dict) -> "AttackSpec":
        d = dict(d)
        name = d.pop("name", None)
        if name not in attacks.ATTACKS:
            raise ConfigError(f"unknown attack {name!r}; expected one of {sorted(attacks.ATTACKS)}")
        try:
            return cls(name, attacks.AttackBudget(**d))
        except (TypeError, ValueError) as err:
            raise ConfigError(f"attack {name}: {err}") from err

    @property
    def label(self) -> str:
        return {"textfooler": "TextFooler", "textbugger": "TextBugger"}[self.name]


def attack_view(ex: Example, vocab: Vocabulary) -> tuple[list[str], list[list[int]] | None]:
    """Attacked word list and (for multiple choice) the fixed choice ids."""
    words = data.split_words(ex.text_a)
    if ex.choices is not None:
        return words, [data.tokenize(vocab, c) for c in ex.choices]
    if ex.text_b is not None:
        return words + [data.SEP] + data.split_words(ex.text_b), None
    return words, None


def _attack_one(ex: Example, model: TextClassifier, vocab: Vocabulary, synonyms: SynonymTable,
                spec: AttackSpec) -> attacks.AttackResult:
    words, choices = attack_view(ex, vocab)
    victim = attacks.Victim(model, vocab, choices)
    return attacks.ATTACKS[spec.name](victim, words, ex.label, synonyms, spec.budget)


def attack_split(model: TextClassifier, prep: Prepared, spec: AttackSpec, examples: Sequence[Example],
                 workers: int = 1) -> list[attacks.AttackResult]:
    """Attack every example (skipping clean errors per protocol); order is preserved."""
    job = partial(_attack_one, model=model, vocab=prep.vocab, synonyms=prep.synonyms, spec=spec)
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(job, examples, chunksize=max(1, len(examples) // (4 * workers))))
    return [job(ex) for ex in examples]


def to_records(examples: Sequence[Example], results: Sequence[attacks.AttackResult],
               subsampled: bool = False) -> metrics.AttackedDataset:
    return metrics.AttackedDataset([metrics.AttackRecord(ex.label, r.original_pred, r.success, r.queries)
                                    for ex, r in zip(examples, results)], subsampled)


def transcript_rows(examples: Sequence[Example], results: Sequence[attacks.AttackResult],
                    attack: str, vocab: Vocabulary) -> list[dict]:
    rows = []
    for i, (ex, r) in enumerate(zip(examples, results)):
        original, _ = attack_view(ex, vocab)
        rows.append({"index": i, "attack": attack, "label": ex.label, "original": " ".join(original),
                     "perturbed_words": r.perturbed, "perturbed": " ".join(r.perturbed),
                     "queries": r.queries, "success": r.success, "skipped": r.skipped,
                     "words_changed": r.words_changed, "original_pred": r.original_pred,
                     "final_pred": r.final_pred})
    return rows


def evaluate_attacks(model: TextClassifier, prep: Prepared, specs: Sequence[AttackSpec], defence_label: str,
                     examples: Sequence[Example] | None = None, subsampled: bool = False,
                     allow_subsample: bool = False, workers: int = 1):
    """Run every attack on ``examples`` (default: the full test split).

    Returns metric rows (with the Apdr summary row) and transcripts per attack.
    """
    examples = list(prep.splits.test if examples is None else examples)
    rows, transcripts = [], {}
    for spec in specs:
        results = attack_split(model, prep, spec, examples, workers)
        rec = to_records(examples, results, subsampled)
        rows.append(metrics.evaluate(rec, prep.name, model_label(model), defence_label, spec.label,
                                     allow_subsample=allow_subsample))
        transcripts[spec.name] = transcript_rows(examples, results, spec.name, prep.vocab)
    return metrics.with_summaries(rows), transcripts


def median(values: Sequence[float]) -> float:
    vals = [v for v in values if v is not None and not math.isnan(v)]
    return float(np.median(vals)) if vals else float("nan")
