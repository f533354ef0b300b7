"""Black-box greedy text attacks with exact query accounting.

``attack_textfooler`` ranks words by leave-one-out importance and greedily
swaps in synonym candidates; ``attack_textbugger`` does the same with
character-level bugs plus embedding-neighbour words. ``brute_force_attack``
enumerates every substitution combination and serves as the oracle for
small instances.

Both greedy attacks keep a substitution only when it strictly lowers the
true-class probability (or flips the prediction). Attacks see the victim
only through probability queries; every query is counted.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .data import RESERVED, SEP, SynonymTable, Vocabulary
from .model import TextClassifier

VISUAL_SUBS = {"o": "0", "l": "1", "i": "1", "a": "@", "e": "3", "s": "$", "t": "7", "b": "6",
               "g": "9", "z": "2", "0": "o", "1": "l", "3": "e", "7": "t", "9": "g", "6": "b", "2": "z"}


BRUTE_FORCE_MAX_CANDIDATES = 4


class QueryBudgetExhausted(RuntimeError):
    pass


@dataclass(frozen=True)
class AttackBudget:
    max_perturb_fraction: float = 0.4
    max_queries: int = 2000
    max_candidates: int = 10

    def __post_init__(self):
        if not 0 <= self.max_perturb_fraction <= 1:
            raise ValueError("max_perturb_fraction must lie in [0, 1]")
        if self.max_queries < 1 or self.max_candidates < 0:
            raise ValueError("max_queries must be >= 1 and max_candidates >= 0")

    def max_changes(self, n_words: int) -> int:
        # tolerance guards against 0.4 * 5 = 2.0000000000000004 style rounding
        return math.ceil(self.max_perturb_fraction * n_words - 1e-9)


@dataclass
class AttackResult:
    success: bool
    perturbed: list[str]
    queries: int
    words_changed: int
    original_pred: int
    final_pred: int
    skipped: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


class Victim:
    """Read-only view of a model as a probability oracle over word lists.

    For multiple-choice inputs the attacked words are the context and
    ``choices`` (token ids) are appended to it for scoring.
    """

    def __init__(self, model: TextClassifier, vocab: Vocabulary,
                 choices: Sequence[Sequence[int]] | None = None):
        self.model = model
        self.vocab = vocab
        self.choices = [list(c) for c in choices] if choices is not None else None
        if model.is_ranker and self.choices is None:
            raise ValueError("a ranking model needs the choices of the attacked example")

    def probabilities(self, word_lists: Sequence[Sequence[str]]) -> np.ndarray:
        ids = [self.vocab.ids(w) for w in word_lists]
        if self.choices is None:
            logits = self.model.logits_array(ids)
        else:
            sep = self.vocab.id(SEP)
            seqs = [x + [sep] + c for x in ids for c in self.choices]
            logits = self.model.logits_array(seqs)[:, 0].reshape(len(ids), len(self.choices))
        return ad.softmax_array(logits)


class QueryCounter:
    """Counts every victim query of one attack episode and enforces the cap."""

    def __init__(self, victim: Victim, max_queries: int | None = None):
        self.victim = victim
        self.max_queries = max_queries
        self.queries = 0

    def __call__(self, word_lists: Sequence[Sequence[str]]) -> np.ndarray:
        n = len(word_lists)
        if self.max_queries is not None and self.queries + n > self.max_queries:
            raise QueryBudgetExhausted
        self.queries += n
        return self.victim.probabilities(word_lists)


def _mutable(words: Sequence[str]) -> list[int]:
    return [i for i, w in enumerate(words) if w not in RESERVED]


def word_importance(query: QueryCounter, words: Sequence[str], y: int,
                    p_orig: float | None = None) -> np.ndarray:
    """Drop in true-class probability when each word is deleted.

    One query per attackable position (reserved tokens score ``-inf``). A
    one-word input is scored by replacing the word with ``[UNK]`` instead,
    since deleting it would leave nothing to classify.
    """
    if p_orig is None:
        p_orig = float(query([list(words)])[0, y])
    positions = _mutable(words)
    scores = np.full(len(words), -np.inf)
    if not positions:
        return scores
    variants = []
    for i in positions:
        v = list(words[:i]) + list(words[i + 1:])
        variants.append(v if v else ["[UNK]"])
    probs = query(variants)
    scores[positions] = p_orig - probs[:, y]
    return scores


# ----------------------------------------------------------------------------
# candidate generation


def bug_insert(word: str) -> str | None:
    if len(word) < 2:
        return None
    mid = len(word) // 2
    return word[:mid] + " " + word[mid:]


def bug_delete(word: str) -> str | None:
    if len(word) < 2:
        return None
    mid = len(word) // 2
    return word[:mid] + word[mid + 1:]


def bug_swap(word: str) -> str | None:
    if len(word) < 2:
        return None
    i = max(len(word) // 2 - 1, 0)
    chars = list(word)
    chars[i], chars[i + 1] = chars[i + 1], chars[i]
    return "".join(chars)


def bug_substitute(word: str) -> str | None:
    for i, ch in enumerate(word):
        if ch in VISUAL_SUBS:
            return word[:i] + VISUAL_SUBS[ch] + word[i + 1:]
    return None


BUG_OPS = (bug_insert, bug_delete, bug_swap, bug_substitute)


def textbugger_candidates(word: str, synonyms: SynonymTable | None, k: int) -> list[str]:
    cands = [op(word) for op in BUG_OPS]
    if synonyms is not None:
        cands.extend(synonyms.candidates(word, k))
    return [c for c in dict.fromkeys(cands) if c is not None and c != word]


# ----------------------------------------------------------------------------
# attacks


def _greedy(victim: Victim, words: Sequence[str], y: int, budget: AttackBudget, candidates_for) -> AttackResult:
    words = list(words)
    query = QueryCounter(victim, budget.max_queries)
    probs = query([words])[0]
    orig_pred = int(np.argmax(probs))
    if orig_pred != y:
        return AttackResult(False, words, query.queries, 0, orig_pred, orig_pred, skipped=True)
    max_changes = budget.max_changes(len(_mutable(words)))
    failed = AttackResult(False, words, query.queries, 0, orig_pred, orig_pred)
    if max_changes == 0:
        return failed
    try:
        scores = word_importance(query, words, y, float(probs[y]))
        order = sorted(_mutable(words), key=lambda i: (-scores[i], i))
        current, cur_p, changed = list(words), float(probs[y]), 0
        for pos in order:
            if changed >= max_changes:
                break
            cands = candidates_for(words[pos])
            if not cands:
                continue
            variants = [current[:pos] + [c] + current[pos + 1:] for c in cands]
            cprobs = query(variants)
            preds = np.argmax(cprobs, axis=1)
            p_true = cprobs[:, y]
            flipped = np.flatnonzero(preds != y)
            if flipped.size:
                best = int(flipped[np.argmin(p_true[flipped])])
                current = variants[best]
                return AttackResult(True, current, query.queries, changed + 1, orig_pred, int(preds[best]))
            best = int(np.argmin(p_true))
            if p_true[best] < cur_p:
                current, cur_p = variants[best], float(p_true[best])
                changed += 1
    except QueryBudgetExhausted:
        pass
    failed.queries = query.queries
    return failed


def attack_textfooler(victim: Victim, words: Sequence[str], y: int, synonyms: SynonymTable,
                      budget: AttackBudget | None = None) -> AttackResult:
    """Greedy synonym substitution in order of word importance."""
    budget = budget or AttackBudget()
    k = budget.max_candidates
    return _greedy(victim, words, y, budget, lambda w: synonyms.candidates(w, k))


def attack_textbugger(victim: Victim, words: Sequence[str], y: int, synonyms: SynonymTable | None = None,
                      budget: AttackBudget | None = None) -> AttackResult:
    """Greedy character bugs (insert, delete, swap, look-alike) and neighbour words."""
    budget = budget or AttackBudget()
    k = budget.max_candidates
    return _greedy(victim, words, y, budget, lambda w: textbugger_candidates(w, synonyms, k))


def brute_force_attack(victim: Victim, words: Sequence[str], y: int, synonyms: SynonymTable,
                       max_subs: int, max_candidates: int = 4, max_len: int = 8) -> AttackResult:
    """Minimum-change successful substitution by exhaustive enumeration.

    Tries every set of at most ``max_subs`` positions, smallest sets first,
    with every combination of the first ``max_candidates`` synonyms.
    """
    words = list(words)
    if len(words) > max_len:
        raise ValueError(f"instance too large for brute force: {len(words)} > {max_len} words")
    if max_candidates > BRUTE_FORCE_MAX_CANDIDATES:
        raise ValueError(f"brute force is limited to {BRUTE_FORCE_MAX_CANDIDATES} candidates per word")
    query = QueryCounter(victim)
    probs = query([words])[0]
    orig_pred = int(np.argmax(probs))
    if orig_pred != y:
        return AttackResult(False, words, query.queries, 0, orig_pred, orig_pred, skipped=True)
    cands = {i: synonyms.candidates(words[i], max_candidates) for i in _mutable(words)}
    positions = [i for i, c in cands.items() if c]
    for size in range(1, max_subs + 1):
        for subset in itertools.combinations(positions, size):
            for choice in itertools.product(*(cands[i] for i in subset)):
                variant = list(words)
                for i, c in zip(subset, choice):
                    variant[i] = c
                pred = int(np.argmax(query([variant])[0]))
                if pred != y:
                    return AttackResult(True, variant, query.queries, size, orig_pred, pred)
    return AttackResult(False, words, query.queries, 0, orig_pred, orig_pred)


ATTACKS = {"textfooler": attack_textfooler, "textbugger": attack_textbugger}


def write_transcript(path, rows: Sequence[dict]) -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")


def read_transcript(path) -> list[dict]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]
