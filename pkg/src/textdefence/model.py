"""Mean-pooled text classifier built on :mod:`textdefence.autodiff`.

Architecture: embedding lookup -> (optional additive embedding offset) ->
mean over tokens -> dense + tanh -> dense -> logits. A model with
``num_classes=1`` is a ranking model: it emits one score per sequence and
multiple-choice examples are predicted by the argmax over choice scores.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Sequence

import numpy as np

from . import autodiff as ad

CHECKPOINT_VERSION = 1
PARAM_NAMES = ("embedding", "w_hidden", "b_hidden", "w_out", "b_out")


class TextClassifier:
    def __init__(self, vocab_size: int, num_classes: int = 2, embed_dim: int = 32,
                 hidden_dim: int = 64, seed: int = 0, zero_head: bool = False,
                 vocab_hash: str = ""):
        if vocab_size < 1 or num_classes < 1:
            raise ValueError("vocab_size and num_classes must be positive")
        self.vocab_size = vocab_size
        self.num_classes = num_classes
        self.embed_dim = embed_dim
        self.hidden_dim = hidden_dim
        self.vocab_hash = vocab_hash
        rng = np.random.default_rng(seed)
        w_out = (np.zeros((hidden_dim, num_classes)) if zero_head
                 else rng.normal(0.0, 1.0 / np.sqrt(hidden_dim), (hidden_dim, num_classes)))
        self.params = {
            "embedding": ad.leaf(rng.normal(0.0, 0.1, (vocab_size, embed_dim)), "embedding"),
            "w_hidden": ad.leaf(rng.normal(0.0, 1.0 / np.sqrt(embed_dim), (embed_dim, hidden_dim)), "w_hidden"),
            "b_hidden": ad.leaf(np.zeros(hidden_dim), "b_hidden"),
            "w_out": ad.leaf(w_out, "w_out"),
            "b_out": ad.leaf(np.zeros(num_classes), "b_out"),
        }

    @property
    def parameters(self) -> list[ad.Node]:
        return [self.params[n] for n in PARAM_NAMES]

    @property
    def is_ranker(self) -> bool:
        return self.num_classes == 1

    # ------------------------------------------------------------------
    # graph forward

    def _check(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        if not seqs:
            raise ValueError("no sequences to score")
        for s in seqs:
            if len(s) == 0:
                raise ValueError("empty token sequence")
        flat = np.fromiter((t for s in seqs for t in s), dtype=np.int64)
        if flat.min() < 0 or flat.max() >= self.vocab_size:
            raise IndexError("token id outside the vocabulary")
        return flat

    def embed(self, seqs: Sequence[Sequence[int]]) -> ad.Node:
        """Looked-up token embeddings for all sequences, stacked [N_tok × d]."""
        return ad.embedding_lookup(self.params["embedding"], self._check(seqs))

    def forward_batch(self, seqs: Sequence[Sequence[int]], offset: ad.Node | None = None) -> ad.Node:
        """Logits [N_seq × C] for a list of sequences; ``offset`` is [N_tok × d]."""
        emb = self.embed(seqs)
        if offset is not None:
            if offset.shape != emb.shape:
                raise ValueError(f"offset shape {offset.shape} != embedding shape {emb.shape}")
            emb = ad.add(emb, offset)
        pooled = ad.matmul(ad.constant(pool_matrix(seqs)), emb)
        hidden = ad.tanh(ad.add_bias(ad.matmul(pooled, self.params["w_hidden"]), self.params["b_hidden"]))
        return ad.add_bias(ad.matmul(hidden, self.params["w_out"]), self.params["b_out"])

    def forward(self, tokens: Sequence[int]) -> ad.Node:
        return ad.reshape(self.forward_batch([tokens]), (self.num_classes,))

    def forward_with_offset(self, tokens: Sequence[int], offset) -> ad.Node:
        if not isinstance(offset, ad.Node):
            offset = ad.constant(offset)
        return ad.reshape(self.forward_batch([tokens], offset), (self.num_classes,))

    # ------------------------------------------------------------------
    # inference without a tape

    def logits_array(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        p = {k: v.value for k, v in self.params.items()}
        emb = p["embedding"][self._check(seqs)]
        pooled = pool_matrix(seqs) @ emb
        hidden = np.tanh(pooled @ p["w_hidden"] + p["b_hidden"])
        return hidden @ p["w_out"] + p["b_out"]

    def predict_proba(self, tokens: Sequence[int]) -> np.ndarray:
        return ad.softmax_array(self.logits_array([tokens])[0])

    def predict(self, tokens: Sequence[int]) -> int:
        # np.argmax returns the first maximum: lowest class index wins ties
        return int(np.argmax(self.logits_array([tokens])[0]))

    def rank_choices(self, context: Sequence[int], choices: Sequence[Sequence[int]],
                     sep_id: int = 2) -> np.ndarray:
        """Score each ``context [SEP] choice`` sequence independently."""
        if len(choices) < 2:
            raise ValueError("rank_choices needs at least two choices")
        seqs = [list(context) + [sep_id] + list(c) for c in choices]
        return self.choice_scores(seqs)

    def choice_scores(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        if not self.is_ranker:
            raise ValueError("choice scoring needs a ranking model (num_classes=1)")
        return self.logits_array(seqs)[:, 0]

    def instance_logits(self, seqs: Sequence[Sequence[int]]) -> np.ndarray:
        """Logit vector for one encoded example (one sequence, or one per choice)."""
        if self.is_ranker:
            return self.choice_scores(seqs)
        if len(seqs) != 1:
            raise ValueError("a classifier scores exactly one sequence per example")
        return self.logits_array(seqs)[0]

    # ------------------------------------------------------------------
    # state

    def state(self) -> dict[str, np.ndarray]:
        return {k: v.value.copy() for k, v in self.params.items()}

    def load_state(self, state: dict[str, np.ndarray]) -> None:
        for k in PARAM_NAMES:
            if state[k].shape != self.params[k].shape:
                raise ValueError(f"shape mismatch for {k}")
            self.params[k].value = np.array(state[k], dtype=np.float64, copy=True)

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for k in PARAM_NAMES:
            h.update(self.params[k].value.tobytes())
        return h.hexdigest()

    def config(self) -> dict:
        return {"vocab_size": self.vocab_size, "num_classes": self.num_classes,
                "embed_dim": self.embed_dim, "hidden_dim": self.hidden_dim}

    def save(self, path) -> None:
        payload = {
            "version": CHECKPOINT_VERSION,
            "config": self.config(),
            "vocab_hash": self.vocab_hash,
            "params": {k: {"shape": list(self.params[k].shape),
                           "data": self.params[k].value.reshape(-1).tolist()} for k in PARAM_NAMES},
        }
        Path(path).write_text(json.dumps(payload, sort_keys=True) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "TextClassifier":
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
        if payload.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {payload.get('version')!r}")
        model = cls(**payload["config"], vocab_hash=payload.get("vocab_hash", ""))
        state = {k: np.array(v["data"], dtype=np.float64).reshape(v["shape"])
                 for k, v in payload["params"].items()}
        model.load_state(state)
        return model


def pool_matrix(seqs: Sequence[Sequence[int]]) -> np.ndarray:
    """[N_seq × N_tok] matrix averaging each sequence's token rows."""
    total = sum(len(s) for s in seqs)
    m = np.zeros((len(seqs), total))
    start = 0
    for i, s in enumerate(seqs):
        m[i, start:start + len(s)] = 1.0 / len(s)
        start += len(s)
    return m


def segments(seqs: Sequence[Sequence[int]]) -> list[slice]:
    """Row ranges of each sequence inside the stacked token matrix."""
    out, start = [], 0
    for s in seqs:
        out.append(slice(start, start + len(s)))
        start += len(s)
    return out
