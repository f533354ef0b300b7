"""Datasets, tokenisation, vocabularies and synonym tables.

Three example shapes are supported: single sentence, sentence pair and
multiple choice. Pair inputs are joined as ``text_a [SEP] text_b``; multiple
choice inputs become one ``context [SEP] choice`` sequence per choice.
"""

from __future__ import annotations

import hashlib
import json
import re
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

PAD, UNK, SEP = "[PAD]", "[UNK]", "[SEP]"
RESERVED = (PAD, UNK, SEP)
PAD_ID, UNK_ID, SEP_ID = 0, 1, 2

_TOKEN_RE = re.compile(r"\w+|[^\w\s]", re.UNICODE)


class DataFormatError(ValueError):
    """Malformed dataset or synonym file."""


@dataclass(frozen=True)
class Example:
    text_a: str
    label: int
    text_b: str | None = None
    choices: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.text_b is not None and self.choices is not None:
            raise ValueError("an example is either a pair or a multiple-choice record, not both")
        if self.label < 0:
            raise ValueError("label must be non-negative")
        if self.choices is not None and self.label >= len(self.choices):
            raise ValueError("label indexes past the last choice")

    @property
    def shape(self) -> str:
        if self.choices is not None:
            return "choice"
        return "pair" if self.text_b is not None else "single"


@dataclass
class Splits:
    train: list[Example]
    validation: list[Example]
    test: list[Example]

    def sizes(self) -> dict[str, int]:
        return {"train": len(self.train), "validation": len(self.validation), "test": len(self.test)}


def split_words(text: str) -> list[str]:
    """Lowercase, then split on whitespace and punctuation."""
    return _TOKEN_RE.findall(text.lower())


class Vocabulary:
    """Word to id map with reserved ``PAD``, ``UNK`` and ``SEP`` at ids 0, 1, 2."""

    def __init__(self, words: Iterable[str] = ()):
        self.itos: list[str] = list(RESERVED)
        self.stoi: dict[str, int] = {w: i for i, w in enumerate(self.itos)}
        for w in words:
            if w in self.stoi:
                raise ValueError(f"duplicate vocabulary entry {w!r}")
            self.stoi[w] = len(self.itos)
            self.itos.append(w)

    def __len__(self) -> int:
        return len(self.itos)

    def __contains__(self, word: str) -> bool:
        return word in self.stoi

    def id(self, word: str) -> int:
        return self.stoi.get(word, UNK_ID)

    def ids(self, words: Sequence[str]) -> list[int]:
        return [self.stoi.get(w, UNK_ID) for w in words]

    def word(self, idx: int) -> str:
        return self.itos[idx]

    @property
    def content_words(self) -> list[str]:
        return self.itos[len(RESERVED):]

    def hash(self) -> str:
        return hashlib.sha256("\n".join(self.itos).encode("utf-8")).hexdigest()


def build_vocab(examples: Iterable[Example], min_count: int = 2) -> Vocabulary:
    counts: Counter[str] = Counter()
    for ex in examples:
        for text in _texts(ex):
            counts.update(split_words(text))
    kept = [w for w, c in counts.items() if c >= min_count and w not in RESERVED]
    kept.sort(key=lambda w: (-counts[w], w))
    return Vocabulary(kept)


def tokenize(vocab: Vocabulary, text: str) -> list[int]:
    return vocab.ids(split_words(text))


def _texts(ex: Example) -> list[str]:
    out = [ex.text_a]
    if ex.text_b is not None:
        out.append(ex.text_b)
    if ex.choices is not None:
        out.extend(ex.choices)
    return out


def encode(vocab: Vocabulary, ex: Example) -> list[list[int]]:
    """Token-id sequences the model scores for one example (one per choice)."""
    a = tokenize(vocab, ex.text_a)
    if ex.choices is not None:
        return [a + [SEP_ID] + tokenize(vocab, c) for c in ex.choices]
    if ex.text_b is not None:
        return [a + [SEP_ID] + tokenize(vocab, ex.text_b)]
    return [a]


# ----------------------------------------------------------------------------
# loading


def _parse_label(raw, lineno: int, label_map: dict[str, int] | None) -> int:
    if label_map is not None:
        key = str(raw)
        if key not in label_map:
            raise DataFormatError(f"line {lineno}: unknown label {raw!r}")
        return label_map[key]
    try:
        value = int(raw)
    except (TypeError, ValueError):
        raise DataFormatError(f"line {lineno}: label {raw!r} is not an integer") from None
    if value < 0:
        raise DataFormatError(f"line {lineno}: negative label {value}")
    return value


def read_examples(path, fmt: str | None = None, shape: str | None = None,
                  label_map: dict[str, int] | None = None) -> list[Example]:
    """Parse one TSV or JSONL file. ``shape`` enforces single/pair/choice if given.

    A TSV file may start with a header row whose first column is ``label``.
    """
    path = Path(path)
    fmt = fmt or ("jsonl" if path.suffix in (".jsonl", ".json") else "tsv")
    examples = []
    with path.open(encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            if fmt == "tsv":
                if lineno == 1 and line.split("\t", 1)[0].strip().lower() == "label":
                    continue  # optional header row
                ex = _parse_tsv(line, lineno, label_map)
            elif fmt == "jsonl":
                ex = _parse_jsonl(line, lineno, label_map)
            else:
                raise ValueError(f"unknown format {fmt!r}")
            if shape is not None and ex.shape != shape:
                raise DataFormatError(f"line {lineno}: expected a {shape} example, got {ex.shape}")
            examples.append(ex)
    return examples


def _parse_tsv(line: str, lineno: int, label_map) -> Example:
    cols = line.split("\t")
    if len(cols) not in (2, 3):
        raise DataFormatError(f"line {lineno}: expected 2 or 3 tab-separated columns, got {len(cols)}")
    label = _parse_label(cols[0], lineno, label_map)
    return Example(text_a=cols[1], text_b=cols[2] if len(cols) == 3 else None, label=label)


def _parse_jsonl(line: str, lineno: int, label_map) -> Example:
    try:
        obj = json.loads(line)
    except json.JSONDecodeError as err:
        raise DataFormatError(f"line {lineno}: invalid JSON ({err.msg})") from None
    if not isinstance(obj, dict) or "label" not in obj:
        raise DataFormatError(f"line {lineno}: missing 'label' field")
    label = _parse_label(obj["label"], lineno, label_map)
    try:
        if "choices" in obj:
            choices = obj["choices"]
            if not isinstance(choices, list) or len(choices) < 2:
                raise DataFormatError(f"line {lineno}: 'choices' must be a list of at least two strings")
            return Example(text_a=obj["context"], choices=tuple(choices), label=label)
        if "text_a" in obj:
            return Example(text_a=obj["text_a"], text_b=obj.get("text_b"), label=label)
        return Example(text_a=obj["text"], label=label)
    except KeyError as err:
        raise DataFormatError(f"line {lineno}: missing field {err.args[0]!r}") from None
    except ValueError as err:
        if isinstance(err, DataFormatError):
            raise
        raise DataFormatError(f"line {lineno}: {err}") from None


def example_to_record(ex: Example) -> dict:
    if ex.choices is not None:
        return {"label": ex.label, "context": ex.text_a, "choices": list(ex.choices)}
    if ex.text_b is not None:
        return {"label": ex.label, "text_a": ex.text_a, "text_b": ex.text_b}
    return {"label": ex.label, "text": ex.text_a}


def write_examples(path, examples: Sequence[Example], fmt: str = "jsonl") -> None:
    with Path(path).open("w", encoding="utf-8") as fh:
        for ex in examples:
            if fmt == "jsonl":
                fh.write(json.dumps(example_to_record(ex), sort_keys=True) + "\n")
            elif fmt == "tsv":
                if ex.choices is not None:
                    raise ValueError("multiple-choice examples cannot be written as TSV")
                cols = [str(ex.label), ex.text_a] + ([ex.text_b] if ex.text_b is not None else [])
                fh.write("\t".join(cols) + "\n")
            else:
                raise ValueError(f"unknown format {fmt!r}")


def load_dataset(path, fmt: str | None = None, shape: str | None = None,
                 label_map: dict[str, int] | None = None) -> Splits:
    """Load ``train``/``validation``/``test`` files from a directory.

    ``path`` is a directory holding ``train.<ext>``, ``validation.<ext>`` (or
    ``dev.<ext>``) and optionally ``test.<ext>``; missing test splits (as for
    SIQA/CSQA, evaluated on validation) fall back to the validation split.
    """
    root = Path(path)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset directory not found: {root}")
    ext = {"tsv": ".tsv", "jsonl": ".jsonl", None: None}[fmt]

    def find(*stems):
        for stem in stems:
            for e in ([ext] if ext else [".tsv", ".jsonl"]):
                p = root / f"{stem}{e}"
                if p.exists():
                    return p
        return None

    train_p, val_p, test_p = find("train"), find("validation", "dev"), find("test")
    if train_p is None or val_p is None:
        raise FileNotFoundError(f"{root}: need train and validation files")
    train = read_examples(train_p, fmt, shape, label_map)
    val = read_examples(val_p, fmt, shape, label_map)
    test = read_examples(test_p, fmt, shape, label_map) if test_p else list(val)
    return Splits(train, val, test)


# ----------------------------------------------------------------------------
# synthetic data


def synth_dataset(seed: int, n: int = 2000, vocab_size: int = 200, num_classes: int = 2,
                  noise: float = 0.05, signal_per_class: int = 12, length: tuple[int, int] = (8, 16),
                  signal_words: tuple[int, int] = (2, 4),
                  fractions: tuple[float, float, float] = (0.7, 0.1, 0.2)) -> Splits:
    """Bag-of-words classification data with a known generative model.

    Each class owns ``signal_per_class`` words; the rest of the vocabulary is
    shared background. A text of class ``c`` mixes a few of ``c``'s signal
    words into background words; the stored label is then flipped to a
    different class with probability ``noise``. The clean class is a
    deterministic function of the text, so Bayes accuracy is at least
    ``1 - noise``.
    """
    if n < 100:
        raise ValueError("n must be at least 100")
    n_signal = signal_per_class * num_classes
    if vocab_size <= n_signal:
        raise ValueError("vocab_size must exceed the number of signal words")
    rng = np.random.default_rng(seed)
    words = [f"w{i:03d}" for i in range(vocab_size)]
    signal = [words[c * signal_per_class:(c + 1) * signal_per_class] for c in range(num_classes)]
    background = words[n_signal:]

    examples = []
    for i in range(n):
        cls = i % num_classes
        length_i = int(rng.integers(length[0], length[1] + 1))
        n_sig = int(rng.integers(signal_words[0], signal_words[1] + 1))
        toks = list(rng.choice(background, size=length_i - n_sig))
        sig = rng.choice(signal[cls], size=n_sig)
        for w in sig:
            toks.insert(int(rng.integers(0, len(toks) + 1)), w)
        label = cls
        if noise > 0 and rng.random() < noise:
            label = int((cls + rng.integers(1, num_classes)) % num_classes)
        examples.append(Example(text_a=" ".join(str(t) for t in toks), label=label))
    order = rng.permutation(n)
    examples = [examples[j] for j in order]
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    return Splits(examples[:n_train], examples[n_train:n_train + n_val], examples[n_train + n_val:])


# ----------------------------------------------------------------------------
# synonym tables


class SynonymTable(dict):
    """``word -> [candidate, ...]``. A word is never its own candidate."""

    def __init__(self, *args, **kwargs):
        super().__init__()
        self.update(*args, **kwargs)

    def update(self, *args, **kwargs):
        for word, cands in dict(*args, **kwargs).items():
            self[word] = cands

    def __setitem__(self, word, cands):
        cands = list(dict.fromkeys(c for c in cands if c != word))
        super().__setitem__(word, cands)

    def candidates(self, word: str, k: int | None = None) -> list[str]:
        cands = self.get(word, [])
        return list(cands if k is None else cands[:k])

    def save(self, path) -> None:
        with Path(path).open("w", encoding="utf-8") as fh:
            for word, cands in self.items():
                fh.write(f"{word}\t{','.join(cands)}\n")

    @classmethod
    def load(cls, path) -> "SynonymTable":
        table = cls()
        with Path(path).open(encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                word, sep, rest = line.partition("\t")
                if not sep:
                    raise DataFormatError(f"line {lineno}: expected word<TAB>candidates")
                table[word] = [c for c in rest.split(",") if c]
        return table


def cooccurrence_embeddings(corpus: Sequence[Sequence[int]], vocab_size: int, embed_dim: int,
                            window: int = 2) -> np.ndarray:
    """Truncated-SVD factorisation of the windowed PPMI matrix, one row per id."""
    counts = np.zeros((vocab_size, vocab_size))
    for seq in corpus:
        n = len(seq)
        for i, w in enumerate(seq):
            for j in range(max(0, i - window), min(n, i + window + 1)):
                if j != i:
                    counts[w, seq[j]] += 1.0
    total = counts.sum()
    if total == 0:
        return np.zeros((vocab_size, embed_dim))
    row = counts.sum(axis=1, keepdims=True)
    col = counts.sum(axis=0, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        pmi = np.log(counts * total / (row * col))
    ppmi = np.where(np.isfinite(pmi) & (pmi > 0), pmi, 0.0)
    u, s, _ = np.linalg.svd(ppmi, full_matrices=False)
    dim = min(embed_dim, s.size)
    emb = u[:, :dim] * s[:dim]
    # deterministic sign convention per component
    signs = np.sign(emb[np.argmax(np.abs(emb), axis=0), np.arange(dim)])
    signs[signs == 0] = 1.0
    return emb * signs


def build_synonym_table(corpus: Sequence[Sequence[int]], vocab: Vocabulary, embed_dim: int = 50,
                        k: int = 10, window: int = 2) -> SynonymTable:
    """Top-``k`` cosine neighbours in a co-occurrence embedding space.

    ``corpus`` is a list of token-id sequences. Reserved tokens are neither
    keys nor candidates; ties are broken by vocabulary id.
    """
    n_content = len(vocab) - len(RESERVED)
    if k < 0 or k > n_content - 1:
        raise ValueError(f"k={k} needs at least {k + 1} content words, vocabulary has {n_content}")
    table = SynonymTable()
    if k == 0:
        for w in vocab.content_words:
            table[w] = []
        return table
    emb = cooccurrence_embeddings(corpus, len(vocab), embed_dim, window)
    norms = np.linalg.norm(emb, axis=1, keepdims=True)
    unit = np.divide(emb, norms, out=np.zeros_like(emb), where=norms > 0)
    sims = unit @ unit.T
    first = len(RESERVED)
    ids = np.arange(first, len(vocab))
    for i in ids:
        s = sims[i, first:].copy()
        s[i - first] = -np.inf
        # round away float noise so exact ties resolve by id
        order = np.lexsort((ids, -np.round(s, 12)))
        table[vocab.word(int(i))] = [vocab.word(int(ids[j])) for j in order[:k]]
    return table
