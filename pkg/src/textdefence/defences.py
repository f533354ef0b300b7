"""Training objectives and the shared training loop.

Eight objectives are available: plain cross-entropy, standard and
adversarial label smoothing, flooding, fixed training-time temperature
scaling (TTSO), entropy-scaled temperature scaling (TTSO++), and the
embedding-space adversarial trainers PGD, FreeLB and TAVAT.

Losses accept a single logit vector ``[C]`` with an integer label, or a batch
``[B × C]`` with an integer array of labels (rows are averaged).
"""

from __future__ import annotations

import copy
import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, ClassVar, Sequence

import numpy as np

from . import autodiff as ad
from .model import TextClassifier

Instance = tuple[list[list[int]], int]  # (sequences scored together, label)


class TrainingDiverged(RuntimeError):
    """Non-finite loss or parameters during training."""


# ----------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class Baseline:
    kind: ClassVar[str] = "baseline"


@dataclass(frozen=True)
class SLS:
    eps: float = 0.1
    kind: ClassVar[str] = "sls"

    def __post_init__(self):
        _check_eps(self.eps)


@dataclass(frozen=True)
class ALS:
    eps: float = 0.1
    kind: ClassVar[str] = "als"

    def __post_init__(self):
        _check_eps(self.eps)


@dataclass(frozen=True)
class Flooding:
    b: float = 0.1
    kind: ClassVar[str] = "flooding"

    def __post_init__(self):
        if self.b < 0:
            raise ValueError("flood level b must be >= 0")


@dataclass(frozen=True)
class TTSO:
    T: float = 10.0
    kind: ClassVar[str] = "ttso"

    def __post_init__(self):
        if self.T <= 0:
            raise ValueError("temperature must be > 0")


@dataclass(frozen=True)
class TTSOpp:
    T_base: float = 10.0
    alpha: float = 0.5
    kind: ClassVar[str] = "ttsopp"

    def __post_init__(self):
        if self.T_base <= 0 or self.alpha < 0:
            raise ValueError("need T_base > 0 and alpha >= 0")


@dataclass(frozen=True)
class PGD:
    steps: int = 5
    adv_lr: float = 0.03
    init_mag: float = 0.05
    max_norm: float = 1.0
    norm: str = "l2"
    kind: ClassVar[str] = "pgd"

    def __post_init__(self):
        if self.steps < 0 or self.adv_lr < 0 or self.init_mag < 0 or self.max_norm < 0:
            raise ValueError("adversarial settings must be non-negative")
        if self.norm != "l2":
            raise ValueError("only the l2 norm is supported")


@dataclass(frozen=True)
class FreeLB(PGD):
    kind: ClassVar[str] = "freelb"


@dataclass(frozen=True)
class TAVAT(PGD):
    kind: ClassVar[str] = "tavat"


DefenceConfig = Baseline | SLS | ALS | Flooding | TTSO | TTSOpp | PGD | FreeLB | TAVAT
DEFENCES: dict[str, type] = {c.kind: c for c in (Baseline, SLS, ALS, Flooding, TTSO, TTSOpp, PGD, FreeLB, TAVAT)}
ADVERSARIAL = ("pgd", "freelb", "tavat")
LS_SEARCH = (0.1, 0.2, 0.3, 0.4, 0.5)
FLOOD_SEARCH = (0.05, 0.1, 0.2, 0.3)


def _check_eps(eps):
    if not 0 < eps < 1:
        raise ValueError("eps_smooth must lie in (0, 1)")


def defence_from_dict(d: dict) -> DefenceConfig:
    d = dict(d)
    kind = d.pop("kind", None)
    if kind not in DEFENCES:
        raise ValueError(f"unknown defence kind {kind!r}; expected one of {sorted(DEFENCES)}")
    cls = DEFENCES[kind]
    allowed = {f.name for f in fields(cls)}
    unknown = set(d) - allowed
    if unknown:
        raise ValueError(f"unknown {kind} settings: {sorted(unknown)}")
    return cls(**d)


def defence_to_dict(cfg: DefenceConfig) -> dict:
    return {"kind": cfg.kind, **asdict(cfg)}


def defence_name(cfg: DefenceConfig) -> str:
    return {"baseline": "Baseline", "sls": "SLS", "als": "ALS", "flooding": "Flooding", "ttso": "TTSO",
            "ttsopp": "TTSO++", "pgd": "PGD", "freelb": "FreeLB", "tavat": "TAVAT"}[cfg.kind]


@dataclass
class TrainConfig:
    epochs: int = 4
    lrs: tuple[float, ...] = (5e-3, 1e-2, 2e-2)
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        self.lrs = tuple(float(x) for x in (self.lrs if isinstance(self.lrs, (list, tuple)) else [self.lrs]))
        if self.epochs < 1 or self.batch_size < 1 or not self.lrs:
            raise ValueError("epochs, batch_size and lrs must be positive/non-empty")


# ----------------------------------------------------------------------------
# losses


def _onehot(y, c: int, ndim: int) -> np.ndarray:
    if ndim == 1:
        t = np.zeros(c)
        t[int(y)] = 1.0
        return t
    y = np.asarray(y, dtype=np.int64)
    t = np.zeros((y.size, c))
    t[np.arange(y.size), y] = 1.0
    return t


def onehot(y, num_classes: int) -> np.ndarray:
    return _onehot(y, num_classes, 1 if np.ndim(y) == 0 else 2)


def loss_ce(logits: ad.Node, y) -> ad.Node:
    return ad.cross_entropy(logits, _onehot(y, logits.shape[-1], logits.value.ndim))


def smoothing_target(logits: ad.Node, y, eps: float, mode: str = "standard") -> np.ndarray:
    c = logits.shape[-1]
    hard = _onehot(y, c, logits.value.ndim)
    if mode == "standard":
        return (1.0 - eps) * hard + eps * np.full_like(hard, 1.0 / c)
    if mode == "adversarial":
        p = ad.softmax_array(logits.value)
        p = np.where(hard > 0, -np.inf, p)
        worst = np.argmax(p, axis=-1)
        return (1.0 - eps) * hard + eps * _onehot(worst, c, logits.value.ndim)
    raise ValueError(f"unknown smoothing mode {mode!r}")


def loss_label_smoothing(logits: ad.Node, y, eps: float, mode: str = "standard") -> ad.Node:
    """Cross-entropy against a smoothed target.

    ``standard`` spreads ``eps`` uniformly; ``adversarial`` puts it on the
    currently most probable wrong class (probabilities held constant).
    """
    _check_eps(eps)
    return ad.cross_entropy(logits, smoothing_target(logits, y, eps, mode))


def loss_flooding(base_loss: ad.Node, b: float) -> ad.Node:
    """``|L - b| + b``: descends above the flood level, ascends below it."""
    if b < 0:
        raise ValueError("flood level b must be >= 0")
    return ad.add(ad.absolute(ad.add(base_loss, ad.constant(-b))), ad.constant(b))


def loss_ttso(logits: ad.Node, y, T: float) -> ad.Node:
    if T <= 0:
        raise ValueError("temperature must be > 0")
    return loss_ce(ad.scale(logits, 1.0 / T), y)


def compute_dynamic_temperature(logits, T_base: float, alpha: float):
    """``T_base + alpha * H(softmax(logits))`` per instance, entropy in nats.

    The distribution is taken at temperature 1 and treated as a constant.
    Returns a float for a single logit vector, an array for a batch.
    """
    if T_base <= 0 or alpha < 0:
        raise ValueError("need T_base > 0 and alpha >= 0")
    z = logits.value if isinstance(logits, ad.Node) else np.asarray(logits, dtype=np.float64)
    t = T_base + alpha * ad.entropy_array(ad.softmax_array(z))
    return float(t) if np.ndim(t) == 0 else t


def loss_ttsopp(logits: ad.Node, y, T_base: float, alpha: float) -> ad.Node:
    t = compute_dynamic_temperature(logits, T_base, alpha)
    if logits.value.ndim == 1:
        return loss_ttso(logits, y, t)
    return loss_ce(ad.scale_rows(logits, 1.0 / t), y)


def objective(cfg: DefenceConfig, logits: ad.Node, y) -> ad.Node:
    """Training loss of a non-adversarial defence (adversarial ones use CE)."""
    kind = cfg.kind
    if kind in ("baseline",) + ADVERSARIAL:
        return loss_ce(logits, y)
    if kind == "sls":
        return loss_label_smoothing(logits, y, cfg.eps, "standard")
    if kind == "als":
        return loss_label_smoothing(logits, y, cfg.eps, "adversarial")
    if kind == "flooding":
        return loss_flooding(loss_ce(logits, y), cfg.b)
    if kind == "ttso":
        return loss_ttso(logits, y, cfg.T)
    if kind == "ttsopp":
        return loss_ttsopp(logits, y, cfg.T_base, cfg.alpha)
    raise ValueError(f"unknown defence {kind!r}")


# ----------------------------------------------------------------------------
# embedding-space inner maximisation


def random_offset(rows: int, dim: int, segs: Sequence[slice], init_mag: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Per-segment direction uniform on the sphere, scaled to norm ``init_mag``."""
    delta = np.zeros((rows, dim))
    if init_mag == 0:
        return delta
    for seg in segs:
        d = rng.standard_normal((seg.stop - seg.start, dim))
        delta[seg] = d * (init_mag / np.linalg.norm(d))
    return delta


def project_rows(delta: np.ndarray, budgets: np.ndarray) -> np.ndarray:
    """Project each row onto its own l2 ball."""
    norms = np.linalg.norm(delta, axis=1)
    factor = np.ones_like(norms)
    over = norms > budgets
    factor[over] = budgets[over] / norms[over]
    return delta * factor[:, None]


def token_budgets(token_embeddings: np.ndarray, segs: Sequence[slice], max_norm: float) -> np.ndarray:
    """Per-token l2 budgets ``max_norm * |E_t| / mean_t |E_t|`` within each segment."""
    norms = np.linalg.norm(token_embeddings, axis=1)
    budgets = np.empty_like(norms)
    for seg in segs:
        m = norms[seg].mean()
        budgets[seg] = max_norm * (norms[seg] / m if m > 0 else 1.0)
    return budgets


def ascend(grad_fn: Callable[[np.ndarray], np.ndarray], delta0: np.ndarray, segs: Sequence[slice],
           cfg: PGD, budgets: np.ndarray | None = None,
           on_step: Callable[[int, np.ndarray], None] | None = None) -> np.ndarray:
    """``cfg.steps`` normalised gradient-ascent steps with l2 projection.

    ``grad_fn(delta)`` returns the loss gradient at ``delta``. With ``budgets``
    every row is projected onto its own ball (token-aware); otherwise each
    segment is projected onto the ball of radius ``cfg.max_norm``.
    """
    delta = delta0.copy()
    for k in range(cfg.steps):
        g = grad_fn(delta)
        delta = ascent_update(delta, g, segs, cfg, budgets)
        if on_step is not None:
            on_step(k, delta)
    return delta


def ascent_update(delta, g, segs, cfg: PGD, budgets=None) -> np.ndarray:
    delta = delta.copy()
    for seg in segs:
        gn = np.linalg.norm(g[seg])
        if gn > 0:
            delta[seg] = delta[seg] + cfg.adv_lr * g[seg] / gn
        if budgets is None:
            delta[seg] = ad.l2_project(delta[seg], cfg.max_norm)
    if budgets is not None:
        delta = project_rows(delta, budgets)
    return delta


def _flatten(batch: Sequence[Instance]):
    seqs = [s for inst, _ in batch for s in inst]
    segs, start = [], 0
    for inst, _ in batch:
        n = sum(len(s) for s in inst)
        segs.append(slice(start, start + n))
        start += n
    labels = np.array([y for _, y in batch], dtype=np.int64)
    return seqs, segs, labels


def batch_logits(model: TextClassifier, batch: Sequence[Instance], offset: ad.Node | None = None) -> ad.Node:
    """Logits ``[B × C]``: class logits, or per-choice scores for a ranking model."""
    seqs, _, _ = _flatten(batch)
    out = model.forward_batch(seqs, offset)
    return ad.reshape(out, (len(batch), -1))


def _offset_grad(model, batch, labels, delta) -> np.ndarray:
    node = ad.leaf(delta)
    loss = loss_ce(batch_logits(model, batch, node), labels)
    ad.backward(loss)
    return node.grad


def batch_inner_max(model: TextClassifier, batch: Sequence[Instance], cfg: PGD,
                    rng: np.random.Generator, on_step=None) -> np.ndarray:
    """Adversarial embedding offset for a whole batch (one budget per instance)."""
    seqs, segs, labels = _flatten(batch)
    emb = model.embed(seqs).value
    budgets = token_budgets(emb, segs, cfg.max_norm) if cfg.kind == "tavat" else None
    delta0 = random_offset(emb.shape[0], emb.shape[1], segs, cfg.init_mag, rng)
    if budgets is not None:
        delta0 = project_rows(delta0, budgets)
    if on_step is not None:
        on_step(-1, delta0)
    delta = ascend(lambda d: _offset_grad(model, batch, labels, d), delta0, segs, cfg, budgets, on_step)
    for p in model.parameters:
        p.grad = None
    return delta


def pgd_inner_max(model: TextClassifier, tokens: Sequence[int], y: int, cfg: PGD | None = None,
                  rng: np.random.Generator | int | None = 0) -> np.ndarray:
    """Embedding offset ``[L × d]`` (approximately) maximising CE for one example."""
    cfg = cfg or PGD()
    rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
    return batch_inner_max(model, [([list(tokens)], y)], cfg, rng)


# ----------------------------------------------------------------------------
# training steps


def _finite_or_raise(loss: ad.Node, where: str) -> float:
    value = float(loss.value)
    if not math.isfinite(value):
        raise TrainingDiverged(f"non-finite loss at {where}")
    return value


def train_step(model: TextClassifier, opt: ad.Adam, batch: Sequence[Instance], cfg: DefenceConfig,
               rng: np.random.Generator, on_step=None) -> float:
    """One parameter update on ``batch``; returns the batch loss."""
    opt.zero_grad()
    _, _, labels = _flatten(batch)
    if cfg.kind in ("pgd", "tavat"):
        delta = batch_inner_max(model, batch, cfg, rng, on_step)
        loss = loss_ce(batch_logits(model, batch, ad.constant(delta)), labels)
        ad.backward(loss)
        value = float(loss.value)
    elif cfg.kind == "freelb":
        value = _freelb_accumulate(model, batch, labels, cfg, rng, on_step)
    else:
        loss = objective(cfg, batch_logits(model, batch), labels)
        ad.backward(loss)
        value = float(loss.value)
    if not math.isfinite(value):
        raise TrainingDiverged("non-finite loss")
    opt.step()
    return value


def _freelb_accumulate(model, batch, labels, cfg: PGD, rng, on_step=None) -> float:
    """Average parameter gradients over the ascent trajectory (one update per batch)."""
    seqs, segs, _ = _flatten(batch)
    emb = model.embed(seqs).value
    delta = random_offset(emb.shape[0], emb.shape[1], segs, cfg.init_mag, rng)
    if on_step is not None:
        on_step(-1, delta)
    points = max(cfg.steps, 1)
    total = 0.0
    for k in range(points):
        node = ad.leaf(delta)
        loss = loss_ce(batch_logits(model, batch, node), labels)
        ad.backward(ad.scale(loss, 1.0 / points))
        total += float(loss.value)
        if k < cfg.steps - 1:
            delta = ascent_update(delta, node.grad * points, segs, cfg)
            if on_step is not None:
                on_step(k, delta)
    return total / points


def freelb_points(model: TextClassifier, batch: Sequence[Instance], cfg: PGD,
                  rng: np.random.Generator) -> list[np.ndarray]:
    """The offsets at which FreeLB collects gradients (exposed for checking)."""
    seqs, segs, labels = _flatten(batch)
    emb = model.embed(seqs).value
    delta = random_offset(emb.shape[0], emb.shape[1], segs, cfg.init_mag, rng)
    out = [delta]
    for _ in range(max(cfg.steps, 1) - 1):
        g = _offset_grad(model, batch, labels, delta)
        delta = ascent_update(delta, g, segs, cfg)
        out.append(delta)
    for p in model.parameters:
        p.grad = None
    return out


# ----------------------------------------------------------------------------
# training loop


def accuracy(model: TextClassifier, instances: Sequence[Instance], batch_size: int = 256) -> float:
    if not instances:
        raise ValueError("no instances to evaluate")
    correct = 0
    for i in range(0, len(instances), batch_size):
        chunk = instances[i:i + batch_size]
        seqs = [s for inst, _ in chunk for s in inst]
        logits = model.logits_array(seqs).reshape(len(chunk), -1)
        correct += int((np.argmax(logits, axis=1) == np.array([y for _, y in chunk])).sum())
    return correct / len(instances)


@dataclass
class EpochStats:
    lr: float
    epoch: int
    train_loss: float
    val_acc: float
    wall_ms: float


@dataclass
class TrainResult:
    model: TextClassifier
    best_lr: float
    best_epoch: int
    val_acc: float
    wall_ms: float
    stats: list[EpochStats] = field(default_factory=list)

    def stats_rows(self) -> list[dict]:
        return [asdict(s) for s in self.stats]


def train(model: TextClassifier, train_set: Sequence[Instance], val_set: Sequence[Instance],
          defence: DefenceConfig, tc: TrainConfig | None = None) -> TrainResult:
    """Fine-tune from ``model``'s current parameters once per learning-rate candidate.

    Each candidate runs the full ``tc.epochs``; the candidate whose final model
    has the highest validation accuracy is loaded back into ``model`` (ties
    keep the earlier candidate). ``wall_ms`` counts only the batch loops,
    summed over all candidates and epochs.
    """
    tc = tc or TrainConfig()
    if not train_set or not val_set:
        raise ValueError("train and validation splits must be non-empty")
    init = model.state()
    best_state, best = None, (-1.0, 0.0)
    stats: list[EpochStats] = []
    wall = 0.0
    for lr in tc.lrs:
        model.load_state(init)
        opt = ad.Adam(model.parameters, lr)
        rng = np.random.default_rng(tc.seed)
        for epoch in range(1, tc.epochs + 1):
            order = rng.permutation(len(train_set))
            losses = []
            t0 = time.perf_counter()
            for start in range(0, len(order), tc.batch_size):
                batch = [train_set[j] for j in order[start:start + tc.batch_size]]
                try:
                    losses.append(train_step(model, opt, batch, defence, rng))
                except (ad.NonFiniteError, TrainingDiverged) as err:
                    raise TrainingDiverged(
                        f"{defence.kind}: lr={lr} epoch={epoch} batch={start // tc.batch_size}: {err}") from err
            elapsed = (time.perf_counter() - t0) * 1000.0
            wall += elapsed
            stats.append(EpochStats(lr, epoch, float(np.mean(losses)), accuracy(model, val_set), elapsed))
        if stats[-1].val_acc > best[0]:
            best = (stats[-1].val_acc, lr)
            best_state = model.state()
    model.load_state(best_state)
    return TrainResult(model, best[1], tc.epochs, best[0], wall, stats)


def sweep(model: TextClassifier, train_set, val_set, make_cfg: Callable[[float], DefenceConfig],
          values: Sequence[float], tc: TrainConfig | None = None) -> tuple[list[tuple[float, float]], TrainResult]:
    """Validation sweep over one defence hyperparameter.

    Returns ``[(value, best val acc), ...]`` and the winning training result.
    """
    init = model.state()
    table, winner = [], None
    for v in values:
        candidate = copy.deepcopy(model)
        candidate.load_state(init)
        res = train(candidate, train_set, val_set, make_cfg(v), tc)
        table.append((v, res.val_acc))
        if winner is None or res.val_acc > winner.val_acc:
            winner = res
    return table, winner
