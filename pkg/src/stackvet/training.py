"""Optimization: BCE loss, Adam with coupled weight decay, step-decay LR,
early stopping on validation loss, and grouped k-fold cross-validation.

Every stochastic choice (shuffles, dropout masks, fold assignment, weight
init) derives from the config seed plus structural indices, so a rerun of
the same config is bitwise identical and a save/load round trip between
steps changes nothing.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import tensor as T
from .datagen import MultiDepthSample
from .evaluation import EvalReport, evaluate_scores, roc_auc
from .jsonutil import dumps_canonical
from .models import Model, ModelSpec, build_model, predict
from .tensor import Tensor

PROB_CLAMP = 1e-7


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-3
    lr_decay_factor: float = 0.1
    lr_decay_every: int = 5
    epochs: int = 20
    batch_size: int = 32
    weight_decay: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    patience: int = 5
    seed: int = 0
    k_folds: int = 5

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2 (batch norm), got {self.batch_size}")
        if self.lr_decay_every < 1:
            raise ValueError(f"lr_decay_every must be >= 1, got {self.lr_decay_every}")
        if self.patience < 1:
            raise ValueError(f"patience must be >= 1, got {self.patience}")
        if self.seed < 0:
            raise ValueError(f"seed must be >= 0, got {self.seed}")

    def to_dict(self) -> dict:
        return {
            "learning_rate": self.learning_rate,
            "lr_decay_factor": self.lr_decay_factor,
            "lr_decay_every": self.lr_decay_every,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "weight_decay": self.weight_decay,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "epsilon": self.epsilon,
            "patience": self.patience,
            "seed": self.seed,
            "k_folds": self.k_folds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls().to_dict())
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown train keys: {sorted(extra)}")
        return cls(**d)


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """Step decay: base * factor^(epoch // every), epochs counted from 0."""
    if epoch < 0:
        raise ValueError(f"epoch must be >= 0, got {epoch}")
    return cfg.learning_rate * cfg.lr_decay_factor ** (epoch // cfg.lr_decay_every)


def bce_loss(probs: Tensor, labels: np.ndarray) -> Tensor:
    """Mean binary cross-entropy on probabilities, clamped to
    [1e-7, 1 - 1e-7] so extreme scores stay finite."""
    y = Tensor(np.asarray(labels).astype(probs.data.dtype))
    if y.shape != probs.shape:
        raise ValueError(f"probs/labels shape mismatch: {probs.shape} vs {y.shape}")
    p = T.clip(probs, PROB_CLAMP, 1.0 - PROB_CLAMP)
    term = y * T.log(p) + (1.0 - y) * T.log(1.0 - p)
    return -T.tmean(term)


def bce_value(scores: np.ndarray, labels: np.ndarray) -> float:
    """Loss of fixed scores (no graph), same clamping as bce_loss."""
    p = np.clip(np.asarray(scores, dtype=np.float64), PROB_CLAMP, 1.0 - PROB_CLAMP)
    y = np.asarray(labels, dtype=np.float64)
    return float(-np.mean(y * np.log(p) + (1.0 - y) * np.log(1.0 - p)))


@dataclass
class AdamState:
    """First/second moment buffers aligned with a parameter list."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0

    @classmethod
    def for_params(cls, params) -> "AdamState":
        return cls(m=[np.zeros_like(p.data) for p in params], v=[np.zeros_like(p.data) for p in params])


def adam_step(params, state: AdamState, lr: float, cfg: TrainConfig) -> None:
    """One Adam update with bias correction; weight decay is coupled
    (added to the gradient before the moment updates)."""
    if len(params) != len(state.m):
        raise ValueError(f"optimizer state holds {len(state.m)} params, got {len(params)}")
    state.t += 1
    b1, b2 = cfg.beta1, cfg.beta2
    c1 = 1.0 - b1**state.t
    c2 = 1.0 - b2**state.t
    for p, m, v in zip(params, state.m, state.v):
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if cfg.weight_decay:
            g = g + p.data.dtype.type(cfg.weight_decay) * p.data
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        mhat = m / m.dtype.type(c1)
        vhat = v / v.dtype.type(c2)
        p.data -= p.data.dtype.type(lr) * mhat / (np.sqrt(vhat) + p.data.dtype.type(cfg.epsilon))


@dataclass
class TrainHistory:
    epochs: list[dict] = field(default_factory=list)
    best_epoch: int = -1
    best_val_loss: float = float("inf")
    stopped_early: bool = False


def _stack(samples: list[MultiDepthSample]) -> tuple[np.ndarray, np.ndarray]:
    x = np.stack([s.channels for s in samples]).astype(np.float32)
    y = np.array([s.label for s in samples], dtype=np.int64)
    return x, y


def predict_batched(model: Model, x: np.ndarray, batch: int = 256) -> np.ndarray:
    out = np.empty(x.shape[0], dtype=np.float64)
    for i in range(0, x.shape[0], batch):
        out[i : i + batch] = predict(model, x[i : i + batch], mode="infer")
    return out


def _batch_bounds(n: int, batch_size: int) -> list[tuple[int, int]]:
    bounds = [(i, min(i + batch_size, n)) for i in range(0, n, batch_size)]
    # Batch norm needs >= 2 samples; fold a trailing singleton into its neighbor.
    if len(bounds) > 1 and bounds[-1][1] - bounds[-1][0] < 2:
        lo, _ = bounds[-2]
        bounds[-2:] = [(lo, n)]
    return bounds


def train(
    model: Model,
    train_samples: list[MultiDepthSample],
    val_samples: list[MultiDepthSample],
    cfg: TrainConfig,
    log_stream=None,
) -> TrainHistory:
    """Optimize in place; keeps the epoch with the lowest validation loss.

    Stops once that loss has not improved for `patience` consecutive epochs.
    When log_stream is given, one canonical-JSON record per epoch is written
    (epoch, lr, train_loss, val_loss, val_auc).
    """
    if len(train_samples) < 2:
        raise ValueError(f"need at least 2 training samples, got {len(train_samples)}")
    if not val_samples:
        raise ValueError("need at least 1 validation sample")
    x_train, y_train = _stack(train_samples)
    x_val, y_val = _stack(val_samples)
    params = model.parameters()
    state = AdamState.for_params(params)
    history = TrainHistory()
    best_snap = None

    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        order = np.random.default_rng([cfg.seed, 1, epoch]).permutation(len(train_samples))
        loss_sum = 0.0
        for bi, (lo, hi) in enumerate(_batch_bounds(len(order), cfg.batch_size)):
            idx = order[lo:hi]
            drop_rng = np.random.default_rng([cfg.seed, 2, epoch, bi])
            model.zero_grad()
            probs = model.forward(x_train[idx], mode="train", rng=drop_rng)
            loss = bce_loss(probs, y_train[idx])
            loss.backward()
            adam_step(params, state, lr, cfg)
            loss_sum += loss.item() * len(idx)
        train_loss = loss_sum / len(order)

        val_scores = predict_batched(model, x_val)
        val_loss = bce_value(val_scores, y_val)
        try:
            _, val_auc = roc_auc(val_scores, y_val)
        except ValueError:
            val_auc = None

        record = {
            "epoch": epoch,
            "lr": lr,
            "train_loss": train_loss,
            "val_loss": val_loss,
            "val_auc": val_auc,
        }
        history.epochs.append(record)
        if log_stream is not None:
            log_stream.write(dumps_canonical(record) + "\n")
            log_stream.flush()

        if val_loss < history.best_val_loss:
            history.best_val_loss = val_loss
            history.best_epoch = epoch
            best_snap = model.snapshot()
        elif epoch - history.best_epoch >= cfg.patience:
            history.stopped_early = True
            break

    if best_snap is not None:
        model.restore(best_snap)
    return history


@dataclass
class FoldResult:
    fold: int
    model: Model
    history: TrainHistory
    report: EvalReport
    val_base_ids: list[str]


@dataclass
class CVResult:
    folds: list[FoldResult]
    aggregate: dict  # metric -> {"mean":..., "std":...} or None

    @property
    def models(self) -> list[Model]:
        return [f.model for f in self.folds]


def _aggregate(fold_values: list[float | None]) -> dict | None:
    """Mean/std across folds; any undefined fold keeps the aggregate honest
    by making it None rather than folding zeros into an average."""
    if any(v is None for v in fold_values):
        return None
    arr = np.array(fold_values, dtype=np.float64)
    return {"mean": float(arr.mean()), "std": float(arr.std())}


def cross_validate(
    samples: list[MultiDepthSample],
    spec: ModelSpec,
    cfg: TrainConfig,
    k: int | None = None,
    log_streams=None,
) -> CVResult:
    """Grouped k-fold: all variants of one base id stay in one fold; fold
    sizes (in base ids) differ by at most one. Each fold's model trains on
    the other k-1 folds and is scored on its own fold."""
    k = cfg.k_folds if k is None else k
    base_ids = sorted({s.base_id for s in samples})
    if k < 2:
        raise ValueError(f"k must be >= 2, got {k}")
    if len(base_ids) < k:
        raise ValueError(f"{len(base_ids)} source groups cannot fill {k} folds")
    order = np.random.default_rng([cfg.seed, 3]).permutation(len(base_ids))
    fold_of = {base_ids[j]: int(i % k) for i, j in enumerate(order)}

    folds: list[FoldResult] = []
    for fold in range(k):
        train_part = [s for s in samples if fold_of[s.base_id] != fold]
        val_part = [s for s in samples if fold_of[s.base_id] == fold]
        model = build_model(spec, rng=np.random.default_rng([cfg.seed, 4, fold]), dtype=np.float32)
        fold_cfg = replace(cfg, seed=cfg.seed * 1000 + fold)
        stream = log_streams[fold] if log_streams else None
        history = train(model, train_part, val_part, fold_cfg, log_stream=stream)
        scores = predict_batched(model, _stack(val_part)[0])
        report = evaluate_scores(scores, [s.label for s in val_part])
        folds.append(
            FoldResult(
                fold=fold,
                model=model,
                history=history,
                report=report,
                val_base_ids=sorted({s.base_id for s in val_part}),
            )
        )

    agg: dict = {}
    for name in ("accuracy", "recall", "precision", "f1", "inverse_precision"):
        agg[name] = _aggregate([getattr(f.report.metrics, name) for f in folds])
    agg["auc"] = _aggregate([f.report.auc for f in folds])
    return CVResult(folds=folds, aggregate=agg)
