"""The learned fusion head and its training machinery.

The head is a linear map from the 2*K fused logits to 2 class logits followed
by softmax, trained with momentum SGD under a one-cycle learning-rate policy
on a per-token cross-entropy objective. The module also provides the
cosine-to-prototype squared-error loss used to train scoring heads, together
with its analytic gradient.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_is_fitted

from .validation import as_binary_labels, check_consistent_length, readonly


@dataclass(frozen=True)
class OneCycleSchedule:
    """One-cycle learning rate policy: warm up to ``max_lr``, then anneal down.

    The rate starts at ``max_lr / div_factor``, peaks at ``max_lr`` on step
    ``round(pct_start * total_steps)``, and ends at ``max_lr /
    final_div_factor`` on the last step. Both phases interpolate with the
    chosen ``anneal`` shape (cosine or linear), so the rate is non-decreasing
    up to the peak and non-increasing after it.
    """

    total_steps: int
    max_lr: float
    pct_start: float = 0.3
    div_factor: float = 25.0
    final_div_factor: float = 1e4
    anneal: str = "cosine"

    def __post_init__(self) -> None:
        if self.total_steps < 3:
            raise ValueError("one-cycle schedule needs total_steps >= 3")
        if not (self.max_lr > 0 and math.isfinite(self.max_lr)):
            raise ValueError(f"max_lr must be positive and finite, got {self.max_lr}")
        if not 0.0 < self.pct_start < 1.0:
            raise ValueError(f"pct_start must be in (0, 1), got {self.pct_start}")
        if self.div_factor < 1.0 or self.final_div_factor < 1.0:
            raise ValueError("div_factor and final_div_factor must be >= 1")
        if self.anneal not in ("cosine", "linear"):
            raise ValueError(f"anneal must be 'cosine' or 'linear', got {self.anneal!r}")
        peak = self.peak_step
        if not 1 <= peak <= self.total_steps - 2:
            raise ValueError(
                f"peak step {peak} leaves no room for both phases "
                f"(total_steps={self.total_steps}, pct_start={self.pct_start})"
            )

    @property
    def peak_step(self) -> int:
        return int(round(self.pct_start * self.total_steps))

    @property
    def initial_lr(self) -> float:
        return self.max_lr / self.div_factor

    @property
    def final_lr(self) -> float:
        return self.max_lr / self.final_div_factor

    def _interp(self, start: float, end: float, t: int, span: int) -> float:
        if t == 0:
            return start
        if t == span:
            return end
        if self.anneal == "cosine":
            return end + (start - end) * (1.0 + math.cos(math.pi * t / span)) / 2.0
        return start + (end - start) * (t / span)

    def lr_at(self, step: int) -> float:
        if not 0 <= step < self.total_steps:
            raise ValueError(f"step {step} out of range [0, {self.total_steps})")
        peak = self.peak_step
        if step <= peak:
            return self._interp(self.initial_lr, self.max_lr, step, peak)
        return self._interp(self.max_lr, self.final_lr, step - peak, self.total_steps - 1 - peak)


def lr_at(schedule: OneCycleSchedule, step: int) -> float:
    """Learning rate at ``step`` under the given one-cycle schedule."""
    return schedule.lr_at(step)


def softmax_probabilities(logits) -> np.ndarray:
    """Row-wise softmax of an (N, 2) logit array, numerically stabilized."""
    z = np.asarray(logits, dtype=float)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def bce_loss(predictions, labels, *, pos_weight: float | None = None, eps: float = 1e-12) -> float:
    """Mean two-class cross entropy of (p_real, p_fake) rows against 0/1 labels.

    Probabilities are clamped at ``eps`` before the log. An optional
    ``pos_weight`` reweights fake-token terms (weighted mean).
    """
    p = np.asarray(predictions, dtype=float)
    if p.ndim != 2 or p.shape[1] != 2:
        raise ValueError(f"predictions must be (N, 2) probability rows, got shape {p.shape}")
    y = as_binary_labels(labels)
    check_consistent_length(len(p), len(y), "predictions vs labels")
    picked = p[np.arange(len(y)), y]
    losses = -np.log(np.clip(picked, eps, 1.0))
    if pos_weight is None:
        return float(losses.mean())
    w = np.where(y == 1, float(pos_weight), 1.0)
    return float((losses * w).sum() / w.sum())


class FusionClassifier(ClassifierMixin, BaseEstimator):
    """Linear fusion head: 2*K branch logits in, softmax over 2 class logits out.

    Trained with momentum SGD on per-token cross entropy. Batches are groups
    (one video per step when ``groups`` is passed to ``fit``); group order is
    reshuffled every epoch from the seeded generator, so training is
    bit-reproducible. ``schedule='one_cycle'`` applies the one-cycle policy
    over ``total_steps``; ``'constant'`` holds ``max_lr`` throughout.

    Attributes after ``fit``: ``weights_`` (2, input_dim), ``bias_`` (2,),
    ``classes_``, ``input_dim_``, ``loss_curve_`` (per-epoch mean loss),
    ``initial_loss_`` and ``final_loss_`` (full-dataset loss before/after).
    """

    def __init__(
        self,
        max_lr: float = 0.5,
        total_steps: int = 400,
        schedule: str = "one_cycle",
        pct_start: float = 0.3,
        div_factor: float = 25.0,
        final_div_factor: float = 1e4,
        anneal: str = "cosine",
        momentum: float = 0.9,
        pos_weight: float | None = None,
        random_state: int = 0,
        stream_layout=None,
    ):
        self.max_lr = max_lr
        self.total_steps = total_steps
        self.schedule = schedule
        self.pct_start = pct_start
        self.div_factor = div_factor
        self.final_div_factor = final_div_factor
        self.anneal = anneal
        self.momentum = momentum
        self.pos_weight = pos_weight
        self.random_state = random_state
        self.stream_layout = stream_layout

    def _lr_for_step(self, step: int):
        if self._schedule_ is not None:
            return self._schedule_.lr_at(step)
        return self.max_lr

    def _loss_and_grad(self, x, y):
        probs = softmax_probabilities(x @ self.weights_.T + self.bias_)
        n = len(y)
        picked = probs[np.arange(n), y]
        losses = -np.log(np.clip(picked, 1e-12, 1.0))
        onehot = np.zeros_like(probs)
        onehot[np.arange(n), y] = 1.0
        if self.pos_weight is None:
            loss = float(losses.mean())
            dz = (probs - onehot) / n
        else:
            w = np.where(y == 1, float(self.pos_weight), 1.0)
            total = w.sum()
            loss = float((losses * w).sum() / total)
            dz = (probs - onehot) * w[:, None] / total
        return loss, dz.T @ x, dz.sum(axis=0)

    def fit(self, X, y, groups=None):
        """Train on token rows. ``groups`` assigns rows to batch groups (video ids)."""
        x = np.asarray(X, dtype=float)
        if x.ndim != 2 or x.shape[0] == 0:
            raise ValueError(f"X must be a non-empty (N, D) array, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("X contains non-finite values")
        yarr = as_binary_labels(y, "y")
        check_consistent_length(len(x), len(yarr), "X vs y")
        if len(np.unique(yarr)) < 2:
            raise ValueError("training data contains a single class; cross entropy is degenerate")
        if self.schedule not in ("one_cycle", "constant"):
            raise ValueError(f"schedule must be 'one_cycle' or 'constant', got {self.schedule!r}")
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")

        if groups is None:
            group_indices = [np.arange(len(x))]
        else:
            garr = np.asarray(groups)
            check_consistent_length(len(x), len(garr), "X vs groups")
            group_indices = [np.flatnonzero(garr == g) for g in np.unique(garr)]

        rng = np.random.default_rng(self.random_state)
        dim = x.shape[1]
        bound = 1.0 / math.sqrt(dim)
        self.weights_ = rng.uniform(-bound, bound, size=(2, dim))
        self.bias_ = np.zeros(2)
        self.classes_ = np.array([0, 1])
        self.input_dim_ = dim

        # One-cycle needs at least 3 steps for distinct ramp / peak / tail;
        # shorter budgets run at the constant max_lr.
        self._schedule_ = None
        if self.schedule == "one_cycle" and self.total_steps >= 3:
            self._schedule_ = OneCycleSchedule(
                total_steps=self.total_steps,
                max_lr=self.max_lr,
                pct_start=self.pct_start,
                div_factor=self.div_factor,
                final_div_factor=self.final_div_factor,
                anneal=self.anneal,
            )

        self.initial_loss_ = bce_loss(
            softmax_probabilities(x @ self.weights_.T + self.bias_), yarr, pos_weight=self.pos_weight
        )
        vel_w = np.zeros_like(self.weights_)
        vel_b = np.zeros_like(self.bias_)
        n_groups = len(group_indices)
        order = np.arange(n_groups)
        epoch_losses: list[float] = []
        self.loss_curve_ = []
        for step in range(self.total_steps):
            if step % n_groups == 0:
                if epoch_losses:
                    self.loss_curve_.append(float(np.mean(epoch_losses)))
                    epoch_losses = []
                order = rng.permutation(n_groups)
            idx = group_indices[order[step % n_groups]]
            loss, grad_w, grad_b = self._loss_and_grad(x[idx], yarr[idx])
            if not math.isfinite(loss):
                raise FloatingPointError(
                    f"non-finite training loss at step {step} (lr={self._lr_for_step(step):.3g}); "
                    "lower max_lr or check the input scale"
                )
            epoch_losses.append(loss)
            lr = self._lr_for_step(step)
            vel_w = self.momentum * vel_w + grad_w
            vel_b = self.momentum * vel_b + grad_b
            self.weights_ = self.weights_ - lr * vel_w
            self.bias_ = self.bias_ - lr * vel_b
        if epoch_losses:
            self.loss_curve_.append(float(np.mean(epoch_losses)))
        self.final_loss_ = bce_loss(
            softmax_probabilities(x @ self.weights_.T + self.bias_), yarr, pos_weight=self.pos_weight
        )
        self.n_iter_ = self.total_steps
        return self

    def _validate_frames(self, X) -> np.ndarray:
        check_is_fitted(self, "weights_")
        x = np.asarray(X, dtype=float)
        if x.ndim != 2 or x.shape[1] != self.input_dim_:
            raise ValueError(f"expected (N, {self.input_dim_}) frames, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("input frames contain non-finite values")
        return x

    def decision_function(self, X) -> np.ndarray:
        x = self._validate_frames(X)
        logits = x @ self.weights_.T + self.bias_
        return logits[:, 1] - logits[:, 0]

    def predict_proba(self, X) -> np.ndarray:
        """Per-token (p_real, p_fake); rows sum to one."""
        x = self._validate_frames(X)
        return softmax_probabilities(x @ self.weights_.T + self.bias_)

    def predict(self, X) -> np.ndarray:
        return self.classes_[np.argmax(self.predict_proba(X), axis=1)]


@dataclass(frozen=True)
class PrototypeScorer:
    """Class prototypes for cosine-similarity scoring (row k is class k)."""

    prototypes: np.ndarray

    def __post_init__(self) -> None:
        protos = np.asarray(self.prototypes, dtype=float)
        if protos.ndim != 2 or protos.shape[0] < 2:
            raise ValueError(f"prototypes must be a (C>=2, d) matrix, got shape {protos.shape}")
        if not np.all(np.isfinite(protos)):
            raise ValueError("prototypes contain non-finite values")
        if np.any(np.linalg.norm(protos, axis=1) == 0.0):
            raise ValueError("every prototype must have non-zero norm")
        object.__setattr__(self, "prototypes", readonly(protos))

    @property
    def num_classes(self) -> int:
        return self.prototypes.shape[0]

    def cosine_scores(self, embeddings) -> np.ndarray:
        """Cosine similarity of each embedding row against each prototype: (N, C)."""
        emb = _checked_embeddings(embeddings, self.prototypes.shape[1])
        u = emb / np.linalg.norm(emb, axis=1, keepdims=True)
        v = self.prototypes / np.linalg.norm(self.prototypes, axis=1, keepdims=True)
        return u @ v.T


def _checked_embeddings(embeddings, dim: int) -> np.ndarray:
    emb = np.asarray(embeddings, dtype=float)
    if emb.ndim != 2 or emb.shape[1] != dim:
        raise ValueError(f"embeddings must be (N, {dim}), got shape {emb.shape}")
    if not np.all(np.isfinite(emb)):
        raise ValueError("embeddings contain non-finite values")
    if np.any(np.linalg.norm(emb, axis=1) == 0.0):
        raise ValueError("every embedding must have non-zero norm")
    return emb


def _checked_class_labels(labels, n: int, num_classes: int) -> np.ndarray:
    y = np.asarray(labels)
    if y.ndim != 1 or len(y) != n:
        raise ValueError(f"labels must be a length-{n} vector")
    y = y.astype(np.int64)
    if np.any(y < 0) or np.any(y >= num_classes):
        raise ValueError(f"labels must be class ids in [0, {num_classes})")
    return y


def p2sgrad_loss(embeddings, scorer: PrototypeScorer, labels) -> float:
    """Mean squared deviation of cosine similarities from the one-hot target.

    Per sample j: sum_k (cos(e_j, w_k) - [y_j == k])^2, averaged over samples.
    Invariant to positive rescaling of any embedding or prototype; bounded by
    4 * num_classes.
    """
    emb = _checked_embeddings(embeddings, scorer.prototypes.shape[1])
    y = _checked_class_labels(labels, len(emb), scorer.num_classes)
    cos = scorer.cosine_scores(emb)
    target = np.zeros_like(cos)
    target[np.arange(len(y)), y] = 1.0
    return float(((cos - target) ** 2).sum(axis=1).mean())


def p2sgrad_gradient(embeddings, scorer: PrototypeScorer, labels) -> tuple[np.ndarray, np.ndarray]:
    """Analytic gradient of ``p2sgrad_loss`` w.r.t. embeddings and prototypes.

    Uses d cos/d e = (v_hat - cos * e_hat) / |e| (and symmetrically for the
    prototypes). Returns (grad_embeddings, grad_prototypes).
    """
    emb = _checked_embeddings(embeddings, scorer.prototypes.shape[1])
    y = _checked_class_labels(labels, len(emb), scorer.num_classes)
    protos = scorer.prototypes
    e_norm = np.linalg.norm(emb, axis=1, keepdims=True)
    p_norm = np.linalg.norm(protos, axis=1, keepdims=True)
    u = emb / e_norm
    v = protos / p_norm
    cos = u @ v.T
    target = np.zeros_like(cos)
    target[np.arange(len(y)), y] = 1.0
    coeff = 2.0 * (cos - target) / len(emb)  # dL/dcos, (N, C)
    grad_emb = (coeff @ v - (coeff * cos).sum(axis=1, keepdims=True) * u) / e_norm
    grad_protos = (coeff.T @ u - (coeff * cos).sum(axis=0)[:, None] * v) / p_norm
    return grad_emb, grad_protos
