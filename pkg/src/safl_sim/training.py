"""Per-device stochastic gradient descent over a local shard."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .objectives import Dataset, Objective, grad

SAMPLE_ORDERS = ("iid_draw", "shuffle")


class DivergenceError(FloatingPointError):
    """Parameters or gradients left the finite range."""

    def __init__(self, message: str, round_index: int | None = None):
        super().__init__(message)
        self.round_index = round_index


@dataclass(frozen=True)
class LrSchedule:
    """Learning-rate schedule: ``constant`` alpha or ``inverse`` alpha0/(t+1)."""

    kind: str = "constant"
    value: float = 0.01

    def __post_init__(self):
        if self.kind not in ("constant", "inverse"):
            raise ValueError(f"unknown schedule kind {self.kind!r}")
        if self.value <= 0:
            raise ValueError("learning rate must be > 0")

    def rate(self, step: int) -> float:
        if self.kind == "constant":
            return self.value
        return self.value / (step + 1)

    def rates(self, start_step: int, count: int) -> np.ndarray:
        if self.kind == "constant":
            return np.full(count, self.value)
        return self.value / (np.arange(start_step, start_step + count) + 1.0)


def sgd_step(w: np.ndarray, sample, obj: Objective, alpha: float) -> np.ndarray:
    """One stochastic gradient step ``w - alpha * grad(w; sample)``."""
    if alpha < 0:
        raise ValueError("alpha must be >= 0")
    g = grad(obj, w, sample)
    if not np.isfinite(g).all():
        raise DivergenceError("non-finite gradient in sgd_step")
    return w - alpha * g


def _sample_indices(m: int, epochs: int, order: str, rng: np.random.Generator) -> np.ndarray:
    if order == "iid_draw":
        return rng.integers(0, m, size=epochs * m)
    return np.concatenate([rng.permutation(m) for _ in range(epochs)])


def run_local_epochs(
    w: np.ndarray,
    shard: Dataset,
    obj: Objective,
    epochs: int,
    schedule: LrSchedule,
    rng: np.random.Generator,
    *,
    start_step: int = 0,
    order: str = "iid_draw",
) -> tuple[np.ndarray, int]:
    """Run ``epochs`` passes of per-sample SGD over ``shard``.

    Returns the trained parameters and the number of steps taken, which is
    always ``epochs * len(shard)``.  ``order="iid_draw"`` samples with
    replacement each step; ``order="shuffle"`` reshuffles the shard per epoch.
    ``start_step`` offsets the schedule for devices that trained before.
    """
    if epochs < 1:
        raise ValueError("epochs must be >= 1")
    if order not in SAMPLE_ORDERS:
        raise ValueError(f"unknown sample order {order!r}")
    m = len(shard)
    if m == 0:
        raise ValueError("cannot train on an empty shard")
    steps = epochs * m
    idx = _sample_indices(m, epochs, order, rng)
    alphas = schedule.rates(start_step, steps)
    w = np.array(w, dtype=np.float64, copy=True)
    X, y = shard.X, shard.y

    # overflow is caught by the per-epoch finite check, not by numpy warnings
    np_err = np.errstate(over="ignore", invalid="ignore")
    with np_err:
        if obj.kind in ("least_squares", "ridge"):
            reg = obj.reg
            for e in range(epochs):
                base = e * m
                for j in range(m):
                    i = idx[base + j]
                    x = X[i]
                    g = (x @ w - y[i]) * x
                    if reg:
                        g += reg * w
                    w -= alphas[base + j] * g
                if not np.isfinite(w).all():
                    raise DivergenceError("parameters diverged during local training")
        elif obj.kind == "multinomial_logistic":
            C, d, reg = obj.n_classes, obj.dim, obj.reg
            W = w.reshape(C, d)
            for e in range(epochs):
                base = e * m
                for j in range(m):
                    i = idx[base + j]
                    x = X[i]
                    scores = W @ x
                    scores -= scores.max()
                    p = np.exp(scores)
                    p /= p.sum()
                    p[int(y[i])] -= 1.0
                    W -= alphas[base + j] * (np.outer(p, x) + reg * W)
                if not np.isfinite(W).all():
                    raise DivergenceError("parameters diverged during local training")
            w = W.ravel()
        else:
            for j in range(steps):
                w = sgd_step(w, shard.sample(int(idx[j])), obj, float(alphas[j]))
            if not np.isfinite(w).all():
                raise DivergenceError("parameters diverged during local training")
    return w, steps
