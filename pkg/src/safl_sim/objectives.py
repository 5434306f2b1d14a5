"""Convex learning objectives with per-sample losses, gradients, and solvable optima.

Four loss families are supported:

* ``least_squares``   f(w; x, y) = 0.5 (x'w - y)^2
* ``ridge``           least squares plus 0.5 * reg * ||w||^2
* ``lasso``           (y - x'w)^2 + reg * ||w||_1  (non-smooth, oracle-only)
* ``multinomial_logistic``  cross-entropy over C classes plus 0.5 * reg * ||w||^2,
  parameters stored as a flat vector of length C * d

The smooth families carry Hessian eigenvalue bounds (strong convexity mu,
smoothness lam) and a per-device stochastic-gradient variance estimate, which
downstream convergence-bound evaluation consumes.  The lasso family exists for
the two-device toy problem whose optima are exact rationals; it cannot be
trained by gradient steps.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

OBJECTIVE_KINDS = ("least_squares", "ridge", "lasso", "multinomial_logistic")


class GradientUnavailableError(TypeError):
    """Gradient or curvature requested for a non-smooth objective."""


class ConvergenceError(RuntimeError):
    """Iterative solver exhausted its iteration budget."""


@dataclass(frozen=True)
class Sample:
    """One labelled example: feature vector ``x`` and target ``y``."""

    x: np.ndarray
    y: float


class Dataset:
    """In-memory dataset: features ``X`` of shape (m, d) and targets ``y`` of shape (m,).

    ``n_classes`` is set for classification data (integer labels in
    ``[0, n_classes)``) and ``None`` for regression targets.
    """

    __slots__ = ("X", "y", "n_classes")

    def __init__(self, X: np.ndarray, y: np.ndarray, n_classes: int | None = None):
        X = np.ascontiguousarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise ValueError("X must be a 2-d array of shape (m, d)")
        if n_classes is not None:
            y = np.ascontiguousarray(y, dtype=np.int64)
            if n_classes < 2:
                raise ValueError("n_classes must be >= 2")
            if y.size and (y.min() < 0 or y.max() >= n_classes):
                raise ValueError("class labels must lie in [0, n_classes)")
        else:
            y = np.ascontiguousarray(y, dtype=np.float64)
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise ValueError("y must be 1-d with one entry per row of X")
        self.X = X
        self.y = y
        self.n_classes = n_classes

    def __len__(self) -> int:
        return self.X.shape[0]

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    @property
    def is_classification(self) -> bool:
        return self.n_classes is not None

    def sample(self, i: int) -> Sample:
        return Sample(self.X[i], self.y[i])

    def subset(self, indices) -> "Dataset":
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.X[idx], self.y[idx], self.n_classes)

    def labels(self) -> np.ndarray:
        """Distinct class labels present, sorted."""
        if not self.is_classification:
            raise ValueError("labels() requires classification data")
        return np.unique(self.y)

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        if not parts:
            raise ValueError("cannot concatenate zero datasets")
        n_classes = parts[0].n_classes
        if any(p.n_classes != n_classes for p in parts):
            raise ValueError("datasets disagree on n_classes")
        return Dataset(
            np.concatenate([p.X for p in parts]),
            np.concatenate([p.y for p in parts]),
            n_classes,
        )


@dataclass(frozen=True)
class Objective:
    """A loss family over parameter vectors of length ``param_dim``.

    ``dim`` is the feature dimension; multinomial logistic flattens its
    (n_classes, dim) weight matrix row-major into a single vector.
    """

    kind: str
    dim: int
    reg: float = 0.0
    n_classes: int | None = None

    def __post_init__(self):
        if self.kind not in OBJECTIVE_KINDS:
            raise ValueError(f"unknown objective kind {self.kind!r}")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.kind in ("ridge", "lasso", "multinomial_logistic") and self.reg <= 0:
            raise ValueError(f"{self.kind} requires reg > 0")
        if self.kind == "least_squares" and self.reg != 0.0:
            raise ValueError("least_squares does not take a regulariser; use ridge")
        if self.kind == "multinomial_logistic":
            if self.n_classes is None or self.n_classes < 2:
                raise ValueError("multinomial_logistic requires n_classes >= 2")
        elif self.n_classes is not None:
            raise ValueError(f"{self.kind} does not take n_classes")

    @property
    def param_dim(self) -> int:
        if self.kind == "multinomial_logistic":
            return self.dim * self.n_classes
        return self.dim

    @property
    def is_smooth(self) -> bool:
        return self.kind != "lasso"

    @property
    def is_classification(self) -> bool:
        return self.kind == "multinomial_logistic"


@dataclass(frozen=True)
class CurvatureBounds:
    """Hessian eigenvalue bounds and a per-sample gradient variance estimate.

    ``sigma_sq`` is the max over samples of the squared deviation between the
    per-sample gradient and the full gradient, both evaluated at the dataset
    optimum.  It upper-bounds the trace of the single-draw stochastic-gradient
    covariance at that point.
    """

    mu: float
    lam: float
    sigma_sq: float

    def __post_init__(self):
        if not (self.lam >= self.mu >= 0.0):
            raise ValueError("curvature bounds need lam >= mu >= 0")
        if self.sigma_sq < 0.0:
            raise ValueError("sigma_sq must be >= 0")


def _check_param(obj: Objective, w: np.ndarray) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    if w.shape != (obj.param_dim,):
        raise ValueError(f"parameter vector has shape {w.shape}, expected ({obj.param_dim},)")
    return w


def _check_sample(obj: Objective, s: Sample) -> None:
    if np.shape(s.x) != (obj.dim,):
        raise ValueError(f"sample feature vector has shape {np.shape(s.x)}, expected ({obj.dim},)")


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def loss(obj: Objective, w: np.ndarray, s: Sample) -> float:
    """Per-sample loss at ``w``."""
    w = _check_param(obj, w)
    _check_sample(obj, s)
    if obj.kind == "least_squares":
        r = float(s.x @ w - s.y)
        return 0.5 * r * r
    if obj.kind == "ridge":
        r = float(s.x @ w - s.y)
        return 0.5 * r * r + 0.5 * obj.reg * float(w @ w)
    if obj.kind == "lasso":
        r = float(s.y - s.x @ w)
        return r * r + obj.reg * float(np.abs(w).sum())
    # multinomial_logistic
    scores = w.reshape(obj.n_classes, obj.dim) @ s.x
    ce = -float(_log_softmax(scores)[int(s.y)])
    return ce + 0.5 * obj.reg * float(w @ w)


def grad(obj: Objective, w: np.ndarray, s: Sample) -> np.ndarray:
    """Per-sample gradient at ``w``.  Raises for the non-smooth lasso family."""
    w = _check_param(obj, w)
    _check_sample(obj, s)
    if obj.kind == "lasso":
        raise GradientUnavailableError("lasso is non-smooth; use optimum_oracle instead")
    if obj.kind in ("least_squares", "ridge"):
        g = (float(s.x @ w - s.y)) * s.x
        if obj.reg:
            g = g + obj.reg * w
        return np.asarray(g, dtype=np.float64)
    scores = w.reshape(obj.n_classes, obj.dim) @ s.x
    p = np.exp(_log_softmax(scores))
    p[int(s.y)] -= 1.0
    return (np.outer(p, s.x)).ravel() + obj.reg * w


def empirical_risk(obj: Objective, w: np.ndarray, dataset: Dataset) -> float:
    """Mean of the per-sample losses over ``dataset``."""
    w = _check_param(obj, w)
    m = len(dataset)
    if m == 0:
        raise ValueError("empirical risk of an empty dataset is undefined")
    if dataset.dim != obj.dim:
        raise ValueError("dataset dimension does not match the objective")
    X, y = dataset.X, dataset.y
    if obj.kind in ("least_squares", "ridge"):
        r = X @ w - y
        val = 0.5 * float(r @ r) / m
        if obj.reg:
            val += 0.5 * obj.reg * float(w @ w)
        return val
    if obj.kind == "lasso":
        r = y - X @ w
        return float(r @ r) / m + obj.reg * float(np.abs(w).sum())
    scores = X @ w.reshape(obj.n_classes, obj.dim).T
    logp = _log_softmax(scores)
    ce = -float(logp[np.arange(m), dataset.y].sum()) / m
    return ce + 0.5 * obj.reg * float(w @ w)


def per_sample_grads(obj: Objective, w: np.ndarray, dataset: Dataset) -> np.ndarray:
    """All per-sample gradients at ``w``, stacked into shape (m, param_dim)."""
    w = _check_param(obj, w)
    if not obj.is_smooth:
        raise GradientUnavailableError("lasso is non-smooth")
    X, y = dataset.X, dataset.y
    if obj.kind in ("least_squares", "ridge"):
        G = (X @ w - y)[:, None] * X
        if obj.reg:
            G = G + obj.reg * w
        return G
    m = len(dataset)
    P = np.exp(_log_softmax(X @ w.reshape(obj.n_classes, obj.dim).T))
    P[np.arange(m), y] -= 1.0
    G = np.einsum("mc,md->mcd", P, X).reshape(m, obj.param_dim)
    return G + obj.reg * w


def predict_classes(obj: Objective, w: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Argmax class predictions for a classification objective."""
    if not obj.is_classification:
        raise ValueError("class prediction requires a classification objective")
    w = _check_param(obj, w)
    scores = dataset.X @ w.reshape(obj.n_classes, obj.dim).T
    return scores.argmax(axis=1)


def curvature(obj: Objective, dataset: Dataset) -> CurvatureBounds:
    """Hessian eigenvalue bounds and gradient-variance estimate for ``dataset``.

    For quadratic families the bounds are the exact extreme eigenvalues of the
    dataset Hessian X'X/m (plus reg).  For multinomial logistic the Hessian
    depends on w, so mu falls back to the regulariser (the guaranteed global
    lower bound) and lam to 0.5 * eigmax(X'X/m) + reg (the global upper bound).
    """
    if not obj.is_smooth:
        raise GradientUnavailableError("curvature is undefined for the lasso family")
    m = len(dataset)
    if m == 0:
        raise ValueError("curvature of an empty dataset is undefined")
    H = dataset.X.T @ dataset.X / m
    eigs = np.linalg.eigvalsh(H)
    if obj.kind in ("least_squares", "ridge"):
        mu = float(max(eigs[0], 0.0)) + obj.reg
        lam = float(eigs[-1]) + obj.reg
    else:
        mu = obj.reg
        lam = 0.5 * float(eigs[-1]) + obj.reg
    w_star = optimum_oracle(obj, dataset)
    G = per_sample_grads(obj, w_star, dataset)
    dev = G - G.mean(axis=0)
    sigma_sq = float((dev * dev).sum(axis=1).max())
    return CurvatureBounds(mu=mu, lam=max(lam, mu), sigma_sq=sigma_sq)


def _lasso_is_separable(dataset: Dataset) -> bool:
    return bool(((dataset.X != 0.0).sum(axis=1) <= 1).all())


def _lasso_separable_optimum(dataset: Dataset, reg: float) -> np.ndarray:
    # Exact rational soft-threshold per coordinate; valid because every sample
    # touches at most one coordinate, so the objective splits coordinate-wise.
    d = dataset.dim
    w = np.zeros(d)
    half = Fraction(reg) / 2
    for j in range(d):
        rows = np.nonzero(dataset.X[:, j])[0]
        if rows.size == 0:
            continue
        a = sum((Fraction(float(dataset.X[i, j])) ** 2 for i in rows), Fraction(0))
        b = sum(
            (Fraction(float(dataset.X[i, j])) * Fraction(float(dataset.y[i])) for i in rows),
            Fraction(0),
        )
        mag = abs(b) - half
        if mag > 0:
            w[j] = float((mag if b > 0 else -mag) / a)
    return w


def _lasso_coordinate_descent(dataset: Dataset, reg: float, tol: float = 1e-12, max_sweeps: int = 10_000) -> np.ndarray:
    X, y = dataset.X, dataset.y
    d = X.shape[1]
    half = 0.5 * reg
    col_sq = (X * X).sum(axis=0)
    w = np.zeros(d)
    resid = y.copy()
    for _ in range(max_sweeps):
        biggest = 0.0
        for j in range(d):
            if col_sq[j] == 0.0:
                continue
            rho = float(X[:, j] @ resid) + col_sq[j] * w[j]
            new = 0.0
            if abs(rho) > half:
                new = (rho - half * np.sign(rho)) / col_sq[j]
            if new != w[j]:
                resid -= (new - w[j]) * X[:, j]
                biggest = max(biggest, abs(new - w[j]))
                w[j] = new
        if biggest < tol:
            return w
    raise ConvergenceError("lasso coordinate descent did not converge")


def optimum_oracle(
    obj: Objective,
    dataset: Dataset,
    *,
    tol: float = 1e-10,
    max_iter: int = 200_000,
) -> np.ndarray:
    """Arg-min of the empirical risk over ``dataset``.

    Least squares and ridge use the closed form; multinomial logistic runs
    full-batch gradient descent until the gradient norm drops below ``tol``.
    Lasso minimises the summed cost ``sum_i (y_i - x_i'w)^2 + reg * ||w||_1``
    (the form whose coordinate-wise solution is an exact soft threshold, in
    rational arithmetic when every sample touches a single coordinate); per
    sample that is the same objective as ``loss``, and for multi-sample data
    it weighs the penalty once rather than once per sample.
    """
    m = len(dataset)
    if m == 0:
        raise ValueError("cannot solve an empty dataset")
    if dataset.dim != obj.dim:
        raise ValueError("dataset dimension does not match the objective")
    X, y = dataset.X, dataset.y
    if obj.kind == "least_squares":
        w, *_ = np.linalg.lstsq(X, y, rcond=None)
        return w
    if obj.kind == "ridge":
        H = X.T @ X / m + obj.reg * np.eye(obj.dim)
        return np.linalg.solve(H, X.T @ y / m)
    if obj.kind == "lasso":
        if _lasso_is_separable(dataset):
            return _lasso_separable_optimum(dataset, obj.reg)
        return _lasso_coordinate_descent(dataset, obj.reg)
    # multinomial logistic: full-batch gradient descent with step 1 / lam
    eigs = np.linalg.eigvalsh(X.T @ X / m)
    lam = 0.5 * float(eigs[-1]) + obj.reg
    step = 1.0 / lam
    w = np.zeros(obj.param_dim)
    C = obj.n_classes
    labels = dataset.y
    rows = np.arange(m)
    for _ in range(max_iter):
        P = np.exp(_log_softmax(X @ w.reshape(C, obj.dim).T))
        P[rows, labels] -= 1.0
        g = (P.T @ X).ravel() / m + obj.reg * w
        gnorm = float(np.linalg.norm(g))
        if gnorm <= tol:
            return w
        w = w - step * g
    raise ConvergenceError(f"logistic solver still has gradient norm {gnorm:.3e} after {max_iter} iterations")
