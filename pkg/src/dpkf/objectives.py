"""Differentiable test problems with hand-derived per-sample gradients.

Four objective kinds are supported: quadratic, linear regression, logistic
regression, and a tiny one-hidden-layer MLP. Gradients are analytic (no
autodiff); each kind is exercised against a finite-difference oracle in the
test suite. Per-sample evaluation is vectorised over the batch with a fixed
accumulation order, so results are bit-reproducible for a given seed.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterator

import numpy as np

from . import seeding

Sample = tuple[np.ndarray, float]


@dataclass
class Dataset:
    """Feature matrix ``X`` (n x p) with scalar targets ``y`` (n,)."""

    X: np.ndarray
    y: np.ndarray
    theta_star: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.X = np.asarray(self.X, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.X.ndim != 2 or self.X.shape[0] < 1:
            raise ValueError("dataset needs at least one sample with shared dimension")
        if self.y.shape != (self.X.shape[0],):
            raise ValueError("targets must be one scalar per sample")
        if not (np.isfinite(self.X).all() and np.isfinite(self.y).all()):
            raise ValueError("dataset entries must be finite")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    def sample(self, i: int) -> Sample:
        return self.X[i], float(self.y[i])

    def subset(self, idx: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return self.X[idx], self.y[idx]

    def to_csv(self, path) -> None:
        """Write ``x_1..x_p,y`` rows; floats use repr so re-reading is exact."""
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow([f"x_{j + 1}" for j in range(self.p)] + ["y"])
            for i in range(self.n):
                writer.writerow(
                    [repr(float(v)) for v in self.X[i]] + [repr(float(self.y[i]))]
                )

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        header, body = rows[0], rows[1:]
        if not header or header[-1] != "y":
            raise ValueError("expected header x_1..x_p,y")
        arr = np.array([[float(v) for v in row] for row in body], dtype=float)
        return cls(X=arr[:, :-1], y=arr[:, -1])


def gen_linear_regression(n: int, p: int, noise_std: float, seed: int) -> Dataset:
    """Synthetic regression data: y_i = <x_i, theta*> + noise_std * z_i.

    Features, label noise, and theta* are standard normal, all drawn from the
    ``data`` substream of ``seed``; the construction is deterministic per seed.
    """
    if n < 1 or p < 1:
        raise ValueError("need n >= 1 and p >= 1")
    if noise_std < 0:
        raise ValueError("noise_std must be >= 0")
    rng = seeding.substream(seed, seeding.DATA)
    theta_star = rng.standard_normal(p)
    X = rng.standard_normal((n, p))
    noise = rng.standard_normal(n)
    y = X @ theta_star + noise_std * noise
    return Dataset(X=X, y=y, theta_star=theta_star)


def gen_classification(n: int, p: int, seed: int) -> Dataset:
    """Linearly separable-ish binary labels in {-1, +1} from a random hyperplane."""
    if n < 1 or p < 1:
        raise ValueError("need n >= 1 and p >= 1")
    rng = seeding.substream(seed, seeding.DATA)
    theta_star = rng.standard_normal(p)
    X = rng.standard_normal((n, p))
    y = np.sign(X @ theta_star + 0.3 * rng.standard_normal(n))
    y[y == 0] = 1.0
    return Dataset(X=X, y=y, theta_star=theta_star)


class Objective:
    """Base class: per-sample losses/gradients, vectorised over a batch."""

    kind: str = ""
    dim: int = 0

    def per_sample_losses(self, x: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def per_sample_grads(self, x: np.ndarray, X: np.ndarray, y: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def smoothness(self, dataset: Dataset | None = None) -> float | None:
        """Smoothness constant of the mean loss, when computable exactly."""
        return None

    def init_point(self, seed: int, scale: float = 1.0) -> np.ndarray:
        rng = seeding.substream(seed, seeding.INIT)
        return scale * rng.standard_normal(self.dim)

    def _check_dim(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.dim,):
            raise ValueError(f"parameter vector must have shape ({self.dim},), got {x.shape}")
        return x


class Quadratic(Objective):
    """f(x; xi) = 0.5 (x - x*)^T H (x - x*) for every sample.

    Samples carry no information, so the stochastic-gradient variance is
    exactly zero; this is the workhorse for closed-form checks.
    """

    kind = "quadratic"

    def __init__(self, H: np.ndarray, x_star: np.ndarray | None = None):
        H = np.asarray(H, dtype=float)
        if H.ndim != 2 or H.shape[0] != H.shape[1]:
            raise ValueError("H must be square")
        if not np.allclose(H, H.T, atol=1e-12):
            raise ValueError("H must be symmetric")
        self.H = H
        self.dim = H.shape[0]
        self.x_star = np.zeros(self.dim) if x_star is None else np.asarray(x_star, dtype=float)

    def per_sample_losses(self, x, X, y):
        x = self._check_dim(x)
        r = x - self.x_star
        val = 0.5 * float(r @ self.H @ r)
        return np.full(len(X), val)

    def per_sample_grads(self, x, X, y):
        x = self._check_dim(x)
        g = self.H @ (x - self.x_star)
        return np.tile(g, (len(X), 1))

    def smoothness(self, dataset=None):
        return float(np.linalg.eigvalsh(self.H)[-1])

    def hessian(self) -> np.ndarray:
        return self.H

    def f_star(self) -> float:
        return 0.0

    def placeholder_dataset(self, n: int = 1) -> Dataset:
        # Samples are ignored by the loss; the dataset only drives batching.
        return Dataset(X=np.zeros((n, 1)), y=np.zeros(n))


class LinearRegression(Objective):
    """Squared loss f(x; (a, y)) = 0.5 (<a, x> - y)^2."""

    kind = "linear-regression"

    def __init__(self, dim: int):
        self.dim = dim

    def per_sample_losses(self, x, X, y):
        x = self._check_dim(x)
        r = X @ x - y
        return 0.5 * r**2

    def per_sample_grads(self, x, X, y):
        x = self._check_dim(x)
        r = X @ x - y
        return r[:, None] * X

    def smoothness(self, dataset=None):
        if dataset is None:
            return None
        second_moment = dataset.X.T @ dataset.X / dataset.n
        return float(np.linalg.eigvalsh(second_moment)[-1])


class LogisticRegression(Objective):
    """Logistic loss with labels in {-1, +1}: f = log(1 + exp(-y <a, x>))."""

    kind = "logistic-regression"

    def __init__(self, dim: int):
        self.dim = dim

    def per_sample_losses(self, x, X, y):
        x = self._check_dim(x)
        margins = y * (X @ x)
        return np.logaddexp(0.0, -margins)

    def per_sample_grads(self, x, X, y):
        x = self._check_dim(x)
        margins = y * (X @ x)
        # sigmoid(-m), computed stably on both tails
        s = np.empty_like(margins)
        pos = margins >= 0
        s[pos] = np.exp(-margins[pos]) / (1.0 + np.exp(-margins[pos]))
        s[~pos] = 1.0 / (1.0 + np.exp(margins[~pos]))
        return (-y * s)[:, None] * X

    def smoothness(self, dataset=None):
        if dataset is None:
            return None
        second_moment = dataset.X.T @ dataset.X / dataset.n
        return float(np.linalg.eigvalsh(second_moment)[-1]) / 4.0


class TinyMLP(Objective):
    """One hidden tanh layer (width 16 by default), squared loss on a scalar output.

    Parameters are packed flat as [W1 (h*p), b1 (h), w2 (h), b2 (1)]. Small
    enough (< 2000 parameters) to run in seconds yet genuinely non-convex.
    """

    kind = "mlp"

    def __init__(self, in_dim: int, hidden: int = 16):
        if hidden * in_dim + 2 * hidden + 1 > 2000:
            raise ValueError("parameter budget is 2000; shrink in_dim or hidden")
        self.in_dim = in_dim
        self.hidden = hidden
        self.dim = hidden * in_dim + 2 * hidden + 1

    def _unpack(self, x: np.ndarray):
        h, p = self.hidden, self.in_dim
        W1 = x[: h * p].reshape(h, p)
        b1 = x[h * p : h * p + h]
        w2 = x[h * p + h : h * p + 2 * h]
        b2 = x[-1]
        return W1, b1, w2, b2

    def _forward(self, x, X):
        W1, b1, w2, b2 = self._unpack(x)
        hidden = np.tanh(X @ W1.T + b1)
        out = hidden @ w2 + b2
        return hidden, out

    def per_sample_losses(self, x, X, y):
        x = self._check_dim(x)
        _, out = self._forward(x, X)
        return 0.5 * (out - y) ** 2

    def per_sample_grads(self, x, X, y):
        x = self._check_dim(x)
        W1, b1, w2, b2 = self._unpack(x)
        hidden = np.tanh(X @ W1.T + b1)
        out = hidden @ w2 + b2
        r = out - y
        d_w2 = r[:, None] * hidden
        d_b2 = r[:, None]
        d_hidden = r[:, None] * w2[None, :]
        d_pre = d_hidden * (1.0 - hidden**2)
        d_W1 = d_pre[:, :, None] * X[:, None, :]
        B = len(X)
        return np.concatenate(
            [d_W1.reshape(B, -1), d_pre, d_w2, d_b2], axis=1
        )

    def init_point(self, seed: int, scale: float = 1.0) -> np.ndarray:
        rng = seeding.substream(seed, seeding.INIT)
        h, p = self.hidden, self.in_dim
        W1 = rng.standard_normal((h, p)) / np.sqrt(p)
        b1 = np.zeros(h)
        w2 = rng.standard_normal(h) / np.sqrt(h)
        b2 = np.zeros(1)
        return scale * np.concatenate([W1.ravel(), b1, w2, b2])


def make_objective(kind: str, dim: int, **kwargs) -> Objective:
    if kind == "quadratic":
        H = kwargs.get("H")
        if H is None:
            H = np.eye(dim)
        return Quadratic(H=H, x_star=kwargs.get("x_star"))
    if kind == "linear-regression":
        return LinearRegression(dim)
    if kind == "logistic-regression":
        return LogisticRegression(dim)
    if kind == "mlp":
        return TinyMLP(dim, hidden=kwargs.get("hidden", 16))
    raise ValueError(f"unknown objective kind: {kind!r}")


def per_sample_grad(obj: Objective, x: np.ndarray, sample: Sample) -> np.ndarray:
    """Exact analytic gradient of f(x; xi) for one sample."""
    feature, target = sample
    feature = np.atleast_2d(np.asarray(feature, dtype=float))
    return obj.per_sample_grads(x, feature, np.array([target]))[0]


def per_sample_loss(obj: Objective, x: np.ndarray, sample: Sample) -> float:
    feature, target = sample
    feature = np.atleast_2d(np.asarray(feature, dtype=float))
    return float(obj.per_sample_losses(x, feature, np.array([target]))[0])


def two_point_grads(
    obj: Objective,
    x: np.ndarray,
    d_prev: np.ndarray,
    gamma: float,
    kappa: float,
    X: np.ndarray,
    y: np.ndarray,
) -> np.ndarray:
    """Per-sample combination a*grad(x + gamma*d_prev) + (1-a)*grad(x), a = (1-kappa)/(kappa*gamma).

    kappa = 1 collapses to the plain per-sample gradient and takes that exact
    code path (no second evaluation), so downstream reductions are bit-exact.
    """
    if gamma == 0:
        raise ValueError("gamma must be nonzero")
    if not 0 < kappa <= 1:
        raise ValueError("kappa must lie in (0, 1]")
    if kappa == 1.0:
        return obj.per_sample_grads(x, X, y)
    a = (1.0 - kappa) / (kappa * gamma)
    ahead = obj.per_sample_grads(x + gamma * d_prev, X, y)
    here = obj.per_sample_grads(x, X, y)
    return a * ahead + (1.0 - a) * here


def two_point_per_sample_grad(
    obj: Objective,
    x: np.ndarray,
    d_prev: np.ndarray,
    gamma: float,
    kappa: float,
    sample: Sample,
) -> np.ndarray:
    feature, target = sample
    feature = np.atleast_2d(np.asarray(feature, dtype=float))
    return two_point_grads(obj, x, d_prev, gamma, kappa, feature, np.array([target]))[0]


def full_gradient(obj: Objective, x: np.ndarray, dataset: Dataset) -> np.ndarray:
    """Mean of per-sample gradients over the whole dataset."""
    return obj.per_sample_grads(x, dataset.X, dataset.y).mean(axis=0)


def full_loss(obj: Objective, x: np.ndarray, dataset: Dataset) -> float:
    return float(obj.per_sample_losses(x, dataset.X, dataset.y).mean())


@dataclass
class MinibatchSampler:
    """Without-replacement sampling with fixed batch size.

    Each epoch is a fresh permutation of {0..n-1} cut into floor(n/B) full
    batches; the partial tail batch is dropped. Deterministic per seed.
    """

    n: int
    batch_size: int
    seed: int
    _rng: np.random.Generator = field(init=False, repr=False)
    _queue: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        if not 1 <= self.batch_size <= self.n:
            raise ValueError("need 1 <= batch_size <= n")
        self._rng = seeding.substream(self.seed, seeding.SAMPLING)
        self._queue = []

    def epoch_batches(self) -> list[np.ndarray]:
        perm = self._rng.permutation(self.n)
        full = (self.n // self.batch_size) * self.batch_size
        return [
            perm[i : i + self.batch_size] for i in range(0, full, self.batch_size)
        ]

    def next_batch(self) -> np.ndarray:
        if not self._queue:
            self._queue = self.epoch_batches()
        return self._queue.pop(0)

    def batches(self, steps: int) -> Iterator[np.ndarray]:
        for _ in range(steps):
            yield self.next_batch()
