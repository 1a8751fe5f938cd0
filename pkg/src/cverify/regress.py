"""Surrogate regressors from parameter vectors to robustness values.

Three families, selectable by name: least-squares polynomials ("poly1",
"poly2"), a small tanh perceptron trained by minibatch SGD ("mlp"), and
Gaussian-process regression with a dot-product + white sum kernel ("gp").

All fits are deterministic given the seed and input order, and fitted
surrogates are immutable, so they can be shared freely across threads.

White-kernel convention: the noise term sits on the training Gram diagonal
and on every point's self-covariance, but the cross-covariance between a
query point and a training point includes it only when the two coincide
bitwise.  Consequently with tiny noise the GP interpolates its training
set and reports zero uncertainty exactly there.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations_with_replacement

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

RIDGE = 1e-8
DEFAULT_SIGMA0_SQ = 1.0
DEFAULT_NOISE_SQ = 0.1


class DegenerateData(ValueError):
    """Design matrix carries no information at all."""


class NonFinite(RuntimeError):
    """Training diverged to NaN/inf."""


class SingularKernel(RuntimeError):
    """Kernel matrix could not be factorized."""


@dataclass(frozen=True)
class Dataset:
    """Training pairs (theta_i, rho_i)."""

    thetas: np.ndarray
    rhos: np.ndarray

    def __post_init__(self):
        thetas = np.atleast_2d(np.asarray(self.thetas, dtype=float))
        rhos = np.asarray(self.rhos, dtype=float).reshape(-1)
        object.__setattr__(self, "thetas", thetas)
        object.__setattr__(self, "rhos", rhos)
        if thetas.shape[0] != rhos.shape[0]:
            raise ValueError("thetas and rhos must have equal length")
        if thetas.shape[0] < 2:
            raise ValueError("need at least 2 training pairs")
        if not np.all(np.isfinite(thetas)) or not np.all(np.isfinite(rhos)):
            raise ValueError("training data must be finite")

    def __len__(self):
        return self.thetas.shape[0]

    @property
    def dim(self) -> int:
        return self.thetas.shape[1]


def _as_batch(theta) -> np.ndarray:
    return np.atleast_2d(np.asarray(theta, dtype=float))


# ---------------------------------------------------------------------------
# Polynomial least squares
# ---------------------------------------------------------------------------

def _monomials(dim: int, degree: int) -> list[tuple[int, ...]]:
    terms: list[tuple[int, ...]] = []
    for d in range(degree + 1):
        terms.extend(combinations_with_replacement(range(dim), d))
    return terms


def _design(thetas: np.ndarray, terms) -> np.ndarray:
    cols = [np.prod(thetas[:, t], axis=1) if t else np.ones(len(thetas)) for t in terms]
    return np.stack(cols, axis=1)


@dataclass(frozen=True)
class PolySurrogate:
    degree: int
    terms: tuple
    coeffs: np.ndarray

    def predict_batch(self, thetas) -> np.ndarray:
        return _design(_as_batch(thetas), self.terms) @ self.coeffs

    def predict(self, theta) -> float:
        return float(self.predict_batch(theta)[0])


def fit_poly(data: Dataset, degree: int) -> PolySurrogate:
    """Ridge-stabilized least squares over all monomials up to `degree`."""
    if degree not in (1, 2):
        raise ValueError("polynomial degree must be 1 or 2")
    terms = tuple(_monomials(data.dim, degree))
    A = _design(data.thetas, terms)
    if not np.any(A):
        raise DegenerateData("design matrix is identically zero")
    gram = A.T @ A + RIDGE * np.eye(A.shape[1])
    coeffs = np.linalg.solve(gram, A.T @ data.rhos)
    return PolySurrogate(degree=degree, terms=terms, coeffs=coeffs)


# ---------------------------------------------------------------------------
# Small perceptron
# ---------------------------------------------------------------------------

def mlp_forward(params: dict, X: np.ndarray) -> np.ndarray:
    H = np.tanh(X @ params["W1"] + params["b1"])
    return H @ params["W2"] + params["b2"]


def mlp_loss_and_grad(params: dict, X: np.ndarray, y: np.ndarray):
    """Mean squared error and its gradient w.r.t. every parameter array.

    Kept as a standalone function so the training step and the
    finite-difference checks exercise the exact same arithmetic.
    """
    B = X.shape[0]
    H = np.tanh(X @ params["W1"] + params["b1"])
    pred = (H @ params["W2"] + params["b2"]).reshape(-1)
    err = pred - y
    loss = float(err @ err) / B
    dpred = (2.0 / B) * err[:, None]
    grads = {
        "W2": H.T @ dpred,
        "b2": dpred.sum(axis=0),
    }
    dH = dpred @ params["W2"].T
    dZ = dH * (1.0 - H * H)
    grads["W1"] = X.T @ dZ
    grads["b1"] = dZ.sum(axis=0)
    return loss, grads


@dataclass(frozen=True)
class MlpSurrogate:
    params: dict
    mean: np.ndarray
    scale: np.ndarray

    def predict_batch(self, thetas) -> np.ndarray:
        X = (_as_batch(thetas) - self.mean) / self.scale
        return mlp_forward(self.params, X).reshape(-1)

    def predict(self, theta) -> float:
        return float(self.predict_batch(theta)[0])


def fit_mlp(
    data: Dataset,
    hidden: int = 16,
    epochs: int = 2000,
    rate: float = 0.01,
    seed: int = 0,
    batch: int = 32,
) -> MlpSurrogate:
    """One tanh hidden layer trained by minibatch SGD on squared loss."""
    if hidden < 1:
        raise ValueError("need at least one hidden unit")
    mean = data.thetas.mean(axis=0)
    scale = data.thetas.std(axis=0)
    scale = np.where(scale > 0, scale, 1.0)
    X = (data.thetas - mean) / scale
    y = data.rhos
    m, k = X.shape

    rng = np.random.default_rng(seed)
    params = {
        "W1": rng.normal(0.0, 1.0 / np.sqrt(k), size=(k, hidden)),
        "b1": np.zeros(hidden),
        "W2": rng.normal(0.0, 1.0 / np.sqrt(hidden), size=(hidden, 1)),
        "b2": np.zeros(1),
    }
    # Divergence is detected (and raised) below, so numpy's overflow
    # warnings on the way there are just noise.
    with np.errstate(over="ignore", invalid="ignore"):
        for _ in range(epochs):
            order = rng.permutation(m)
            for start in range(0, m, batch):
                idx = order[start : start + batch]
                loss, grads = mlp_loss_and_grad(params, X[idx], y[idx])
                if not np.isfinite(loss):
                    raise NonFinite("training loss diverged")
                for name, g in grads.items():
                    params[name] = params[name] - rate * g
    if not all(np.all(np.isfinite(p)) for p in params.values()):
        raise NonFinite("weights diverged")
    return MlpSurrogate(params=params, mean=mean, scale=scale)


# ---------------------------------------------------------------------------
# Gaussian process with dot-product + white kernel
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Kernel:
    """Sum kernel k(a, b) = (sigma0_sq + <a, b>) + noise_sq * [a == b].

    The first summand is the dot-product kernel with bias sigma0_sq; the
    second is the white kernel, which fires on the training Gram diagonal,
    on every point's self-covariance, and between a query point and a
    training point only when the two coincide bitwise.
    """

    sigma0_sq: float = DEFAULT_SIGMA0_SQ
    noise_sq: float = DEFAULT_NOISE_SQ

    def __post_init__(self):
        if self.sigma0_sq < 0:
            raise ValueError("dot-product bias must be nonnegative")
        if self.noise_sq <= 0:
            raise ValueError("white-noise term must be positive")

    def gram(self, X: np.ndarray) -> np.ndarray:
        return self.sigma0_sq + X @ X.T + self.noise_sq * np.eye(X.shape[0])

    def cross(self, X: np.ndarray, Z: np.ndarray) -> np.ndarray:
        C = self.sigma0_sq + X @ Z.T
        same = np.all(X[:, None, :] == Z[None, :, :], axis=2)
        if same.any():
            C = C + self.noise_sq * same
        return C

    def self_cov(self, Z: np.ndarray) -> np.ndarray:
        return self.sigma0_sq + np.einsum("ij,ij->i", Z, Z) + self.noise_sq


def _features(kernel: Kernel, Z: np.ndarray) -> np.ndarray:
    # the dot-product part factors as phi(a).phi(b) with phi(x) = (sigma0, x)
    bias = np.full((Z.shape[0], 1), np.sqrt(kernel.sigma0_sq))
    return np.concatenate([bias, Z], axis=1)


def _coincidences(train: np.ndarray, Z: np.ndarray):
    """(query_row, train_row) pairs where a query equals a training point.

    Fast path: a sort-based membership test on raw rows (with -0.0
    normalized) prunes almost every batch before any pairwise comparison.
    """
    t = np.ascontiguousarray(train + 0.0)
    q = np.ascontiguousarray(Z + 0.0)
    rowtype = np.dtype((np.void, t.dtype.itemsize * t.shape[1]))
    hits = np.nonzero(np.isin(q.view(rowtype).ravel(), t.view(rowtype).ravel()))[0]
    pairs = []
    for qi in hits:
        for ti in np.nonzero(np.all(train == Z[qi], axis=1))[0]:
            pairs.append((int(qi), int(ti)))
    return pairs


@dataclass(frozen=True)
class GpSurrogate:
    """Posterior mean/stddev of the sum-kernel GP.

    Stores the Cholesky factor of the training Gram matrix; because the
    dot-product part is an affine feature map, the smooth components of
    mean and variance reduce to precomputed forms `w` and `Q` that make
    bulk prediction O(k^2) per point.  Queries that coincide with a
    training point pick up the white-kernel cross term: an exact
    correction handles those (rare) rows through the factorization.
    """

    kernel: Kernel
    train: np.ndarray
    chol: np.ndarray = field(repr=False)
    alpha: np.ndarray = field(repr=False)
    w: np.ndarray = field(repr=False)
    Q: np.ndarray = field(repr=False)

    def predict_batch(self, thetas) -> np.ndarray:
        Z = _as_batch(thetas)
        mu = _features(self.kernel, Z) @ self.w
        for qi, ti in _coincidences(self.train, Z):
            mu[qi] += self.kernel.noise_sq * self.alpha[ti]
        return mu

    def predict(self, theta) -> float:
        return float(self.predict_batch(theta)[0])

    def stddev_batch(self, thetas) -> np.ndarray:
        Z = _as_batch(thetas)
        phi = _features(self.kernel, Z)
        var = self.kernel.self_cov(Z) - np.einsum("ij,jk,ik->i", phi, self.Q, phi)
        hit_rows = sorted({qi for qi, _ in _coincidences(self.train, Z)})
        if hit_rows:
            Ks = self.kernel.cross(self.train, Z[hit_rows])
            v = solve_triangular(self.chol, Ks, lower=True)
            var[hit_rows] = self.kernel.self_cov(Z[hit_rows]) - np.einsum(
                "ij,ij->j", v, v
            )
        return np.sqrt(np.maximum(var, 0.0))

    def stddev(self, theta) -> float:
        return float(self.stddev_batch(theta)[0])


def fit_gp(data: Dataset, kernel: Kernel = Kernel()) -> GpSurrogate:
    """Exact GP regression: mean k(q,X) K^-1 y, variance k(q,q) - k(q,X) K^-1 k(X,q)."""
    K = kernel.gram(data.thetas)
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError as exc:
        raise SingularKernel(f"kernel matrix not positive definite: {exc}") from exc
    alpha = cho_solve((L, True), data.rhos)
    Phi = _features(kernel, data.thetas)
    KinvPhi = cho_solve((L, True), Phi)
    return GpSurrogate(
        kernel=kernel,
        train=data.thetas.copy(),
        chol=L,
        alpha=alpha,
        w=Phi.T @ alpha,
        Q=Phi.T @ KinvPhi,
    )


# ---------------------------------------------------------------------------
# Name-based selection (config surface)
# ---------------------------------------------------------------------------

SURROGATES = ("poly1", "poly2", "mlp", "gp")


def fit_surrogate(name: str, data: Dataset, seed: int = 0, **kw):
    """Fit a surrogate by its config name: poly1, poly2, mlp, or gp."""
    if name == "poly1":
        return fit_poly(data, 1)
    if name == "poly2":
        return fit_poly(data, 2)
    if name == "mlp":
        return fit_mlp(data, seed=seed, **kw)
    if name == "gp":
        return fit_gp(data, **kw)
    raise ValueError(f"unknown surrogate {name!r}; available: {SURROGATES}")
