"""Surrogate regressor tests: polynomial, perceptron, Gaussian process.

GP expectations rely on two independently coded references: an explicit
matrix-inverse solve (dense oracle) and hand-worked 1x1 algebra.
"""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import cholesky

from cverify.regress import (
    Dataset,
    GpSurrogate,
    Kernel,
    NonFinite,
    _features,
    fit_gp,
    fit_mlp,
    fit_poly,
    fit_surrogate,
    mlp_loss_and_grad,
)

# ---------------------------------------------------------------------------
# Dataset / Kernel validation
# ---------------------------------------------------------------------------


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(thetas=[[0.0]], rhos=[1.0])  # too short
    with pytest.raises(ValueError):
        Dataset(thetas=[[0.0], [1.0]], rhos=[1.0])  # length mismatch
    with pytest.raises(ValueError):
        Dataset(thetas=[[0.0], [np.inf]], rhos=[1.0, 2.0])
    with pytest.raises(ValueError):
        Dataset(thetas=[[0.0], [1.0]], rhos=[1.0, np.nan])
    d = Dataset(thetas=[[0.0], [1.0]], rhos=[1.0, 2.0])
    assert len(d) == 2 and d.dim == 1


def test_kernel_validation():
    with pytest.raises(ValueError):
        Kernel(sigma0_sq=-1.0)
    with pytest.raises(ValueError):
        Kernel(noise_sq=0.0)
    with pytest.raises(ValueError):
        Kernel(noise_sq=-0.1)


# ---------------------------------------------------------------------------
# Polynomial least squares
# ---------------------------------------------------------------------------


def test_poly_reproduces_affine_function():
    rng = np.random.default_rng(0)
    X = rng.uniform(-2, 2, size=(10, 2))
    y = 3.0 + 2.0 * X[:, 0]
    fit = fit_poly(Dataset(X, y), degree=1)
    assert np.abs(fit.predict_batch(X) - y).max() < 1e-6
    assert abs(fit.predict([0.0, 0.0]) - 3.0) < 1e-6


def test_poly_degree2_recovers_square_coefficient():
    rng = np.random.default_rng(1)
    X = rng.uniform(-2, 2, size=(30, 1))
    y = X[:, 0] ** 2
    fit = fit_poly(Dataset(X, y), degree=2)
    coeff = fit.coeffs[fit.terms.index((0, 0))]
    assert abs(coeff - 1.0) < 1e-6
    assert np.abs(fit.predict_batch(X) - y).max() < 1e-6


def test_poly_matches_normal_equations_oracle():
    rng = np.random.default_rng(2)
    X = rng.uniform(-1, 1, size=(60, 2))
    y = 1.0 - 0.5 * X[:, 0] + 2.0 * X[:, 1] + rng.normal(0, 0.1, 60)
    fit = fit_poly(Dataset(X, y), degree=1)
    # independent solve on a hand-built design matrix
    A = np.column_stack([np.ones(60), X[:, 0], X[:, 1]])
    beta = np.linalg.solve(A.T @ A + 1e-8 * np.eye(3), A.T @ y)
    assert fit.coeffs == pytest.approx(beta, abs=1e-10)


def test_poly_cross_terms_present_at_degree2():
    rng = np.random.default_rng(3)
    X = rng.uniform(-1, 1, size=(50, 2))
    y = X[:, 0] * X[:, 1]
    fit = fit_poly(Dataset(X, y), degree=2)
    assert np.abs(fit.predict_batch(X) - y).max() < 1e-6


def test_poly_rejects_other_degrees():
    d = Dataset(thetas=[[0.0], [1.0]], rhos=[0.0, 1.0])
    with pytest.raises(ValueError):
        fit_poly(d, degree=3)


# ---------------------------------------------------------------------------
# Perceptron
# ---------------------------------------------------------------------------


def test_mlp_converges_on_linear_target():
    rng = np.random.default_rng(42)
    X = rng.uniform(-1, 1, size=(200, 2))
    y = X[:, 0].copy()
    fit = fit_mlp(Dataset(X, y), hidden=8, epochs=2000, rate=0.01, seed=1)
    mse = float(np.mean((fit.predict_batch(X) - y) ** 2))
    assert mse < 1e-3


def test_mlp_zero_epochs_is_finite_and_seeded():
    rng = np.random.default_rng(5)
    X = rng.uniform(-1, 1, size=(20, 2))
    y = rng.normal(size=20)
    a = fit_mlp(Dataset(X, y), hidden=4, epochs=0, seed=7)
    b = fit_mlp(Dataset(X, y), hidden=4, epochs=0, seed=7)
    c = fit_mlp(Dataset(X, y), hidden=4, epochs=0, seed=8)
    pa = a.predict_batch(X)
    assert np.all(np.isfinite(pa))
    assert np.array_equal(pa, b.predict_batch(X))
    assert not np.array_equal(pa, c.predict_batch(X))


def test_mlp_training_is_deterministic():
    rng = np.random.default_rng(6)
    X = rng.uniform(-1, 1, size=(40, 2))
    y = np.sin(X[:, 0])
    a = fit_mlp(Dataset(X, y), hidden=6, epochs=50, seed=3)
    b = fit_mlp(Dataset(X, y), hidden=6, epochs=50, seed=3)
    q = rng.uniform(-1, 1, size=(10, 2))
    assert np.array_equal(a.predict_batch(q), b.predict_batch(q))


def _random_mlp_params(rng, k, hidden):
    return {
        "W1": rng.normal(size=(k, hidden)),
        "b1": rng.normal(size=hidden),
        "W2": rng.normal(size=(hidden, 1)),
        "b2": rng.normal(size=1),
    }


@pytest.mark.parametrize("seed", range(5))
def test_mlp_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    k, hidden, B = 2, 3, 7
    params = _random_mlp_params(rng, k, hidden)
    X = rng.normal(size=(B, k))
    y = rng.normal(size=B)
    _, grads = mlp_loss_and_grad(params, X, y)
    h = 1e-6
    for name in params:
        flat = params[name].reshape(-1)
        for idx in range(flat.size):
            orig = flat[idx]
            flat[idx] = orig + h
            lp, _ = mlp_loss_and_grad(params, X, y)
            flat[idx] = orig - h
            lm, _ = mlp_loss_and_grad(params, X, y)
            flat[idx] = orig
            fd = (lp - lm) / (2 * h)
            an = grads[name].reshape(-1)[idx]
            assert an == pytest.approx(fd, rel=1e-5, abs=1e-8), name


def test_mlp_divergence_raises():
    rng = np.random.default_rng(9)
    X = rng.uniform(-100, 100, size=(64, 2))
    y = rng.uniform(1e4, 1e6, size=64)
    with pytest.raises(NonFinite):
        fit_mlp(Dataset(X, y), hidden=8, epochs=500, rate=1e6, seed=0)


# ---------------------------------------------------------------------------
# Gaussian process
# ---------------------------------------------------------------------------


def _naive_gp_oracle(X, y, kern, Z):
    """Textbook formulas through an explicit matrix inverse."""
    Kinv = np.linalg.inv(kern.gram(X))
    Ks = kern.cross(X, Z)
    mu = Ks.T @ Kinv @ y
    var = kern.self_cov(Z) - np.einsum("ij,ij->j", Ks, Kinv @ Ks)
    return mu, np.sqrt(np.maximum(var, 0.0))


@pytest.mark.parametrize("m,dim", [(5, 1), (12, 2), (30, 3), (50, 2)])
def test_gp_matches_naive_inverse_oracle(m, dim):
    rng = np.random.default_rng(m)
    X = rng.uniform(-2, 2, size=(m, dim))
    y = rng.normal(size=m)
    gp = fit_gp(Dataset(X, y))
    Z = rng.uniform(-2, 2, size=(40, dim))
    mu_o, sd_o = _naive_gp_oracle(X, y, Kernel(), Z)
    assert np.abs(gp.predict_batch(Z) - mu_o).max() < 1e-8
    assert np.abs(gp.stddev_batch(Z) - sd_o).max() < 1e-8
    # and at the training points themselves (white-kernel cross term active);
    # the true variance there is exactly 0, so compare variances — sqrt
    # turns float residue of either path into ~1e-7 stddev noise
    mu_t, sd_t = _naive_gp_oracle(X, y, Kernel(), X)
    assert np.abs(gp.predict_batch(X) - mu_t).max() < 1e-8
    assert np.abs(gp.stddev_batch(X) ** 2 - sd_t**2).max() < 1e-8


def test_gp_single_point_hand_solve():
    # one training pair theta=(1), y=2; bias 1 + dot 1 gives cross 2 (+1e-12
    # at the coincident query), K = 2 + 1e-12, so predict(1) = 2
    kern = Kernel(sigma0_sq=1.0, noise_sq=1e-12)
    X = np.array([[1.0]])
    y = np.array([2.0])
    K = kern.gram(X)
    L = cholesky(K, lower=True)
    alpha = np.linalg.solve(K, y)
    Phi = _features(kern, X)
    gp = GpSurrogate(
        kernel=kern,
        train=X,
        chol=L,
        alpha=alpha,
        w=Phi.T @ alpha,
        Q=Phi.T @ np.linalg.solve(K, Phi),
    )
    assert gp.predict([1.0]) == pytest.approx(2.0, abs=1e-5)
    assert gp.stddev([1.0]) == pytest.approx(0.0, abs=1e-5)


def test_gp_near_interpolation_with_tiny_noise():
    rng = np.random.default_rng(11)
    X = rng.uniform(-1, 1, size=(10, 2))
    y = 3.0 + 2.0 * X[:, 0] - X[:, 1]
    gp = fit_gp(Dataset(X, y), Kernel(noise_sq=1e-12))
    assert np.abs(gp.predict_batch(X) - y).max() < 1e-5
    assert gp.stddev_batch(X).max() < 1e-5


def test_gp_coincident_query_uses_white_term():
    # with targets the affine prior cannot fit, predictions at training
    # points still come back near the targets only because the white
    # kernel fires on coincident queries; without it the error would be O(1)
    rng = np.random.default_rng(12)
    X = rng.uniform(-1, 1, size=(10, 2))
    y = rng.normal(size=10)
    gp = fit_gp(Dataset(X, y), Kernel(noise_sq=1e-12))
    assert np.abs(gp.predict_batch(X) - y).max() < 1e-2
    off = X + 1e-9  # bitwise-different queries lose the white cross term
    assert np.abs(gp.predict_batch(off) - y).max() > 0.1


def test_gp_stddev_shrinks_with_noise():
    rng = np.random.default_rng(13)
    X = rng.uniform(-1, 1, size=(8, 2))
    y = 1.0 + X[:, 0]
    Z = rng.uniform(-1, 1, size=(20, 2))
    prev_fresh = None
    for noise in (1e-2, 1e-4, 1e-6):
        gp = fit_gp(Dataset(X, y), Kernel(noise_sq=noise))
        # at training points the white cross term zeroes the variance
        # outright, at every noise level (monotone limit holds trivially)
        assert gp.stddev_batch(X).max() < 1e-6
        # at fresh points the decrease is genuine and strict
        fresh = gp.stddev_batch(Z)
        if prev_fresh is not None:
            assert np.all(fresh < prev_fresh)
        prev_fresh = fresh


def test_gp_predictions_linear_in_targets():
    rng = np.random.default_rng(14)
    X = rng.uniform(-1, 1, size=(15, 2))
    y = rng.normal(size=15)
    Z = rng.uniform(-1, 1, size=(30, 2))
    p1 = fit_gp(Dataset(X, y)).predict_batch(Z)
    p2 = fit_gp(Dataset(X, 2.0 * y)).predict_batch(Z)
    assert np.abs(p2 - 2.0 * p1).max() < 1e-9


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=40, deadline=None)
def test_gp_stddev_never_negative(seed):
    rng = np.random.default_rng(seed)
    m = int(rng.integers(3, 20))
    X = rng.uniform(-3, 3, size=(m, 2))
    y = rng.normal(size=m)
    gp = fit_gp(Dataset(X, y))
    Z = np.vstack([rng.uniform(-3, 3, size=(20, 2)), X])
    sd = gp.stddev_batch(Z)
    assert np.all(sd >= 0.0)
    assert np.all(np.isfinite(sd))


# ---------------------------------------------------------------------------
# Name-based selection
# ---------------------------------------------------------------------------


def test_fit_surrogate_by_name():
    rng = np.random.default_rng(15)
    X = rng.uniform(-1, 1, size=(24, 2))
    y = X[:, 0] + 0.1 * X[:, 1]
    for name in ("poly1", "poly2", "gp"):
        s = fit_surrogate(name, Dataset(X, y))
        assert np.isfinite(s.predict([0.2, 0.3]))
    s = fit_surrogate("mlp", Dataset(X, y), seed=0, epochs=5)
    assert np.isfinite(s.predict([0.2, 0.3]))
    with pytest.raises(ValueError):
        fit_surrogate("forest", Dataset(X, y))
