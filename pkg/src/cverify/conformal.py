"""Split conformal prediction and interval-based region verdicts.

conf_int splits the data in half at random, fits the chosen surrogate on
one half, and takes d as the k-th smallest absolute residual on the other,
k = ceil((m/2 + 1)(1 - alpha)).  For a fresh i.i.d. draw the band
mu_hat(x) +- d then covers y with probability at least 1 - alpha,
regardless of how bad the surrogate is.

region_interval pushes the band through a parameter box: conservative
bounds on min/max of mu_hat over the box, widened by d on both ends.
A region is Safe when the whole interval is positive, Unsafe when it is
negative, Unknown when it straddles zero.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .boxopt import OptimizerCfg, maximize_on_box, minimize_on_box
from .regress import Dataset, fit_surrogate
from .signals import ParamBox

SAFE = "Safe"
UNSAFE = "Unsafe"
UNKNOWN = "Unknown"


class AlphaTooSmall(ValueError):
    """alpha < 2/(m+2): k would exceed the calibration half."""


class OddSampleCount(UserWarning):
    """Odd m: one seeded sample is dropped to make the split even."""


@dataclass(frozen=True)
class ConformalModel:
    surrogate: object
    d: float
    alpha: float
    m: int
    k: int
    fit_idx: np.ndarray = field(repr=False)
    cal_idx: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)


@dataclass(frozen=True)
class RobustnessInterval:
    lo: float
    hi: float
    alpha: float

    def __post_init__(self):
        if self.lo > self.hi:
            raise ValueError(f"inverted interval [{self.lo}, {self.hi}]")


def conf_int(
    data: Dataset, alpha: float, reg: str = "gp", seed: int = 0, **fit_kw
) -> ConformalModel:
    """Fit surrogate + confidence range d on a random equal split."""
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must be in (0,1), got {alpha}")
    m = len(data)
    if m < 4:
        raise ValueError(f"need at least 4 samples, got {m}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(m)
    if m % 2 == 1:
        warnings.warn(
            f"odd sample count {m}: dropping one seeded sample", OddSampleCount
        )
        order = order[:-1]
        m -= 1
    if alpha < 2.0 / (m + 2.0):
        raise AlphaTooSmall(
            f"alpha={alpha} below 2/(m+2)={2.0 / (m + 2.0):.6g}; "
            "the k-th residual would not exist"
        )
    half = m // 2
    fit_idx, cal_idx = order[:half], order[half:]
    fitted = fit_surrogate(
        reg,
        Dataset(thetas=data.thetas[fit_idx], rhos=data.rhos[fit_idx]),
        seed=seed,
        **fit_kw,
    )
    residuals = np.abs(
        data.rhos[cal_idx] - fitted.predict_batch(data.thetas[cal_idx])
    )
    k = math.ceil((m / 2.0 + 1.0) * (1.0 - alpha))
    k = min(k, half)  # absorbs half-ulp overshoot exactly at the boundary
    d = float(np.partition(residuals, k - 1)[k - 1])
    return ConformalModel(
        surrogate=fitted,
        d=d,
        alpha=alpha,
        m=m,
        k=k,
        fit_idx=fit_idx,
        cal_idx=cal_idx,
        residuals=residuals,
    )


def region_interval(
    cm: ConformalModel,
    region: ParamBox,
    optimizer: OptimizerCfg = OptimizerCfg(),
    seed: int = 0,
) -> RobustnessInterval:
    """Conservative robustness interval for a whole parameter box.

    Bounds min/max of the surrogate over the box by multi-start coordinate
    descent, widens each bound by the optimizer's final-sweep convergence
    residual (safety factor 1), then by d on both ends.
    """
    f = cm.surrogate.predict_batch
    low = minimize_on_box(f, region, optimizer, seed)
    high = maximize_on_box(f, region, optimizer, seed)
    v_min = low.value - low.slack
    v_max = high.value + high.slack
    return RobustnessInterval(lo=v_min - cm.d, hi=v_max + cm.d, alpha=cm.alpha)


def classify(iv: RobustnessInterval) -> str:
    """Safe / Unsafe / Unknown per the sign of the whole interval."""
    if iv.lo > 0.0:
        return SAFE
    if iv.hi < 0.0:
        return UNSAFE
    return UNKNOWN


def coverage_check(cm: ConformalModel, fresh: Dataset) -> float:
    """Fraction of fresh points inside the band mu_hat(x) +- d."""
    pred = cm.surrogate.predict_batch(fresh.thetas)
    return float(np.mean(np.abs(fresh.rhos - pred) <= cm.d))
