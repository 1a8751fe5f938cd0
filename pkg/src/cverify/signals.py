"""Sampled trajectories, parameter boxes, and sampling distributions.

A :class:`Signal` is a finite sequence of (time, vector value) samples.
Between samples the value is taken as piecewise constant (left sample),
because the simulators that produce signals only define values at the
requested sample times.

Parameter spaces are axis-aligned boxes carrying a sampling distribution,
either uniform or a truncated Gaussian with diagonal covariance.  Both
renormalize analytically when restricted to a sub-box.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr

MAX_CONSECUTIVE_REJECTIONS = 10**6


class OutOfDomain(ValueError):
    """Time query outside the signal's sampled domain."""


class SubsetNotContained(ValueError):
    """Requested restriction box is not inside the distribution support."""


class RejectionStall(RuntimeError):
    """Truncated-Gaussian rejection sampling made no progress."""


@dataclass(frozen=True)
class Signal:
    """Finite sampled trajectory: strictly increasing times, one value vector each."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.atleast_2d(np.asarray(self.values, dtype=float))
        if values.shape[0] != times.shape[0] and values.shape[1] == times.shape[0]:
            values = values.T
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)
        if times.ndim != 1 or times.size == 0:
            raise ValueError("times must be a nonempty 1-D sequence")
        if times[0] < 0:
            raise ValueError("times must start at t >= 0")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ValueError("times must be strictly increasing")
        if values.shape[0] != times.shape[0]:
            raise ValueError("need exactly one value vector per time point")

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    @property
    def duration(self) -> float:
        return float(self.times[-1])

    def value_at(self, t: float) -> np.ndarray:
        """Value at the greatest sample time <= t (left-constant convention)."""
        if t < self.times[0] or t > self.times[-1]:
            raise OutOfDomain(
                f"t={t} outside signal domain [{self.times[0]}, {self.times[-1]}]"
            )
        idx = int(np.searchsorted(self.times, t, side="right")) - 1
        return self.values[idx]


def value_at(sig: Signal, t: float) -> np.ndarray:
    return sig.value_at(t)


@dataclass(frozen=True)
class ParamBox:
    """Axis-aligned box in parameter space with strictly positive volume."""

    lower: np.ndarray
    upper: np.ndarray
    names: tuple[str, ...] | None = None

    def __post_init__(self):
        lower = np.asarray(self.lower, dtype=float)
        upper = np.asarray(self.upper, dtype=float)
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape or lower.ndim != 1:
            raise ValueError("lower/upper must be 1-D vectors of equal length")
        if not np.all(lower < upper):
            raise ValueError("need lower[i] < upper[i] on every axis")
        if self.names is not None and len(self.names) != lower.size:
            raise ValueError("one name per dimension")

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    def volume(self) -> float:
        return float(np.prod(self.widths))

    def contains(self, theta: np.ndarray) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower) and np.all(theta <= self.upper))

    def contains_box(self, other: "ParamBox") -> bool:
        return bool(
            np.all(other.lower >= self.lower) and np.all(other.upper <= self.upper)
        )

    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)


@dataclass(frozen=True)
class Distribution:
    """Sampling distribution over a box: uniform or diagonal truncated Gaussian.

    ``kind`` is "uniform" or "truncated-gaussian"; the Gaussian case carries
    a mean and a per-axis stddev and is truncated to ``support``.  Densities
    are normalized over the support and zero outside it; restriction to a
    sub-box renormalizes, analytically in both cases.
    """

    kind: str
    support: ParamBox
    mean: np.ndarray | None = field(default=None)
    stddev: np.ndarray | None = field(default=None)

    def __post_init__(self):
        if self.kind not in ("uniform", "truncated-gaussian"):
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.kind == "truncated-gaussian":
            mean = np.asarray(self.mean, dtype=float)
            std = np.asarray(self.stddev, dtype=float)
            if mean.shape != (self.support.dim,) or std.shape != (self.support.dim,):
                raise ValueError("mean/stddev must match the support dimension")
            if not np.all(std > 0):
                raise ValueError("stddev must be positive on every axis")
            object.__setattr__(self, "mean", mean)
            object.__setattr__(self, "stddev", std)

    @property
    def dim(self) -> int:
        return self.support.dim

    def _gauss_mass(self) -> float:
        # Diagonal covariance: the box normalizer is a product of 1-D CDF gaps.
        lo = (self.support.lower - self.mean) / self.stddev
        hi = (self.support.upper - self.mean) / self.stddev
        return float(np.prod(ndtr(hi) - ndtr(lo)))

    def density(self, theta: np.ndarray) -> float:
        theta = np.asarray(theta, dtype=float)
        if not self.support.contains(theta):
            return 0.0
        if self.kind == "uniform":
            return 1.0 / self.support.volume()
        z = (theta - self.mean) / self.stddev
        raw = np.exp(-0.5 * z * z) / (self.stddev * math.sqrt(2.0 * math.pi))
        return float(np.prod(raw)) / self._gauss_mass()

    def restrict(self, sub: ParamBox) -> "Distribution":
        """Renormalize onto ``sub``: density f/∫_sub f inside, zero outside."""
        if not self.support.contains_box(sub):
            raise SubsetNotContained(
                f"sub-box [{sub.lower}, {sub.upper}] exceeds support "
                f"[{self.support.lower}, {self.support.upper}]"
            )
        return Distribution(self.kind, sub, mean=self.mean, stddev=self.stddev)

    def sample(self, m: int, seed: int) -> np.ndarray:
        """Draw m i.i.d. points inside the support, deterministic given seed."""
        if m < 1:
            raise ValueError("need m >= 1")
        rng = np.random.default_rng(seed)
        if self.kind == "uniform":
            return rng.uniform(self.support.lower, self.support.upper, size=(m, self.dim))
        # Truncated Gaussian: rejection against the box.
        out = np.empty((m, self.dim))
        got = 0
        stalled = 0
        while got < m:
            batch = max(64, m - got)
            draws = rng.normal(self.mean, self.stddev, size=(batch, self.dim))
            ok = np.all(
                (draws >= self.support.lower) & (draws <= self.support.upper), axis=1
            )
            accepted = draws[ok]
            if accepted.shape[0] == 0:
                stalled += batch
                if stalled > MAX_CONSECUTIVE_REJECTIONS:
                    raise RejectionStall(
                        f"{stalled} consecutive rejections sampling box "
                        f"[{self.support.lower}, {self.support.upper}]"
                    )
                continue
            stalled = 0
            take = min(m - got, accepted.shape[0])
            out[got : got + take] = accepted[:take]
            got += take
        return out


def uniform(box: ParamBox) -> Distribution:
    return Distribution("uniform", box)


def truncated_gaussian(mean, stddev, box: ParamBox) -> Distribution:
    return Distribution("truncated-gaussian", box, mean=np.asarray(mean, float),
                        stddev=np.asarray(stddev, float))


def restrict(dist: Distribution, sub: ParamBox) -> Distribution:
    return dist.restrict(sub)


def sample(dist: Distribution, m: int, seed: int) -> np.ndarray:
    return dist.sample(m, seed)
