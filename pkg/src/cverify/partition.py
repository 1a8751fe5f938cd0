"""Worklist verification: sample, simulate, conformalize, split until small.

The driver pops a parameter region, estimates a conservative robustness
interval over it, and either finalizes a verdict (Safe / Unsafe / Unknown)
or subdivides the region and queues the children.  Three split strategies
are provided: a seeded random bisection, a greatest-uncertainty split
through the GP posterior-stddev argmax, and a root split through a zero
of mu - sigma.

Every region carries a stable split-path id ("0", "0.1", "0.1.3", ...) and
all per-region randomness is derived from (config seed, region id), so the
output is byte-for-byte reproducible no matter how many worker threads
drain the queue or in which order regions complete.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .boxopt import OptimizerCfg, maximize_on_box
from .conformal import (
    SAFE,
    UNKNOWN,
    UNSAFE,
    RobustnessInterval,
    classify,
    conf_int,
    region_interval,
)
from .regress import Dataset, fit_gp
from .signals import Distribution, ParamBox, Signal, restrict, uniform
from .sim import DEFAULT_PERIOD, SimFailure, sample_times, simulate_many
from .stl import horizon, robustness

FAILED = "Failed"

STRATEGIES = ("naive", "greatest-uncertainty", "root-split")
POLICIES = ("unknown", "counterexample-unsafe")

# Cut points are clamped into the central portion of each axis so a split
# can never produce a zero- or sliver-volume child.
CENTRAL_FRACTION = 0.8


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Region:
    """A box of parameter space plus the sampling distribution on it."""

    box: ParamBox
    dist: Distribution
    depth: int
    id: str


def root_region(box: ParamBox, dist: Optional[Distribution] = None) -> Region:
    """Wrap the whole parameter box as the root of the split tree."""
    if dist is None:
        dist = uniform(box)
    return Region(box=box, dist=restrict(dist, box), depth=0, id="0")


def region_seed(seed: int, region_id: str) -> int:
    """Stable 64-bit stream id for one region of one run."""
    digest = hashlib.sha256(f"{seed}:{region_id}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def _id_key(region_id: str):
    return tuple(int(part) for part in region_id.split("."))


@dataclass(frozen=True)
class LabeledRegion:
    """A finalized region with its verdict.

    interval is None when the region was never processed (budget ran out)
    or its simulations failed.  counterexample is set only when the
    counterexample-unsafe policy promoted a small Unknown region.
    """

    region: Region
    verdict: str
    interval: Optional[RobustnessInterval]
    sims_used: int
    counterexample: Optional[tuple] = None


@dataclass(frozen=True)
class PartitionConfig:
    alpha: float
    sims_per_region: int
    reg: str = "gp"
    strategy: str = "greatest-uncertainty"
    delta_frac: Optional[Sequence[float]] = None
    delta_min: Optional[float] = None
    max_regions: int = 512
    seed: int = 0
    delta_min_policy: str = "unknown"
    workers: int = 1
    sample_period: float = DEFAULT_PERIOD
    optimizer: OptimizerCfg = field(default_factory=OptimizerCfg)

    def __post_init__(self):
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f"alpha must be in (0, 1), got {self.alpha}")
        m = self.sims_per_region
        if m < 4 or m % 2 != 0:
            raise ValueError(f"sims_per_region must be even and >= 4, got {m}")
        if self.alpha < 2.0 / (m + 2.0):
            raise ValueError(
                f"alpha={self.alpha} needs more than {m} sims per region "
                f"(alpha >= 2/(m+2) required)"
            )
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")
        if self.delta_min_policy not in POLICIES:
            raise ValueError(f"unknown policy {self.delta_min_policy!r}")
        if (self.delta_frac is None) == (self.delta_min is None):
            raise ValueError("set exactly one of delta_frac / delta_min")
        if self.delta_frac is not None:
            frac = np.atleast_1d(np.asarray(self.delta_frac, dtype=float))
            if not np.all((frac > 0.0) & (frac <= 1.0)):
                raise ValueError(f"delta_frac entries must be in (0, 1]: {frac}")
            object.__setattr__(self, "delta_frac", tuple(float(v) for v in frac))
        if self.delta_min is not None and not self.delta_min > 0.0:
            raise ValueError(f"delta_min must be positive, got {self.delta_min}")
        if self.max_regions < 1:
            raise ValueError("max_regions must be >= 1")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")
        if not self.sample_period > 0.0:
            raise ValueError("sample_period must be positive")


@dataclass(frozen=True)
class PartitionResult:
    regions: tuple  # LabeledRegion, sorted by split-path id
    alpha: float
    seed: int
    strategy: str
    total_sims: int
    exhausted: bool

    def with_verdict(self, verdict: str) -> list:
        return [lr for lr in self.regions if lr.verdict == verdict]

    def volume_fraction(self, verdict: str, root_box: ParamBox) -> float:
        vol = sum(lr.region.box.volume() for lr in self.with_verdict(verdict))
        return vol / root_box.volume()


# ---------------------------------------------------------------------------
# Split strategies
# ---------------------------------------------------------------------------


def _children_through(region: Region, point: np.ndarray, axes) -> list:
    """2^len(axes) children obtained by cutting each listed axis at point."""
    axes = list(axes)
    box = region.box
    kids = []
    for idx in range(2 ** len(axes)):
        lower = np.array(box.lower, dtype=float)
        upper = np.array(box.upper, dtype=float)
        for j, axis in enumerate(axes):
            if (idx >> j) & 1:
                lower[axis] = point[axis]
            else:
                upper[axis] = point[axis]
        child_box = ParamBox(lower=lower, upper=upper, names=box.names)
        kids.append(
            Region(
                box=child_box,
                dist=restrict(region.dist, child_box),
                depth=region.depth + 1,
                id=f"{region.id}.{idx}",
            )
        )
    return kids


def _clamp_central(box: ParamBox, theta: np.ndarray) -> np.ndarray:
    margin = 0.5 * (1.0 - CENTRAL_FRACTION) * box.widths
    return np.clip(theta, np.asarray(box.lower) + margin, np.asarray(box.upper) - margin)


def partition_naive(region: Region, seed: int) -> list:
    """Bisect a seeded-random axis at its midpoint."""
    rng = np.random.default_rng(seed)
    axis = int(rng.integers(region.box.dim))
    return _children_through(region, region.box.center(), [axis])


def partition_gu(
    region: Region,
    gp,
    optimizer: OptimizerCfg = OptimizerCfg(),
    seed: int = 0,
) -> list:
    """Cut every axis through the posterior-stddev argmax (clamped inward)."""
    best = maximize_on_box(gp.stddev_batch, region.box, optimizer, seed)
    cut = _clamp_central(region.box, best.theta)
    return _children_through(region, cut, range(region.box.dim))


def partition_root(
    region: Region,
    gp,
    optimizer: OptimizerCfg = OptimizerCfg(),
    seed: int = 0,
    lines_per_axis: int = 8,
    tol: Optional[float] = None,
    scan_points: int = 33,
) -> list:
    """Cut through a zero of mu - sigma found by bisection on probe lines.

    Scans axis-aligned random lines for sign changes of mu - sigma,
    bisects each bracket, keeps the root with the largest posterior
    stddev, and cuts through it on every axis.  Falls back to the
    greatest-uncertainty split when no sign change exists.
    """
    box = region.box
    k = box.dim
    rng = np.random.default_rng(seed)

    def acq(pts):
        return gp.predict_batch(pts) - gp.stddev_batch(pts)

    lines = []
    for axis in range(k):
        anchors = rng.uniform(box.lower, box.upper, size=(lines_per_axis, k))
        ts = np.linspace(box.lower[axis], box.upper[axis], scan_points)
        for anchor in anchors:
            pts = np.tile(anchor, (scan_points, 1))
            pts[:, axis] = ts
            lines.append((axis, pts, acq(pts)))

    scale = max(float(max(np.max(np.abs(v)) for _, _, v in lines)), 1e-12)
    eff_tol = (1e-3 * scale) if tol is None else tol

    roots = []
    for axis, pts, vals in lines:
        for i in np.flatnonzero(np.abs(vals) <= eff_tol):
            roots.append(pts[i].copy())
        for i in np.flatnonzero(vals[:-1] * vals[1:] < 0.0):
            lo_pt, hi_pt = pts[i].copy(), pts[i + 1].copy()
            f_lo = vals[i]
            for _ in range(80):
                mid = 0.5 * (lo_pt + hi_pt)
                f_mid = float(acq(mid[None, :])[0])
                if abs(f_mid) <= eff_tol:
                    lo_pt = hi_pt = mid
                    break
                if (f_mid < 0.0) == (f_lo < 0.0):
                    lo_pt, f_lo = mid, f_mid
                else:
                    hi_pt = mid
            roots.append(0.5 * (lo_pt + hi_pt))

    if not roots:
        return partition_gu(region, gp, optimizer, seed)

    roots_arr = np.asarray(roots)
    best = roots_arr[int(np.argmax(gp.stddev_batch(roots_arr)))]
    cut = _clamp_central(box, best)
    return _children_through(region, cut, range(k))


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _Outcome:
    sims: int
    label: Optional[LabeledRegion]
    children: list


def _small(region: Region, root_widths: np.ndarray, cfg: PartitionConfig) -> bool:
    widths = region.box.widths
    if cfg.delta_min is not None:
        return bool(np.all(widths < cfg.delta_min))
    frac = np.asarray(cfg.delta_frac, dtype=float)
    if frac.size == 1:
        frac = np.full_like(root_widths, frac[0])
    return bool(np.all(widths < frac * root_widths))


def _region_thetas(region: Region, cfg: PartitionConfig) -> np.ndarray:
    """The sample draw for a region; must mirror _process's stream head."""
    rng = np.random.default_rng(region_seed(cfg.seed, region.id))
    theta_seed = int(rng.integers(2**63))
    return region.dist.sample(cfg.sims_per_region, theta_seed)


def _process(sim, phi, times, region: Region, cfg: PartitionConfig,
             root_widths: np.ndarray, presim=None) -> _Outcome:
    m = cfg.sims_per_region
    rng = np.random.default_rng(region_seed(cfg.seed, region.id))
    # one fixed draw order so every code path sees the same stream;
    # theta_seed is consumed even when the driver pre-simulated the batch
    theta_seed = int(rng.integers(2**63))
    conf_seed = int(rng.integers(2**63))
    opt_seed = int(rng.integers(2**63))
    split_seed = int(rng.integers(2**63))

    if presim is not None:
        thetas, sigs = presim
    else:
        thetas = region.dist.sample(m, theta_seed)
        try:
            sigs = simulate_many(sim, thetas, times)
        except SimFailure:
            return _Outcome(0, LabeledRegion(region, FAILED, None, 0), [])

    rhos = np.array([robustness(phi, s) for s in sigs])
    data = Dataset(thetas, rhos)
    cm = conf_int(data, cfg.alpha, reg=cfg.reg, seed=conf_seed)
    iv = region_interval(cm, region.box, cfg.optimizer, seed=opt_seed)
    verdict = classify(iv)

    if verdict != UNKNOWN:
        return _Outcome(m, LabeledRegion(region, verdict, iv, m), [])

    if _small(region, root_widths, cfg):
        if cfg.delta_min_policy == "counterexample-unsafe" and np.any(rhos < 0.0):
            witness = tuple(float(v) for v in thetas[int(np.argmin(rhos))])
            return _Outcome(
                m, LabeledRegion(region, UNSAFE, iv, m, counterexample=witness), []
            )
        return _Outcome(m, LabeledRegion(region, UNKNOWN, iv, m), [])

    if cfg.strategy == "naive":
        children = partition_naive(region, split_seed)
    else:
        gp = cm.surrogate if cfg.reg == "gp" else fit_gp(data)
        if cfg.strategy == "greatest-uncertainty":
            children = partition_gu(region, gp, cfg.optimizer, split_seed)
        else:
            children = partition_root(region, gp, cfg.optimizer, split_seed)
    return _Outcome(m, None, children)


GEN_CHUNK = 32  # regions whose samples share one vectorized simulate call


def _presimulate(sim, times, block, cfg: PartitionConfig) -> dict:
    """Trajectories for one chunk of regions in a single vectorized call.

    Vectorized models integrate row-independently, so stacking the sample
    batches of several regions gives bitwise-identical trajectories at a
    fraction of the dispatch overhead.  Simulators without a batch path
    (external processes) are left to the per-region fallback in _process,
    as is a chunk whose batched call fails.  Chunking also bounds how many
    trajectories are held in memory at once, which matters for runs with
    tens of thousands of regions.
    """
    if not hasattr(sim, "simulate_batch"):
        return {}
    thetas = [_region_thetas(r, cfg) for r in block]
    tarr = np.asarray(times, dtype=float)
    try:
        vals = sim.simulate_batch(np.concatenate(thetas, axis=0), tarr)
    except SimFailure:
        return {}
    out = {}
    ofs = 0
    for r, th in zip(block, thetas):
        out[r.id] = (th, [Signal(times=tarr, values=vals[ofs + s])
                          for s in range(len(th))])
        ofs += len(th)
    return out


def verify(sim, phi, root: Region, cfg: PartitionConfig) -> PartitionResult:
    """Drive the worklist to a full labeling of the root box.

    Regions are processed breadth-first in split-path order; once
    cfg.max_regions regions have been examined, whatever is still queued
    is finalized as Unknown and the result is flagged exhausted.
    """
    times = sample_times(horizon(phi), cfg.sample_period)
    root_widths = np.array(root.box.widths, dtype=float)

    finalized = {}
    worklist = [root]
    processed = 0
    total_sims = 0
    exhausted = False

    with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
        while worklist:
            worklist.sort(key=lambda r: _id_key(r.id))
            budget = cfg.max_regions - processed
            admitted, leftover = worklist[:budget], worklist[budget:]
            if leftover:
                exhausted = True
                for r in leftover:
                    finalized[r.id] = LabeledRegion(r, UNKNOWN, None, 0)
            if not admitted:
                break
            outcomes = []
            for i in range(0, len(admitted), GEN_CHUNK):
                block = admitted[i:i + GEN_CHUNK]
                presims = _presimulate(sim, times, block, cfg)
                outcomes.extend(
                    pool.map(
                        lambda r: _process(sim, phi, times, r, cfg,
                                           root_widths,
                                           presim=presims.get(r.id)),
                        block,
                    )
                )
            processed += len(admitted)
            worklist = []
            for out in outcomes:
                total_sims += out.sims
                if out.label is not None:
                    finalized[out.label.region.id] = out.label
                else:
                    worklist.extend(out.children)

    regions = tuple(
        sorted(finalized.values(), key=lambda lr: _id_key(lr.region.id))
    )
    return PartitionResult(
        regions=regions,
        alpha=cfg.alpha,
        seed=cfg.seed,
        strategy=cfg.strategy,
        total_sims=total_sims,
        exhausted=exhausted,
    )