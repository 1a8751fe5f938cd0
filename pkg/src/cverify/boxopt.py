"""Multi-start box-constrained maximization of batched scalar fields.

The surrogates and acquisition functions being optimized are cheap to
evaluate in bulk, so instead of running restarts sequentially this keeps
every restart alive in one array and sweeps coordinates: each visit lays a
grid along the coordinate's full range, picks the best point per restart,
then refines with two shrinking brackets.  Deterministic given the seed;
no threads, so results cannot depend on scheduling.

The returned `slack` is the largest value gain any restart made during the
final sweep — a convergence residual used by callers that must widen the
optimum into a conservative bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .signals import ParamBox


@dataclass(frozen=True)
class OptimizerCfg:
    starts: int = 256
    grid: int = 11
    rounds: int = 3
    sweeps: int = 30
    tol: float = 1e-10

    def __post_init__(self):
        if self.starts < 1 or self.grid < 3 or self.rounds < 1 or self.sweeps < 1:
            raise ValueError("degenerate optimizer configuration")


@dataclass(frozen=True)
class BoxOptimum:
    theta: np.ndarray
    value: float
    slack: float  # best-restart improvement seen in the last sweep


def latin_hypercube(box: ParamBox, count: int, rng) -> np.ndarray:
    """One point per stratum per axis, shuffled independently across axes."""
    u = (np.arange(count)[:, None] + rng.random((count, box.dim))) / count
    for j in range(box.dim):
        u[:, j] = u[rng.permutation(count), j]
    return box.lower + u * (box.upper - box.lower)


def maximize_on_box(f_batch, box: ParamBox, cfg: OptimizerCfg, seed: int) -> BoxOptimum:
    """Maximize f over the box; f_batch maps (p, k) points to (p,) values."""
    rng = np.random.default_rng(seed)
    pts = latin_hypercube(box, cfg.starts, rng)
    vals = np.asarray(f_batch(pts), dtype=float)
    lo, hi = box.lower, box.upper
    widths = box.widths

    slack = np.inf
    for _ in range(cfg.sweeps):
        before = vals.copy()
        for dim in range(box.dim):
            span = widths[dim]
            centers = pts[:, dim].copy()
            half = np.full(cfg.starts, span / 2.0)
            mids = np.full(cfg.starts, (lo[dim] + hi[dim]) / 2.0)
            for rnd in range(cfg.rounds):
                offs = np.linspace(-1.0, 1.0, cfg.grid)
                cand = mids[:, None] + offs[None, :] * half[:, None]
                np.clip(cand, lo[dim], hi[dim], out=cand)
                # include the incumbent so a visit can never lose ground
                cand = np.concatenate([cand, centers[:, None]], axis=1)
                trial = np.repeat(pts, cand.shape[1], axis=0)
                trial[:, dim] = cand.reshape(-1)
                tv = np.asarray(f_batch(trial), dtype=float).reshape(
                    cfg.starts, cand.shape[1]
                )
                best = np.argmax(tv, axis=1)
                centers = cand[np.arange(cfg.starts), best]
                vals = np.maximum(vals, tv[np.arange(cfg.starts), best])
                mids = centers
                half = half * (2.0 / (cfg.grid - 1))
            pts[:, dim] = centers
        gains = vals - before
        slack = float(gains.max(initial=0.0))
        if slack < cfg.tol:
            break
    winner = int(np.argmax(vals))
    return BoxOptimum(theta=pts[winner].copy(), value=float(vals[winner]), slack=slack)


def minimize_on_box(f_batch, box: ParamBox, cfg: OptimizerCfg, seed: int) -> BoxOptimum:
    neg = maximize_on_box(lambda x: -np.asarray(f_batch(x)), box, cfg, seed)
    return BoxOptimum(theta=neg.theta, value=-neg.value, slack=neg.slack)
