"""Partition driver and split-strategy tests.

End-to-end runs use tiny stub simulators whose robustness surface is known
in closed form (constant, or equal to theta_0), so verdict structure and
tiling can be checked without trusting the code under test.
"""

import itertools

import numpy as np
import pytest

from cverify.boxopt import OptimizerCfg
from cverify.conformal import SAFE, UNKNOWN, UNSAFE, classify
from cverify.partition import (
    FAILED,
    LabeledRegion,
    PartitionConfig,
    Region,
    partition_gu,
    partition_naive,
    partition_root,
    region_seed,
    root_region,
    verify,
)
from cverify.report import render_result_json
from cverify.signals import ParamBox, Signal, uniform
from cverify.sim import SimFailure
from cverify.stl import parse

FAST_OPT = OptimizerCfg(starts=16, sweeps=8)


# ---------------------------------------------------------------------------
# stub simulators: x0 is constant in time, so rho(G[0,1] x0>0) is known
# ---------------------------------------------------------------------------


class ConstSim:
    def __init__(self, value):
        self.value = float(value)

    def simulate(self, theta, times):
        times = np.asarray(times, dtype=float)
        return Signal(times=times, values=np.full((times.size, 1), self.value))


class PlaneSim:
    """Output x0(t) = theta_0 for all t: robustness of G[0,1] x0>0 is theta_0."""

    def simulate(self, theta, times):
        times = np.asarray(times, dtype=float)
        return Signal(times=times, values=np.full((times.size, 1), float(theta[0])))


class FailSim:
    def simulate(self, theta, times):
        raise SimFailure("deliberately broken")


PHI = parse("G[0,1] x0 > 0")


def _cfg(**kw):
    base = dict(
        alpha=0.4,
        sims_per_region=8,
        reg="gp",
        strategy="greatest-uncertainty",
        delta_min=0.25,
        max_regions=64,
        seed=0,
        optimizer=FAST_OPT,
    )
    base.update(kw)
    return PartitionConfig(**base)


def assert_tiles(boxes, root):
    assert sum(b.volume() for b in boxes) == pytest.approx(root.volume(), rel=1e-9)
    for b in boxes:
        assert root.contains_box(b)
    for a, b in itertools.combinations(boxes, 2):
        overlap = np.minimum(a.upper, b.upper) - np.maximum(a.lower, b.lower)
        assert float(np.prod(np.clip(overlap, 0.0, None))) == pytest.approx(
            0.0, abs=1e-12
        )


# ---------------------------------------------------------------------------
# split strategies in isolation
# ---------------------------------------------------------------------------


def test_naive_bisects_one_axis_at_midpoint():
    root = root_region(ParamBox(lower=[0.0, 2.0], upper=[1.0, 6.0]))
    kids = partition_naive(root, seed=7)
    assert len(kids) == 2
    assert [k.id for k in kids] == ["0.0", "0.1"]
    assert all(k.depth == 1 for k in kids)
    axis = int(np.random.default_rng(7).integers(2))
    mid = root.box.center()[axis]
    lo_kid, hi_kid = kids
    assert lo_kid.box.upper[axis] == mid and hi_kid.box.lower[axis] == mid
    other = 1 - axis
    for k in kids:
        assert k.box.lower[other] == root.box.lower[other]
        assert k.box.upper[other] == root.box.upper[other]
        assert k.box.volume() == pytest.approx(root.box.volume() / 2)
    assert_tiles([k.box for k in kids], root.box)


def test_naive_axis_choice_is_seeded():
    root = root_region(ParamBox(lower=[0.0, 0.0], upper=[1.0, 1.0]))
    axes = set()
    for seed in range(20):
        kids = partition_naive(root, seed=seed)
        axes.add(int(np.flatnonzero(kids[0].box.widths < 1.0)[0]))
        again = partition_naive(root, seed=seed)
        assert np.array_equal(kids[0].box.upper, again[0].box.upper)
    assert axes == {0, 1}


class _BumpGp:
    """Duck-typed surrogate: stddev peaks at a chosen interior point."""

    def __init__(self, peak, mean=0.0):
        self.peak = np.asarray(peak, dtype=float)
        self.mean = mean

    def predict_batch(self, pts):
        pts = np.atleast_2d(pts)
        return np.full(pts.shape[0], self.mean)

    def stddev_batch(self, pts):
        pts = np.atleast_2d(pts)
        d2 = np.sum((pts - self.peak) ** 2, axis=1)
        return 1.0 / (1.0 + d2)


def test_gu_cuts_all_axes_through_stddev_argmax():
    root = root_region(ParamBox(lower=[0.0, 0.0], upper=[1.0, 1.0]))
    kids = partition_gu(root, _BumpGp([0.5, 0.5]), FAST_OPT, seed=3)
    assert len(kids) == 4
    assert sorted(k.id for k in kids) == ["0.0", "0.1", "0.2", "0.3"]
    assert_tiles([k.box for k in kids], root.box)
    # one shared cut coordinate per axis, near the bump center
    for axis in range(2):
        cuts = {float(k.box.lower[axis]) for k in kids} | {
            float(k.box.upper[axis]) for k in kids
        }
        cuts -= {0.0, 1.0}
        assert len(cuts) == 1
        assert cuts.pop() == pytest.approx(0.5, abs=5e-3)


def test_gu_one_dimension_gives_two_children():
    root = root_region(ParamBox(lower=[-1.0], upper=[1.0]))
    kids = partition_gu(root, _BumpGp([0.25]), FAST_OPT, seed=1)
    assert len(kids) == 2
    assert_tiles([k.box for k in kids], root.box)
    assert kids[0].box.upper[0] == kids[1].box.lower[0]
    assert kids[0].box.upper[0] == pytest.approx(0.25, abs=5e-3)


def test_gu_clamps_cut_away_from_faces():
    root = root_region(ParamBox(lower=[0.0], upper=[1.0]))
    kids = partition_gu(root, _BumpGp([0.999]), FAST_OPT, seed=2)
    cut = float(kids[0].box.upper[0])
    assert cut == pytest.approx(0.9, abs=1e-9)  # central-80% clamp
    assert min(k.box.volume() for k in kids) >= 0.1 - 1e-9


class _LineGp:
    """1-D duck-typed surrogate with mu - sigma = theta - 0.5."""

    def predict_batch(self, pts):
        return np.atleast_2d(pts)[:, 0] + 0.5

    def stddev_batch(self, pts):
        return np.ones(np.atleast_2d(pts).shape[0])


def test_root_split_bisects_the_zero_crossing():
    root = root_region(ParamBox(lower=[0.0], upper=[1.0]))
    kids = partition_root(root, _LineGp(), FAST_OPT, seed=5)
    assert len(kids) == 2
    assert_tiles([k.box for k in kids], root.box)
    # mu - sigma = theta - 0.5, scale 0.5-ish => tol 1e-3 * scale
    assert kids[0].box.upper[0] == pytest.approx(0.5, abs=1e-3)


class _PositiveGp:
    def predict_batch(self, pts):
        return np.atleast_2d(pts)[:, 0] + 10.0

    def stddev_batch(self, pts):
        pts = np.atleast_2d(pts)
        return 1.0 / (1.0 + np.sum((pts - 0.3) ** 2, axis=1))


def test_root_split_falls_back_to_gu_without_sign_change():
    root = root_region(ParamBox(lower=[0.0], upper=[1.0]))
    kids = partition_root(root, _PositiveGp(), FAST_OPT, seed=6)
    gu_kids = partition_gu(root, _PositiveGp(), FAST_OPT, seed=6)
    assert len(kids) == 2
    assert np.array_equal(kids[0].box.upper, gu_kids[0].box.upper)


# ---------------------------------------------------------------------------
# config validation and seeding
# ---------------------------------------------------------------------------


def test_config_rejects_bad_values():
    with pytest.raises(ValueError):
        _cfg(sims_per_region=7)  # odd
    with pytest.raises(ValueError):
        _cfg(sims_per_region=2)  # too few
    with pytest.raises(ValueError):
        _cfg(alpha=0.05)  # needs m > 38
    with pytest.raises(ValueError):
        _cfg(strategy="bogus")
    with pytest.raises(ValueError):
        _cfg(delta_min_policy="bogus")
    with pytest.raises(ValueError):
        _cfg(delta_min=None)  # neither stop rule
    with pytest.raises(ValueError):
        _cfg(delta_frac=0.5)  # both stop rules
    with pytest.raises(ValueError):
        _cfg(delta_min=None, delta_frac=1.5)
    with pytest.raises(ValueError):
        _cfg(max_regions=0)
    with pytest.raises(ValueError):
        _cfg(workers=0)


def test_region_seed_depends_on_both_inputs():
    assert region_seed(0, "0") == region_seed(0, "0")
    assert region_seed(0, "0") != region_seed(1, "0")
    assert region_seed(0, "0.1") != region_seed(0, "0.2")


# ---------------------------------------------------------------------------
# verify() end to end on stub simulators
# ---------------------------------------------------------------------------


def test_constant_positive_sim_is_one_safe_region():
    root = root_region(ParamBox(lower=[0.0, 0.0], upper=[1.0, 1.0]))
    res = verify(ConstSim(1.0), PHI, root, _cfg())
    assert len(res.regions) == 1
    lr = res.regions[0]
    assert lr.verdict == SAFE
    assert lr.interval.lo <= 1.0 <= lr.interval.hi
    assert lr.sims_used == 8 and res.total_sims == 8
    assert not res.exhausted


def test_constant_negative_sim_is_one_unsafe_region():
    root = root_region(ParamBox(lower=[0.0, 0.0], upper=[1.0, 1.0]))
    res = verify(ConstSim(-1.0), PHI, root, _cfg())
    assert len(res.regions) == 1
    assert res.regions[0].verdict == UNSAFE


def test_plane_sim_partitions_and_tiles():
    # an axis-parallel frontier is adversarial for all-axes uncertainty
    # cuts, so the budget may run out; every structural invariant below
    # must hold either way
    root = root_region(ParamBox(lower=[-1.0, 0.0], upper=[1.0, 1.0]))
    res = verify(PlaneSim(), PHI, root, _cfg(max_regions=600, delta_min=0.4))
    assert len(res.regions) > 1
    assert_tiles([lr.region.box for lr in res.regions], root.box)
    verdicts = {lr.verdict for lr in res.regions}
    assert SAFE in verdicts and UNSAFE in verdicts
    for lr in res.regions:
        if lr.sims_used == 0:  # leftover queue entries exist only on budget
            assert res.exhausted and lr.verdict == UNKNOWN and lr.interval is None
            continue
        # verdicts match the reported interval (no witness policy in play)
        assert classify(lr.interval) == lr.verdict
        if lr.verdict == UNKNOWN:
            # processed Unknowns are only finalized once small on every axis
            assert np.all(lr.region.box.widths < 0.4)
    # the guarantee is in measure, not pointwise: the mass of Safe volume
    # where rho = theta_0 is actually negative must stay below alpha
    safe = [lr.region.box for lr in res.regions if lr.verdict == SAFE]
    unsafe = [lr.region.box for lr in res.regions if lr.verdict == UNSAFE]
    assert safe and unsafe
    safe_vol = sum(b.volume() for b in safe)
    safe_bad = sum(max(0.0, -float(b.lower[0])) * float(b.widths[1]) for b in safe)
    assert safe_bad / safe_vol <= 0.4
    unsafe_vol = sum(b.volume() for b in unsafe)
    unsafe_bad = sum(max(0.0, float(b.upper[0])) * float(b.widths[1]) for b in unsafe)
    assert unsafe_bad / unsafe_vol <= 0.4
    # split regions consume sims without appearing in the final list
    assert res.total_sims >= 8 * sum(lr.sims_used > 0 for lr in res.regions)
    assert res.total_sims % 8 == 0


def test_delta_frac_mode_stops_on_relative_diameter():
    root = root_region(ParamBox(lower=[-1.0, 0.0], upper=[1.0, 1.0]))
    cfg = _cfg(strategy="naive", delta_min=None, delta_frac=0.3, max_regions=256)
    res = verify(PlaneSim(), PHI, root, cfg)
    assert not res.exhausted
    widths0 = root.box.widths
    for lr in res.regions:
        if lr.verdict == UNKNOWN:
            assert np.all(lr.region.box.widths < 0.3 * widths0)
    assert_tiles([lr.region.box for lr in res.regions], root.box)


def test_root_split_strategy_runs_end_to_end():
    root = root_region(ParamBox(lower=[-1.0, 0.0], upper=[1.0, 1.0]))
    res = verify(PlaneSim(), PHI, root, _cfg(strategy="root-split"))
    assert_tiles([lr.region.box for lr in res.regions], root.box)
    assert {SAFE, UNSAFE} <= {lr.verdict for lr in res.regions} | {UNKNOWN}


def test_budget_exhaustion_flags_and_labels_leftovers():
    root = root_region(ParamBox(lower=[-1.0, 0.0], upper=[1.0, 1.0]))
    res = verify(PlaneSim(), PHI, root, _cfg(max_regions=3, delta_min=0.01))
    assert res.exhausted
    leftover = [lr for lr in res.regions if lr.sims_used == 0]
    assert leftover, "expected unprocessed queue entries"
    for lr in leftover:
        assert lr.verdict == UNKNOWN and lr.interval is None
    assert_tiles([lr.region.box for lr in res.regions], root.box)
    assert res.total_sims == 3 * 8


def test_counterexample_unsafe_policy_promotes_witness():
    box = ParamBox(lower=[-0.2, 0.0], upper=[0.2, 1.0])
    cfg = _cfg(delta_min=3.0, delta_min_policy="counterexample-unsafe")
    res = verify(PlaneSim(), PHI, root_region(box), cfg)
    assert len(res.regions) == 1
    lr = res.regions[0]
    assert lr.verdict == UNSAFE
    assert lr.counterexample is not None
    assert lr.counterexample[0] < 0.0  # the witness really violates
    assert classify(lr.interval) == UNKNOWN  # interval itself straddles 0


def test_default_policy_leaves_small_mixed_region_unknown():
    box = ParamBox(lower=[-0.2, 0.0], upper=[0.2, 1.0])
    res = verify(PlaneSim(), PHI, root_region(box), _cfg(delta_min=3.0))
    assert len(res.regions) == 1
    assert res.regions[0].verdict == UNKNOWN
    assert res.regions[0].counterexample is None


def test_sim_failure_marks_region_failed_and_run_continues():
    root = root_region(ParamBox(lower=[0.0, 0.0], upper=[1.0, 1.0]))
    res = verify(FailSim(), PHI, root, _cfg())
    assert len(res.regions) == 1
    lr = res.regions[0]
    assert lr.verdict == FAILED and lr.interval is None and lr.sims_used == 0
    assert res.total_sims == 0 and not res.exhausted


def test_results_identical_across_worker_counts():
    root = root_region(ParamBox(lower=[-1.0, 0.0], upper=[1.0, 1.0]))
    res1 = verify(PlaneSim(), PHI, root, _cfg(workers=1))
    res3 = verify(PlaneSim(), PHI, root, _cfg(workers=3))
    assert render_result_json(res1) == render_result_json(res3)


def test_results_identical_across_repeat_runs():
    root = root_region(ParamBox(lower=[-1.0, 0.0], upper=[1.0, 1.0]))
    a = verify(PlaneSim(), PHI, root, _cfg())
    b = verify(PlaneSim(), PHI, root, _cfg())
    assert render_result_json(a) == render_result_json(b)


def test_seed_changes_the_partition():
    root = root_region(ParamBox(lower=[-1.0, 0.0], upper=[1.0, 1.0]))
    a = verify(PlaneSim(), PHI, root, _cfg(seed=0))
    b = verify(PlaneSim(), PHI, root, _cfg(seed=1))
    assert render_result_json(a) != render_result_json(b)


def test_regions_sorted_by_split_path():
    root = root_region(ParamBox(lower=[-1.0, 0.0], upper=[1.0, 1.0]))
    res = verify(PlaneSim(), PHI, root, _cfg())
    ids = [tuple(int(p) for p in lr.region.id.split(".")) for lr in res.regions]
    assert ids == sorted(ids)


def test_side_gp_acquisition_for_non_gp_regressor():
    # verdict regressor poly1 still needs a GP for the uncertainty split
    root = root_region(ParamBox(lower=[-1.0, 0.0], upper=[1.0, 1.0]))
    res = verify(PlaneSim(), PHI, root, _cfg(reg="poly1", max_regions=128))
    assert len(res.regions) > 1
    assert_tiles([lr.region.box for lr in res.regions], root.box)