import math

import numpy as np
import pytest

from rwre.env import Atomic, ConfigError, JumpSupport, NearestNeighbor, Periodic, SiteLaw
from rwre.estimators import (
    DECAYING,
    DIVERGING,
    INCONCLUSIVE,
    LOWER_BOUND,
    UPPER_BOUND,
    Budget,
    EstimateWithCI,
    NotTransientRight,
    Thresholds,
    Verdict,
    ballisticity_verdict,
    combined_se,
    estimate_EH1,
    estimate_EN0,
    estimate_velocity_occupation,
    estimate_velocity_regen,
    estimate_velocity_slope,
    inverse_with_se,
    sample_Nbar0_batch,
    transience_diagnostic,
)

DELTA = Atomic.single(SiteLaw.from_offsets({1: 1.0}, JumpSupport(1, 1)))
P075 = NearestNeighbor((0.75,), (1.0,))
JUMP2 = Atomic.single(SiteLaw.from_offsets({-1: 0.5, 2: 0.5}, JumpSupport(1, 2)))
ZERO = NearestNeighbor((0.2, 0.8), (0.3, 0.7))
BJ12 = Atomic(
    (
        SiteLaw.from_offsets({-1: 0.7, 2: 0.3}, JumpSupport(1, 2)),
        SiteLaw.from_offsets({-1: 0.2, 1: 0.4, 2: 0.4}, JumpSupport(1, 2)),
    ),
    (0.5, 0.5),
)


def within(est, target, k=4.0):
    return abs(est.point - target) <= k * est.stderr


# --- the trivial law ------------------------------------------------------------------------


def test_delta_law_is_exact_everywhere():
    assert estimate_velocity_slope(DELTA, 100, 5, 0).point == 1.0
    regen = estimate_velocity_regen(DELTA, 100, 5, None, 0)
    assert regen.point == 1.0 and regen.stderr == 0.0
    assert estimate_velocity_occupation(DELTA, 20, (4, 8, 100), 0).point == 1.0
    eh1 = estimate_EH1(DELTA, 10, 50, 0)
    en0 = estimate_EN0(DELTA, 10, 8, 50, 0)
    assert (eh1.point, eh1.stderr) == (1.0, 0.0) and (en0.point, en0.stderr) == (1.0, 0.0)
    assert DIVERGING not in eh1.flags + en0.flags


# --- velocity against closed forms -----------------------------------------------------


def test_slope_and_regen_p075():
    s = estimate_velocity_slope(P075, 20_000, 300, 1)
    r = estimate_velocity_regen(P075, 20_000, 300, 2, 1)
    assert within(s, 0.5) and within(r, 0.5)
    assert s.stderr < 0.01 and r.stderr < 0.01
    assert DECAYING not in s.flags


def test_regen_jump2_within_001():
    r = estimate_velocity_regen(JUMP2, 20_000, 100, None, 2)
    assert abs(r.point - 0.5) < 0.01 and within(r, 0.5)


def test_occupation_p075():
    e = estimate_velocity_occupation(P075, 1500, (64, 64, 10**6), 3)
    assert abs(e.point - 0.5) < 0.02 + 4 * e.stderr
    assert within(e, 0.5)
    assert e.diagnostics["mean_Nbar0"] == pytest.approx(2.0, abs=4 * e.diagnostics["mean_Nbar0_se"])


@pytest.mark.parametrize("est", [estimate_EH1, estimate_EN0])
def test_hitting_and_occupation_p075_are_two(est):
    args = (P075, 40_000, 10_000, 4) if est is estimate_EH1 else (P075, 40_000, 64, 10_000, 4)
    e = est(*args)
    assert abs(e.point - 2.0) < 0.05
    assert within(e, 2.0)
    assert DIVERGING not in e.flags and e.censored_fraction == 0


def test_nn_identity_three_ways():
    n = estimate_EN0(P075, 5000, 64, 10_000, 5)
    h = estimate_EH1(P075, 5000, 10_000, 5)
    s = estimate_velocity_slope(P075, 20_000, 200, 5)
    for a, b in [(s, inverse_with_se(n)), (s, inverse_with_se(h))]:
        pa, sa = a.point, a.stderr
        pb, sb = b
        assert abs(pa - pb) < 4 * combined_se(sa, sb)


def test_two_point_nn_speed():
    law = NearestNeighbor((0.4, 0.8), (0.5, 0.5))
    r = estimate_velocity_regen(law, 200_000, 40, None, 6)
    assert within(r, 1 / 15)


# --- zero-speed law ---------------------------------------------------------------


def test_zero_speed_slope_is_small_and_decaying():
    s = estimate_velocity_slope(ZERO, 100_000, 200, 7)
    assert abs(s.point) < 0.01
    assert DECAYING in s.flags
    assert s.diagnostics["decay_exponent"] < -0.2


def test_zero_speed_hitting_time_diverges():
    e = estimate_EH1(ZERO, 8000, 2000, 8)
    assert DIVERGING in e.flags
    assert e.diagnostics["stage_means"][2] > e.diagnostics["stage_means"][0]


# --- inequalities and pairing ------------------------------------------------------------


def test_hitting_dominates_occupation_per_replica():
    # same seed gives the same walk to both estimators, and visits to 0 all happen before H>=1
    h = estimate_EH1(BJ12, 500, 10_000, 9)
    n = estimate_EN0(BJ12, 500, 1, 10_000, 9)
    assert np.all(n.raw["stage0"] <= h.raw["stage0"])


def test_occupation_nondecreasing_in_barrier():
    e = estimate_EN0(BJ12, 300, 8, 10_000, 10)
    st = np.column_stack([e.raw[f"stage{i}"] for i in range(3)])
    assert np.all(np.diff(st, axis=1) >= 0)


def test_inequality_chain_bj12():
    v = estimate_velocity_slope(BJ12, 20_000, 200, 11)
    n = estimate_EN0(BJ12, 4000, 64, 10**5, 11)
    h = estimate_EH1(BJ12, 4000, 10**5, 11)
    bar = estimate_velocity_occupation(BJ12, 800, (64, 64, 10**6), 11)
    nbar = bar.diagnostics["mean_Nbar0"]
    assert nbar <= n.point + 4 * combined_se(bar.diagnostics["mean_Nbar0_se"], n.stderr)
    assert n.point <= h.point + 4 * combined_se(n.stderr, h.stderr)
    inv, inv_se = inverse_with_se(n)
    assert v.point >= inv - 4 * combined_se(v.stderr, inv_se)


# --- censoring, flags and bookkeeping ---------------------------------------------------------


def test_censoring_flags():
    slow = NearestNeighbor((0.55,), (1.0,))
    e = estimate_EH1(slow, 200, 3, 0)
    assert LOWER_BOUND in e.flags and e.is_lower_bound and e.censored_fraction > 0
    o = estimate_velocity_occupation(slow, 50, (64, 64, 3), 0)
    assert UPPER_BOUND in o.flags and o.is_upper_bound


def test_regen_too_few_increments_is_inconclusive():
    e = estimate_velocity_regen(NearestNeighbor((0.55,), (1.0,)), 30, 2, None, 0)
    assert INCONCLUSIVE in e.flags


@pytest.mark.parametrize("workers", [2, 4])
def test_results_do_not_depend_on_worker_count(workers):
    a = estimate_velocity_slope(BJ12, 2000, 40, 12)
    b = estimate_velocity_slope(BJ12, 2000, 40, 12, workers=workers)
    assert np.array_equal(a.raw["X_n"], b.raw["X_n"])
    va, *_ = sample_Nbar0_batch(BJ12, 30, 12, 64, 32, 10**5)
    vb, *_ = sample_Nbar0_batch(BJ12, 30, 12, 64, 32, 10**5, workers=workers)
    assert np.array_equal(va, vb)
    ra = estimate_velocity_regen(BJ12, 2000, 20, None, 12)
    rb = estimate_velocity_regen(BJ12, 2000, 20, None, 12, workers=workers)
    assert (ra.point, ra.stderr) == (rb.point, rb.stderr)


def test_seed_changes_results():
    a = estimate_velocity_slope(BJ12, 2000, 40, 12)
    b = estimate_velocity_slope(BJ12, 2000, 40, 13)
    assert not np.array_equal(a.raw["X_n"], b.raw["X_n"])


def test_quenched_mode_shares_the_environment():
    e = estimate_EH1(Periodic((SiteLaw.nearest_neighbor(0.9),)), 100, 1000, 0, quenched=True)
    assert e.point == pytest.approx(1.25, abs=4 * e.stderr + 1e-12)


def test_nonpositive_arguments_rejected():
    with pytest.raises(ConfigError):
        estimate_velocity_slope(P075, 100, 0, 0)
    with pytest.raises(ConfigError):
        estimate_EN0(P075, 10, 0, 10, 0)
    with pytest.raises(ConfigError) as err:
        Budget(replicas=0, n_steps=-1)
    assert len(err.value.problems) == 2
    with pytest.raises(ConfigError):
        Thresholds(n_sigma=0, max_censored=2)


def test_budget_scaling():
    b = Budget(replicas=10, samples=5, hitting_replicas=7).scaled(2)
    assert (b.replicas, b.samples, b.hitting_replicas, b.n_hitting) == (20, 10, 14, 14)
    assert Budget(replicas=3).n_hitting == 3


def test_estimate_validation_and_dict():
    with pytest.raises(ValueError):
        EstimateWithCI(1.0, -1.0, 1, 0.0, "x")
    with pytest.raises(ValueError):
        EstimateWithCI(1.0, 0.0, 1, 1.5, "x")
    d = estimate_EH1(P075, 20, 100, 0).to_dict()
    assert isinstance(d["diagnostics"]["stage_means"][0], float)
    assert inverse_with_se(EstimateWithCI(0.0, 1.0, 1, 0.0, "x")) == (math.inf, math.inf)


# --- transience and verdict ---------------------------------------------------------------------


def test_transience_diagnostic():
    assert transience_diagnostic(P075)["status"] == "PASS"
    assert transience_diagnostic(ZERO)["status"] == "PASS"
    assert transience_diagnostic(NearestNeighbor((0.25,), (1.0,)))["status"] == "FAIL"
    assert transience_diagnostic(JUMP2)["method"] == "every site drifts right"
    assert transience_diagnostic(BJ12, n_steps=5000)["status"] == "PASS"
    left = Atomic.single(SiteLaw.from_offsets({-1: 0.7, 2: 0.3}, JumpSupport(1, 2)))
    assert transience_diagnostic(left, n_steps=2000)["status"] == "FAIL"


def test_verdict_rejects_left_transient_law():
    with pytest.raises(NotTransientRight):
        ballisticity_verdict(NearestNeighbor((0.25,), (1.0,)), Budget(n_steps=100, replicas=10), 0)


def test_verdict_ballistic_p075():
    b = Budget(n_steps=20_000, replicas=200, step_cap=10_000, hitting_replicas=2000)
    v = ballisticity_verdict(P075, b, 0)
    assert v.verdict is Verdict.BALLISTIC
    assert set(v.to_dict()["evidence"]) == {"slope", "EH1", "EN0"}


def test_verdict_tiny_budget_is_allowed_to_be_inconclusive():
    v = ballisticity_verdict(NearestNeighbor((0.55,), (1.0,)), Budget(n_steps=100, replicas=10, step_cap=100), 0)
    assert v.verdict in (Verdict.INCONCLUSIVE, Verdict.BALLISTIC)
    assert v.verdict is not Verdict.ZERO_SPEED


def test_verdict_zero_speed():
    b = Budget(n_steps=30_000, replicas=1000, step_cap=30_000, hitting_replicas=15_000)
    v = ballisticity_verdict(ZERO, b, 20240607)
    assert v.verdict is Verdict.ZERO_SPEED
    assert DIVERGING in v.evidence["EH1"].flags
