import numpy as np
import pytest

from spdz_transfer.adversary import (
    Aborted,
    Completed,
    Strategy,
    TamperPlan,
    UndetectedDeviation,
    detection_rate,
    privacy_audit,
    run_with_adversary,
    tiny_weave,
)

N = 3


def test_no_tamper_completes():
    out = run_with_adversary(None, tiny_weave(), N)
    assert isinstance(out, Completed) and len(out.results) == N


@pytest.mark.parametrize(
    "strategy",
    [Strategy.ADD_DELTA_TO_VALUE_SHARE, Strategy.CORRUPT_MAC_SHARE, Strategy.INCONSISTENT_BROADCAST],
)
def test_message_strategies_abort(strategy):
    out = run_with_adversary(TamperPlan(strategy, (2,), delta=3), tiny_weave(), N)
    assert isinstance(out, Aborted)
    assert out.error == "MacCheckFailed"


def test_skewed_triple_aborts():
    out = run_with_adversary(TamperPlan(Strategy.SKEW_BEAVER_TRIPLE, (1,), delta=5), tiny_weave(secret_theta=True), N)
    assert isinstance(out, Aborted)


def test_curious_parties_complete_and_observe():
    out = run_with_adversary(TamperPlan(Strategy.HONEST_BUT_CURIOUS, (1, 2)), tiny_weave(), N)
    assert isinstance(out, Completed)
    assert out.observations and {o.party for o in out.observations} == {1, 2}


def test_zero_delta_goes_undetected():
    """A tamper that changes nothing fires but cannot be caught."""
    out = run_with_adversary(TamperPlan(Strategy.ADD_DELTA_TO_VALUE_SHARE, (1,), delta=0), tiny_weave(), 2)
    assert isinstance(out, UndetectedDeviation) and out.injections


def test_trigger_round_beyond_run_never_fires():
    out = run_with_adversary(
        TamperPlan(Strategy.ADD_DELTA_TO_VALUE_SHARE, (1,), delta=1, trigger_round=10_000), tiny_weave(), 2
    )
    assert isinstance(out, Completed)


def test_plan_validation():
    with pytest.raises(ValueError):
        TamperPlan(Strategy.CORRUPT_MAC_SHARE, ())
    with pytest.raises(ValueError):
        TamperPlan("NoSuchStrategy")
    with pytest.raises(ValueError):
        TamperPlan(Strategy.CORRUPT_MAC_SHARE, (1, 2)).validate(2)
    with pytest.raises(ValueError):
        TamperPlan(Strategy.CORRUPT_MAC_SHARE, (4,)).validate(3)
    TamperPlan(Strategy.CORRUPT_MAC_SHARE, (1, 2)).validate(3)
    assert TamperPlan("CorruptMacShare", [2, 1, 2]).to_dict()["targets"] == [1, 2]


def test_detection_rate_small_sweep():
    assert detection_rate(TamperPlan(Strategy.ADD_DELTA_TO_VALUE_SHARE, (1,), 1), 50) == 1.0
    with pytest.raises(ValueError):
        detection_rate(TamperPlan(Strategy.ADD_DELTA_TO_VALUE_SHARE), 0)


def test_half_ring_offset_is_caught_about_half_the_time():
    rate = detection_rate(TamperPlan(Strategy.ADD_DELTA_TO_VALUE_SHARE, (1,), 2**63), 400, seed=2)
    assert 0.4 <= rate <= 0.6


def test_privacy_audit_small():
    audits = privacy_audit(n=3, samples=3000, seed=1)
    assert {a.statistic for a in audits} == {"input_announcement", "opening_share"}
    assert all(a.samples >= 3000 and np.isfinite(a.p_value) for a in audits)
    assert all(a.passed(0.001) for a in audits)
