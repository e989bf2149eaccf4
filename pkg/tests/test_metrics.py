import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hasim.adaptation import DEFAULT_LADDER
from hasim.client_engine import StepRecord
from hasim.fluid_link import BandwidthSchedule
from hasim.metrics import (
    MetricUndefined,
    bitrate_series,
    buffer_series,
    buffer_undershoot,
    cliff_point,
    compute_report,
    inefficiency,
    instability,
    jain_index,
    percentile_nearest_rank,
    unfairness,
)

from conftest import MBPS

levels = st.sampled_from(DEFAULT_LADDER.rates)


def direct_instability(s, t, k):
    num = sum(abs(s[t - d] - s[t - d - 1]) * (k - d) for d in range(k))
    den = sum(s[t - d] * (k - d) for d in range(k))
    return num / den


def test_constant_series_has_zero_instability():
    assert instability([2.536 * MBPS] * 40, 30) == 0.0


def test_single_shift_matches_hand_sums():
    t, k = 30, 20
    s = [1.745 * MBPS] * t + [2.536 * MBPS]
    num = 0.791 * MBPS * 20
    den = 2.536 * MBPS * 20 + 1.745 * MBPS * sum(k - d for d in range(1, k))
    assert instability(s, t, k) == pytest.approx(num / den, rel=1e-12)
    assert instability(s, t, k) == pytest.approx(direct_instability(s, t, k), rel=1e-12)


def test_alternating_beats_single_shift():
    t, k = 30, 20
    single = [1.745 * MBPS] * t + [2.536 * MBPS]
    alt = [(1.745 if i % 2 else 2.536) * MBPS for i in range(t + 1)]
    assert instability(alt, t, k) > instability(single, t, k)


def test_instability_needs_full_history():
    with pytest.raises(MetricUndefined):
        instability([1.0] * 40, 19)
    with pytest.raises(MetricUndefined):
        instability([None] + [1.0] * 40, 20)


@settings(max_examples=200)
@given(s=st.lists(levels, min_size=21, max_size=40), scale=st.floats(0.1, 10.0))
def test_instability_oracle_and_scale_invariance(s, scale):
    t = len(s) - 1
    got = instability(s, t)
    assert got == pytest.approx(direct_instability(s, t, 20), rel=1e-12)
    assert instability([v * scale for v in s], t) == pytest.approx(got, rel=1e-9, abs=1e-15)


@pytest.mark.parametrize("load, expected", [(1.0, 0.0), (1.2, 0.0), (0.8, 0.2)])
def test_inefficiency(load, expected):
    c = 10 * MBPS
    rates = [load * c / 4] * 4
    assert inefficiency(rates, c) == pytest.approx(expected, abs=1e-12)


def test_unfairness_examples():
    assert unfairness([3 * MBPS] * 5) == 0.0
    two = unfairness([5.3 * MBPS, 3.7 * MBPS])
    assert two == pytest.approx((1 - 81 / 83.56) ** 0.5, rel=1e-9)
    assert two == pytest.approx(0.175, abs=1e-3)
    assert unfairness([3.7 * MBPS, 3.7 * MBPS, 2.5 * MBPS]) < two


def test_unfairness_undefined_cases():
    with pytest.raises(MetricUndefined):
        unfairness([1.0])
    with pytest.raises(MetricUndefined):
        unfairness([1.0, 0.0])


@settings(max_examples=200)
@given(rs=st.lists(levels, min_size=2, max_size=12), scale=st.floats(0.1, 10.0))
def test_fairness_bounds_and_scale_invariance(rs, scale):
    j = jain_index(rs)
    assert 1 / len(rs) - 1e-12 <= j <= 1 + 1e-12
    u = unfairness(rs)
    assert 0.0 <= u < 1.0
    assert unfairness([r * scale for r in rs]) == pytest.approx(u, abs=1e-7)


def test_undershoot_examples():
    assert buffer_undershoot([30.0] * 101, (0, 100)) == 0.0
    assert buffer_undershoot([15.0] * 101, (0, 100)) == 0.5
    ramp = [30.0 * (1 - i / 100) for i in range(101)]
    samples = sorted(1 - b / 30.0 for b in ramp)
    assert buffer_undershoot(ramp, (0, 100)) == pytest.approx(samples[90])
    assert buffer_undershoot(ramp, (0, 100)) == pytest.approx(0.9)
    with pytest.raises(MetricUndefined):
        buffer_undershoot(ramp, (50, 40))


def test_nearest_rank_percentile():
    assert percentile_nearest_rank([5, 1, 3, 2, 4], 90) == 5
    assert percentile_nearest_rank([5, 1, 3, 2, 4], 40) == 2
    assert percentile_nearest_rank([7], 0) == 7


def rec(t, r, t_actual, buffer):
    return StepRecord(0, 0, t, r, t_actual, 0.0, t_actual, r, r, r, buffer, r)


def test_series_sample_and_hold():
    recs = [rec(0.5, 1.0, 1.5, 3.0), rec(2.0, 2.0, 2.0, 4.0), rec(4.0, 3.0, 2.0, 5.0)]
    assert bitrate_series(recs, 5) == [None, 1.0, 2.0, 2.0, 3.0, 3.0]
    assert buffer_series(recs, 5) == [0.0, 0.0, 3.0, 3.0, 4.0, 4.0]


def test_report_over_constant_traces():
    r = 2.5 * MBPS
    recs = {
        cid: [rec(2.0 * n + 0.1 * cid, r, 2.0, 30.0) for n in range(60)] for cid in range(4)
    }
    rep = compute_report(recs, BandwidthSchedule.constant(10 * MBPS), 100, window=(1, 100),
                         undershoot_window=(50, 100))
    assert rep.mean_instability == 0.0
    assert rep.mean_inefficiency == 0.0
    assert rep.mean_unfairness == 0.0
    assert rep.mean_undershoot == 0.0
    assert set(rep.summary()) >= {"mean_instability", "mean_inefficiency", "mean_unfairness"}


def test_cliff_ratio_approaches_client_count_when_flows_never_overlap():
    k = 5
    assert cliff_point(0.01, k, 10 * MBPS, 2.0, duration=100, warmup=20) == pytest.approx(k, rel=0.05)


def test_cliff_oversubscribed_gives_fair_share():
    assert cliff_point(1.2, 10, 10 * MBPS, 2.0, duration=200, warmup=100) == pytest.approx(1.0, rel=1e-6)
