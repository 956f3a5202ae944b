import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from podsim.battery import (
    AdaptivePolicy, Band, BatteryBank, CellPairTrace, DegenerateTraceError, FaultDetector, FaultKind,
    FaultSpec, PodState, adaptive_params, detect_faults, healthy_pair, icc, icc_values, inject_fault,
)

from oracles import icc_brute

DIP_GOLDEN = -1.0 / 19.0  # 10 flat 3.3 V samples, x2[7] = 2.8, evaluated by hand


def trace(x1, x2, dt=0.01):
    return CellPairTrace(dt, np.asarray(x1, float), np.asarray(x2, float))


def flat(n=100, v=3.3):
    return trace(np.full(n, v), np.full(n, v))


POLICY = AdaptivePolicy(
    0.9, 10.0,
    rpm_bands=(Band(20000, 0.92, 20), Band(60000, 0.95, 100)),
    velocity_bands=(Band(1000, 0.92, 20), Band(3000, 0.95, 100)),
    accel_bands=(Band(50, 0.92, 20), Band(150, 0.95, 100)),
)


# ---- trace validation ----

@pytest.mark.parametrize("x1,x2", [([3.3], [3.3]), ([3.3, 3.3], [3.3]), ([3.3, -0.1], [3.3, 3.3]),
                                   ([3.3, np.nan], [3.3, 3.3])])
def test_trace_validation(x1, x2):
    with pytest.raises(ValueError):
        trace(x1, x2)


# ---- icc ----

def test_icc_identical_traces():
    assert icc(trace([3.30, 3.31, 3.29], [3.30, 3.31, 3.29])) == pytest.approx(1.0, abs=1e-12)


def test_icc_antisymmetric_traces():
    assert icc(trace([1, 2, 3], [3, 2, 1])) == pytest.approx(-1.0, abs=1e-12)


def test_icc_golden_dip():
    x1 = np.full(10, 3.3)
    x2 = x1.copy()
    x2[7] = 2.8
    assert icc(trace(x1, x2)) == pytest.approx(DIP_GOLDEN, abs=1e-12)
    assert icc_brute(x1.tolist(), x2.tolist()) == pytest.approx(DIP_GOLDEN, abs=1e-12)


def test_icc_degenerate_raises():
    with pytest.raises(DegenerateTraceError):
        icc(flat(10))


# nanovolt resolution keeps squared residuals clear of float underflow
finite_v = st.floats(0.0, 5.0, allow_nan=False).map(lambda v: round(v, 9))


@st.composite
def pairs(draw):
    n = draw(st.integers(2, 60))
    x1 = draw(arrays(float, n, elements=finite_v))
    x2 = draw(arrays(float, n, elements=finite_v))
    return x1, x2


@settings(max_examples=300, deadline=None)
@given(pairs())
def test_icc_bounded_symmetric_and_matches_brute_force(pair):
    x1, x2 = pair
    try:
        value = icc_values(x1, x2)
    except DegenerateTraceError:
        assert np.all(x1 == x1[0]) and np.all(x2 == x1[0])
        return
    assert -1.0 - 1e-12 <= value <= 1.0 + 1e-12
    assert icc_values(x2, x1) == value
    assert value == pytest.approx(icc_brute(x1.tolist(), x2.tolist()), abs=1e-9)


@settings(max_examples=200, deadline=None)
@given(arrays(float, st.integers(2, 60), elements=finite_v).filter(lambda x: np.ptp(x) > 1e-6))
def test_icc_identity(x):
    assert icc_values(x, x) == pytest.approx(1.0, abs=1e-12)


def test_icc_of_flat_pair_does_not_depend_on_dip_depth():
    # all residuals scale with the dip depth, so the ratio is fixed
    vals = [icc(inject_fault(flat(100), FaultSpec(FaultKind.ABRUPT_DIP, 50, d))) for d in np.linspace(0.1, 1.0, 10)]
    np.testing.assert_allclose(vals, vals[0], atol=1e-12)


@pytest.mark.parametrize("seed", range(5))
def test_icc_strictly_decreasing_in_dip_depth(seed):
    base = healthy_pair(100, 0.01, np.random.default_rng(seed))
    vals = [icc(inject_fault(base, FaultSpec(FaultKind.ABRUPT_DIP, 50, d))) for d in np.linspace(0.1, 1.0, 10)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


# ---- fault injection ----

def test_zero_dip_leaves_trace_unchanged():
    t = flat()
    out = inject_fault(t, FaultSpec(FaultKind.ABRUPT_DIP, 50, 0.0))
    np.testing.assert_array_equal(out.x1, t.x1)
    np.testing.assert_array_equal(out.x2, t.x2)


def test_dip_hits_a_single_sample():
    out = inject_fault(flat(), FaultSpec(FaultKind.ABRUPT_DIP, 50, 0.5))
    assert out.x2[50] == pytest.approx(2.8)
    assert np.all(np.delete(out.x2, 50) == 3.3)
    assert np.all(out.x1 == 3.3)


def test_dip_on_cell_one():
    out = inject_fault(flat(), FaultSpec(FaultKind.ABRUPT_DIP, 10, 0.5), target=1)
    assert out.x1[10] == pytest.approx(2.8)
    assert np.all(out.x2 == 3.3)


def test_short_circuit_tail_strictly_decreasing():
    out = inject_fault(flat(), FaultSpec(FaultKind.SHORT_CIRCUIT, 90, 0.1))
    tail = out.x2[89:]
    assert np.all(np.diff(tail) < 0)
    assert np.all(out.x2[:90] == 3.3)
    assert out.x2[-1] == pytest.approx(3.3 - 1.0)


@pytest.mark.parametrize("fault", [FaultSpec(FaultKind.ABRUPT_DIP, 5, 4.0),
                                   FaultSpec(FaultKind.SHORT_CIRCUIT, 0, 0.5),
                                   FaultSpec(FaultKind.ABRUPT_DIP, 100, 0.1)])
def test_invalid_injections_rejected(fault):
    with pytest.raises(ValueError):
        inject_fault(flat(), fault)


@pytest.mark.parametrize("kw", [dict(at_index=-1), dict(magnitude=-0.1), dict(cell=3)])
def test_fault_spec_validation(kw):
    args = dict(kind=FaultKind.ABRUPT_DIP, at_index=1, magnitude=0.5) | kw
    with pytest.raises(ValueError):
        FaultSpec(**args)


# ---- adaptive policy ----

def test_rest_state_gives_base_params():
    assert adaptive_params(PodState(), POLICY) == (0.9, 10.0)


def test_extreme_state_clamps_to_strictest():
    assert adaptive_params(PodState(1e9, 1e9, 1e9), POLICY) == POLICY.strictest() == (0.95, 100.0)


@pytest.mark.parametrize("state,expected", [
    (PodState(rpm=30000), (0.92, 20.0)),
    (PodState(velocity=1500), (0.92, 20.0)),
    (PodState(accel=-60), (0.92, 20.0)),
    (PodState(accel=200), (0.95, 100.0)),
    (PodState(rpm=30000, velocity=4000), (0.95, 100.0)),
])
def test_mid_band_lookup(state, expected):
    assert adaptive_params(state, POLICY) == expected


@settings(max_examples=200, deadline=None)
@given(st.tuples(*[st.floats(0, 1e5)] * 3), st.tuples(*[st.floats(0, 1e5)] * 3))
def test_policy_monotone_in_severity(a, b):
    lo = PodState(*(min(x, y) for x, y in zip(a, b)))
    hi = PodState(*(max(x, y) for x, y in zip(a, b)))
    t_lo, r_lo = adaptive_params(lo, POLICY)
    t_hi, r_hi = adaptive_params(hi, POLICY)
    assert t_hi >= t_lo and r_hi >= r_lo
    assert -1 < t_hi < 1 and r_lo > 0


@pytest.mark.parametrize("kw", [
    dict(base_threshold=1.0), dict(base_rate=0.0),
    dict(rpm_bands=(Band(10, 0.85, 20),)),
    dict(rpm_bands=(Band(10, 0.95, 5),)),
    dict(rpm_bands=(Band(10, 0.92, 20), Band(5, 0.95, 30))),
])
def test_policy_validation(kw):
    with pytest.raises(ValueError):
        AdaptivePolicy(**kw)


# ---- detection ----

@pytest.mark.parametrize("seed", range(10))
def test_healthy_traces_raise_no_events(seed):
    tr = healthy_pair(3000, 0.01, np.random.default_rng(seed))
    assert detect_faults(tr, POLICY) == []


def test_dip_detected_within_one_window():
    tr = inject_fault(healthy_pair(1000, 0.01, np.random.default_rng(1)), FaultSpec(FaultKind.ABRUPT_DIP, 500, 0.5))
    events = detect_faults(tr, POLICY, window=100, pair_id="p")
    assert len(events) == 1
    e = events[0]
    assert 500 <= e.sample_index < 600
    assert e.icc_value < e.threshold_used
    assert e.cell_pair == "p"
    assert e.t == pytest.approx(e.sample_index * 0.01)


@pytest.mark.parametrize("at", [237, 500, 861])
def test_faster_sampling_never_slower(at):
    tr = inject_fault(healthy_pair(1200, 0.01, np.random.default_rng(at)), FaultSpec(FaultKind.ABRUPT_DIP, at, 0.5))
    slow = detect_faults(tr, AdaptivePolicy(0.9, 10.0))
    fast = detect_faults(tr, AdaptivePolicy(0.9, 20.0))
    assert slow and fast
    assert fast[0].t - at * 0.01 <= slow[0].t - at * 0.01


@pytest.mark.parametrize("sigma", [0.0, 0.002, 0.005, 0.01])
@pytest.mark.parametrize("depth", [0.3, 0.5, 1.0])
def test_no_missed_dips_on_flat_traces(sigma, depth):
    for seed in range(5):
        base = healthy_pair(600, 0.01, np.random.default_rng(seed), load_ripple=0.0, common_std=sigma, diff_std=0.0)
        events = detect_faults(inject_fault(base, FaultSpec(FaultKind.ABRUPT_DIP, 350, depth)), POLICY)
        assert any(350 <= e.sample_index < 450 for e in events)
        assert all(e.sample_index >= 350 for e in events)


def test_one_event_per_fault_episode():
    tr = healthy_pair(2000, 0.01, np.random.default_rng(3))
    for at in (400, 1300):
        tr = inject_fault(tr, FaultSpec(FaultKind.ABRUPT_DIP, at, 0.5))
    events = detect_faults(tr, POLICY)
    assert [e.sample_index // 100 for e in events] == [4, 13]


def test_degenerate_windows_are_skipped():
    det = FaultDetector(POLICY, 0.01, window=10)
    for _ in range(50):
        assert det.feed(3.3, 3.3) is None
    assert det.degenerate_windows > 0
    events = [det.feed(3.3, 2.8)] + [det.feed(3.3, 3.3) for _ in range(20)]
    assert any(e is not None for e in events)


def test_pod_state_tightens_threshold():
    # coefficient around 0.94: passes the rest threshold, fails the high-speed band
    tr = healthy_pair(400, 0.01, np.random.default_rng(0), load_ripple=0.0, common_std=0.002, diff_std=0.0005)
    assert 0.9 < icc(tr) < 0.95
    rest = detect_faults(tr, POLICY, pod_states=[PodState()] * 400)
    fast = detect_faults(tr, POLICY, pod_states=[PodState(velocity=5000)] * 400)
    assert rest == []
    assert fast
    assert all(e.threshold_used == 0.95 and e.icc_value < 0.95 for e in fast)


def test_detector_stride_follows_rate():
    det = FaultDetector(POLICY, 0.01, window=100)
    assert det.stride(10.0) == 10
    assert det.stride(20.0) == 5
    assert det.stride(1000.0) == 1
    with pytest.raises(ValueError):
        FaultDetector(POLICY, 0.01, window=1)


def test_battery_bank_serves_chunks():
    bank = BatteryBank.build(250, 0.01, np.random.default_rng(0), [FaultSpec(FaultKind.ABRUPT_DIP, 120, 0.5)])
    x1, x2 = bank.take(100)
    assert x1.size == 100 and bank.cursor == 100
    _, x2b = bank.take(100)
    assert x2b[20] < x2b[19] - 0.4
    x1c, _ = bank.take(100)
    assert x1c.size == 50 and bank.cursor == 250
