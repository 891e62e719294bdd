import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fjcalc.curves import conforms, token_bucket
from fjcalc.errors import DomainError
from fjcalc.forkjoin import CUSTOM, ForkJoinSystem, SplitPolicy, lindley
from fjcalc.process import LINEAR, CumulativeProcess
from fjcalc.stochastic import (
    HOLD_LAST, TailBound, backlog, check_gsbb_dominates, effective_trials, empirical_gsbb,
    measured_envelope, stationary_times, verify_claim2, wilson_interval, workload, z_value,
)
from fjcalc.workload import GeneratorSpec, generate
from oracles import direct_workload


def periodic_bursts(size=10.0, period=10.0, n=1000):
    times = period * np.arange(n)
    return CumulativeProcess(times, size * np.arange(1, n + 1))


def direct_workload_at(A, M, ts):
    """W(t) by maximising over every event v <= t, sample by sample."""
    out = np.empty(len(ts))
    At = A(ts)
    for j, t in enumerate(ts):
        m = A.times <= t
        cand = At[j] - A.left_values[m] - M * (t - A.times[m])
        out[j] = max(0.0, cand.max()) if m.any() else 0.0
    return out


# -- TailBound --------------------------------------------------------------------------------

def test_tail_bound_envelope_and_evaluation():
    tb = TailBound.enveloped([0.0, 1.0, 2.0, 3.0], [0.9, 0.5, 0.6, 0.1])
    assert tb.phi == (0.9, 0.6, 0.6, 0.1)
    assert tb(0.5) == 0.9
    assert tb(2.0) == 0.6
    assert tb(3.0) == 0.1
    assert tb(3.5) == 0.0
    held = TailBound(tb.xs, tb.phi, HOLD_LAST)
    assert held(100.0) == 0.1
    assert TailBound((1.0,), (0.3,))(0.5) == 1.0


def test_tail_bound_validation():
    with pytest.raises(ValueError):
        TailBound((0.0, 1.0), (0.5, 0.6))
    with pytest.raises(ValueError):
        TailBound((1.0, 0.5), (0.5, 0.4))
    with pytest.raises(ValueError):
        TailBound((0.0,), (1.5,))
    with pytest.raises(ValueError):
        TailBound((0.0,), (0.5,), "linear")


def test_tail_bound_csv_round_trip():
    tb = TailBound.enveloped([0.5, 1.0, 4.0], [0.3, 0.2, 0.05])
    text = tb.to_csv(header=["seed=1"])
    assert text.splitlines()[:2] == ["# seed=1", "x,phi"]
    assert TailBound.from_csv(text) == tb


# -- workload and gsbb ------------------------------------------------------------------------

def test_underloaded_fluid_has_no_tail():
    A = CumulativeProcess.fluid_rate(1.5, 1000.0)
    tb = empirical_gsbb(A, 2.0, [1e-6, 0.5, 1.0])
    assert tb.phi == (0.0, 0.0, 0.0)


def test_periodic_sawtooth_occupancy():
    # W(s) = 10 - 2 s on the first 5 s of each 10 s period, then 0
    A = periodic_bursts()
    ts = stationary_times(A.horizon, 0.1, 10_000)
    W = workload(A, 2.0, ts)
    np.testing.assert_allclose(W, direct_workload_at(A, 2.0, ts), atol=1e-9)
    tb = empirical_gsbb(A, 2.0, [1e-9, 5.0, 8.0])
    np.testing.assert_allclose(tb.phi, [0.5, 0.25, 0.1], atol=2e-3)


def test_single_jump_gives_step_tail():
    A = CumulativeProcess([0.0], [10.0])
    W = lindley(A, 2.0)
    np.testing.assert_array_equal(W.after, direct_workload(A.times, A.left_values, A.values, 2.0))
    ts = np.linspace(0.0, 10.0, 101)[1:]
    np.testing.assert_allclose(workload(A, 2.0, ts), np.maximum(0.0, 10 - 2 * ts), atol=1e-12)
    tb = empirical_gsbb(A, 2.0, [2.0, 6.0, 10.0, 10.5], warmup=0.0, sampling="events")
    assert tb.phi == (1.0, 1.0, 1.0, 0.0)


@pytest.mark.parametrize("seed", range(4))
def test_lindley_matches_direct_definition_exactly_on_integer_traces(seed):
    rng = np.random.default_rng(seed)
    n = 1000
    A = CumulativeProcess(np.cumsum(rng.integers(1, 5, n)).astype(float),
                          np.cumsum(rng.integers(0, 9, n)).astype(float))
    W = lindley(A, 2.0)
    np.testing.assert_array_equal(W.after, direct_workload(A.times, A.left_values, A.values, 2.0))


@pytest.mark.parametrize("kind", ["poisson-batch", "onoff"])
def test_lindley_matches_direct_definition_on_float_traces(kind):
    A = generate(GeneratorSpec(kind, rate=0.8, horizon=600.0, seed=3))
    A = CumulativeProcess(A.times[:1000], A.values[:1000], A.mode)
    W = lindley(A, 1.0)
    np.testing.assert_allclose(W.after, direct_workload(A.times, A.left_values, A.values, 1.0), atol=1e-9)


def test_divergent_workload_warns():
    A = CumulativeProcess.fluid_rate(3.0, 100.0)
    with pytest.warns(RuntimeWarning, match="non-stationary: workload divergent"):
        tb = empirical_gsbb(A, 2.0, [1.0, 10.0])
    assert tb.phi[0] == 1.0


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.6, 2.0), st.floats(0.0, 1.0))
def test_smaller_rate_dominates(seed, M, extra):
    A = generate(GeneratorSpec("poisson-batch", rate=0.5, horizon=400.0, seed=seed))
    xs = np.linspace(0.0, 10.0, 21)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        slow = empirical_gsbb(A, M, xs, samples=2000)
        fast = empirical_gsbb(A, M + extra, xs, samples=2000)
    assert np.all(np.asarray(slow.phi) >= np.asarray(fast.phi))
    assert np.all(np.diff(slow.phi) <= 0)


def test_dominance_checks():
    A = generate(GeneratorSpec("poisson-batch", rate=0.7, horizon=2000.0, seed=5))
    xs = np.linspace(0.0, 8.0, 17)
    own = empirical_gsbb(A, 1.0, xs)
    assert check_gsbb_dominates(A, 1.0, own)
    assert check_gsbb_dominates(A, 1.0, TailBound.constant(1.0), xs)
    assert not check_gsbb_dominates(A, 1.0, TailBound.constant(0.0), xs)


# -- measured envelope ------------------------------------------------------------------------

def test_envelope_of_constant_rate():
    A = CumulativeProcess.fluid_rate(2.0, 50.0)
    assert [p.sigma for p in measured_envelope(A, [2.0, 3.0, 10.0])] == [0.0, 0.0, 0.0]


def test_envelope_of_single_jump():
    A = CumulativeProcess([0.0], [10.0])
    assert [p.sigma for p in measured_envelope(A, [0.1, 1.0, 100.0])] == [10.0] * 3


def test_envelope_onoff_against_double_loop():
    A = generate(GeneratorSpec("onoff", rate=2.0, on=1.0, off=1.0, horizon=1200.0, seed=2))
    A = CumulativeProcess(A.times[:1000], A.values[:1000], LINEAR)
    rhos = np.linspace(0.2, 2.5, 24)
    pts = measured_envelope(A, rhos)
    sig = np.array([p.sigma for p in pts])
    oracle = [direct_workload(A.times, A.left_values, A.values, r).max() for r in rhos]
    np.testing.assert_allclose(sig, oracle, atol=1e-9)
    assert np.all(np.diff(sig) <= 1e-9)
    assert np.all(np.diff(np.diff(sig)) >= -1e-9)
    for p in pts[::6]:
        assert conforms(A, token_bucket(p.sigma, p.rho)).ok
        if p.sigma > 1e-3:
            assert not conforms(A, token_bucket(p.sigma - 1e-3, p.rho)).ok


def test_envelope_rejects_bad_rates():
    with pytest.raises(DomainError):
        measured_envelope(CumulativeProcess([0.0], [1.0]), [0.0])


# -- confidence intervals ----------------------------------------------------------------------

def test_wilson_reference_values():
    # 50 successes in 100 trials at z = 1.96 (textbook value)
    lo, hi = wilson_interval(0.5, 100, 1.96)
    assert lo == pytest.approx(0.4038, abs=1e-4)
    assert hi == pytest.approx(0.5962, abs=1e-4)
    lo, hi = wilson_interval(0.0, 10, 1.96)
    assert lo == 0.0 and hi == pytest.approx(0.2775, abs=1e-4)
    assert z_value(0.95) == pytest.approx(1.959964, abs=1e-6)
    assert z_value(0.95, 10) == pytest.approx(2.807034, abs=1e-6)


def test_effective_trials():
    same = np.full((10, 3), 0.2)
    np.testing.assert_array_equal(effective_trials(same, 500), 5000)
    spread = np.array([[0.1], [0.3]] * 5)
    n = effective_trials(spread, 1000)
    assert 10 <= n[0] < 10_000
    assert n[0] == pytest.approx(0.2 * 0.8 / (np.var(spread, ddof=1) / 10))


# -- the stochastic bound ---------------------------------------------------------------------

def poisson(load, M, seed=0, horizon=2000.0):
    return GeneratorSpec("poisson-batch", rate=1.0, batch_mean=1.0, horizon=horizon, seed=seed).with_mean_rate(load * M)


def test_fluid_split_two_queues():
    sysm = ForkJoinSystem((1.0, 1.0))
    rep = verify_claim2(sysm, poisson(0.7, 2.0), [0.5, 1.0, 2.0, 4.0, 8.0], replicas=20, samples=10_000)
    assert rep.shift == 0.0
    assert rep.ok


def test_quantized_split_two_queues():
    sysm = ForkJoinSystem((1.0, 1.0), split=SplitPolicy("quantized", 1.0))
    assert sysm.shift == 2 * 2.0 * 1.0 / 1.0
    rep = verify_claim2(sysm, poisson(0.7, 2.0), 4.0 + np.array([0.25, 1.0, 3.0, 6.0]), replicas=20)
    assert rep.ok


def test_single_queue_is_tight():
    sysm = ForkJoinSystem((1.0,))
    src = GeneratorSpec("onoff", rate=2.0, on=1.0, off=1.0, horizon=4000.0).with_mean_rate(0.8)
    rep = verify_claim2(sysm, src, [0.25, 0.5, 1.0, 2.0, 4.0], replicas=20)
    assert rep.ok
    assert np.all(np.abs(rep.empirical - rep.bound) <= rep.margin)


@pytest.mark.parametrize("kind", ["fluid", "quantized"])
def test_backlog_is_pathwise_below_shifted_workload(kind):
    for seed in range(10):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(1, 6))
        sysm = ForkJoinSystem(tuple(rng.uniform(0.3, 2.0, K)), split=SplitPolicy(kind, float(rng.uniform(0.2, 2.0))))
        A = generate(poisson(0.9, sysm.M, seed, horizon=300.0))
        ts = np.sort(np.r_[np.linspace(0.0, 300.0, 3000), A.times])
        assert np.all(backlog(sysm, A, ts) <= workload(A, sysm.M, ts) + sysm.shift + 1e-9)


def test_single_queue_backlog_is_the_workload():
    sysm = ForkJoinSystem((0.9,))
    A = generate(GeneratorSpec("onoff", rate=1.6, horizon=500.0, seed=4))
    ts = np.sort(np.r_[np.linspace(0.0, 500.0, 5000), A.times])
    np.testing.assert_allclose(backlog(sysm, A, ts), workload(A, 0.9, ts), atol=1e-9)


def test_claim2_preconditions():
    sysm = ForkJoinSystem((1.0, 1.0), split=SplitPolicy("quantized", 1.0))
    with pytest.raises(DomainError, match="shift"):
        verify_claim2(sysm, poisson(0.5, 2.0), [4.0, 5.0], replicas=2, samples=100)
    custom = ForkJoinSystem((1.0, 1.0), split=SplitPolicy(CUSTOM, weights=(0.3, 0.7)))
    with pytest.raises(ValueError, match="proportional"):
        verify_claim2(custom, poisson(0.5, 2.0), [1.0], replicas=2, samples=100)


def test_claim2_is_reproducible_and_parallel_safe():
    sysm = ForkJoinSystem((1.0, 0.5), split=SplitPolicy("quantized", 0.5))
    src = poisson(0.6, 1.5, horizon=500.0)
    xs = sysm.shift + np.array([0.5, 2.0])
    a = verify_claim2(sysm, src, xs, replicas=4, seed=7, samples=2000)
    b = verify_claim2(sysm, src, xs, replicas=4, seed=7, samples=2000, jobs=2)
    c = verify_claim2(sysm, src, xs, replicas=4, seed=8, samples=2000)
    assert a.to_csv() == b.to_csv()
    assert a.to_csv() != c.to_csv()
    lines = a.to_csv(header=["run"]).splitlines()
    assert lines[2] == "x,empirical,bound,margin,pass"
    assert len(lines) == 3 + len(xs)


def test_claim2_stretches_short_horizons():
    sysm = ForkJoinSystem((1.0,))
    src = poisson(0.95, 1.0, horizon=10.0)
    rep = verify_claim2(sysm, src, [1.0], replicas=2, samples=500)
    assert rep.replicas == 2
