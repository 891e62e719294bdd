"""The nine acceptance criteria, each at its stated tolerance and time budget.

Every test records a one-line PASS/FAIL verdict that is echoed in the terminal
summary (see ``conftest.py``).
"""
import time

import numpy as np
import pytest

from acceptance_log import criterion
from oracles import direct_workload, grid_convolution, grid_horizontal_deviation, random_curve
from fjcalc.cli import main
from fjcalc.curves import (
    convolve, curves_close, evaluate, from_process, horizontal_deviation, identity, rate_curve,
    rate_latency, tightest_burst, token_bucket,
)
from fjcalc.forkjoin import (
    ForkJoinSystem, SplitPolicy, lindley, simulate_queue, split, split_deviation, verify_claim1,
)
from fjcalc.process import LINEAR, STEP, CumulativeProcess
from fjcalc.stochastic import backlog, verify_claim2, workload
from fjcalc.workload import GeneratorSpec, generate


def elapsed(t0):
    return time.perf_counter() - t0


# 1 ---------------------------------------------------------------------------------------

def test_minplus_algebra():
    with criterion(1, "min-plus algebra and grid oracle") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(2024)
        h = 0.01
        ts = np.round(np.arange(1000) * h, 12)
        worst_grid = 0.0
        n = 110
        for _ in range(n):
            f, g, k = random_curve(rng), random_curve(rng), random_curve(rng)
            fg = convolve(f, g)
            assert curves_close(convolve(f, identity()), f)
            assert curves_close(fg, convolve(g, f), tol=1e-7)
            assert curves_close(convolve(fg, k), convolve(f, convolve(g, k)), tol=1e-7)
            ref = grid_convolution(f, g, ts, h)
            got = evaluate(fg, ts)
            finite = np.isfinite(ref)
            assert np.array_equal(finite, np.isfinite(got))
            err = float(np.max(np.abs(got[finite] - ref[finite]), initial=0.0))
            worst_grid = max(worst_grid, err)
        info.update(pairs=n, max_grid_error="%.1e" % worst_grid)
        assert worst_grid <= 1e-6
        assert elapsed(t0) < 10.0


# 2 ---------------------------------------------------------------------------------------

def test_horizontal_deviation_closed_form():
    with criterion(2, "horizontal deviation closed form T + sigma/R") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(7)
        worst_exact = worst_grid = 0.0
        for _ in range(50):
            R = rng.uniform(0.5, 5.0)
            rho = rng.uniform(0.0, R)
            sigma = rng.uniform(0.0, 20.0)
            T = rng.uniform(0.0, 10.0)
            b, s = token_bucket(sigma, rho), rate_latency(R, T)
            d = horizontal_deviation(b, s)
            worst_exact = max(worst_exact, abs(d - (T + sigma / R)))
            worst_grid = max(worst_grid, abs(d - grid_horizontal_deviation(b, s, h=1e-3, x_max=100.0, z_max=50.0)))
        info.update(cases=50, max_closed_form_error="%.1e" % worst_exact, max_grid_error="%.1e" % worst_grid)
        assert worst_exact <= 1e-9
        assert worst_grid <= 1e-3 + 1e-12
        assert elapsed(t0) < 5.0


# 3 ---------------------------------------------------------------------------------------

def _random_scenario(rng, K):
    mu = rng.uniform(0.5, 2.0, K)
    M = mu.sum()
    quantized = rng.random() < 0.5
    policy = SplitPolicy("quantized", float(rng.uniform(0.2, 2.0))) if quantized else SplitPolicy("fluid")
    kind = "poisson-batch" if rng.random() < 0.5 else "onoff"
    src = GeneratorSpec(kind, horizon=float(rng.uniform(40, 120)), seed=int(rng.integers(2**31)))
    A = generate(src.with_mean_rate(rng.uniform(0.3, 0.95) * M))
    if len(A) == 0:
        A = CumulativeProcess([0.0], [1.0])
    rho = min(M, A.total / max(A.horizon, 1e-9) * rng.uniform(1.0, 1.3))
    sigma = tightest_burst(A, rho)
    sysm = ForkJoinSystem(tuple(mu), split=policy)
    parts = split(A, sysm)
    dev = split_deviation(A, parts, sysm.weights)
    # w_k rho <= mu_k holds exactly; the clamp only removes rounding in w_k = mu_k / M
    envelopes = tuple(token_bucket(w * sigma + e, min(w * rho, m)) for w, e, m in zip(sysm.weights, dev, mu))
    servers = tuple(rate_latency(m, T) for m, T in zip(mu, rng.uniform(0.0, 3.0, K)))
    return sysm.replace(envelopes=envelopes, service_curves=servers), A


def test_claim1_inequality():
    with criterion(3, "deterministic bound D(t) >= A(t - d) on random scenarios") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(11)
        worst = np.inf
        count = 0
        for K in (1, 2, 4, 8, 16):
            for _ in range(40):
                sysm, A = _random_scenario(rng, K)
                rep = verify_claim1(sysm, A, grid=0.05)
                assert rep.hypothesis_ok, rep.violations
                worst = min(worst, rep.min_slack)
                count += 1
        info.update(scenarios=count, min_slack="%.3g" % worst)
        assert worst >= -1e-9
        assert elapsed(t0) < 60.0


# 4 ---------------------------------------------------------------------------------------

def test_claim1_tightness():
    with criterion(4, "tightness witness, greedy source vs rate-latency servers") as info:
        sigma, rho = 8.0, 1.0
        A = CumulativeProcess.fluid_rate(rho, 40.0, burst=sigma)
        slacks = {}
        for K in (1, 2, 4, 8):
            sysm = ForkJoinSystem((2.0,) * K, service_curves=(rate_latency(2.0, 3.0),) * K,
                                  envelopes=(token_bucket(sigma / K, rho / K),) * K)
            rep = verify_claim1(sysm, A, grid=1e-3)
            assert rep.hypothesis_ok
            assert rep.delay_bound == pytest.approx(3.0 + sigma / K / 2.0)
            slacks[K] = rep.min_slack
        info.update(("min_slack[K=%d]" % K, "%.3g" % v) for K, v in slacks.items())
        assert all(-1e-9 <= v <= 1e-2 for v in slacks.values())


# 5 ---------------------------------------------------------------------------------------

def test_lindley_minplus_equivalence():
    with criterion(5, "Lindley recursion equals min-plus convolution and the direct max") as info:
        worst_conv = worst_float = 0.0
        exact = 0
        for seed in range(6):
            rng = np.random.default_rng(seed)
            mode = STEP if seed % 2 == 0 else LINEAR
            a = CumulativeProcess(np.cumsum(rng.exponential(1.0, 1000)), np.cumsum(rng.exponential(1.0, 1000)), mode)
            mu = rng.uniform(0.7, 1.3)
            d = simulate_queue(a, mu)
            ts = np.union1d(a.times, d.times)
            conv = evaluate(convolve(from_process(a), rate_curve(mu)), ts)
            worst_conv = max(worst_conv, float(np.max(np.abs(d(ts) - conv))))
            W = lindley(a, mu)
            worst_float = max(worst_float, float(np.max(np.abs(W.after - direct_workload(a.times, a.left_values, a.values, mu)))))
            # integer-valued discrete trace: every intermediate is exactly representable
            b = CumulativeProcess(np.cumsum(rng.integers(1, 5, 1000)).astype(float),
                                  np.cumsum(rng.integers(0, 9, 1000)).astype(float), STEP)
            Wb = lindley(b, 2.0)
            assert np.array_equal(Wb.after, direct_workload(b.times, b.left_values, b.values, 2.0))
            exact += 1
        info.update(traces=6, max_conv_error="%.1e" % worst_conv, float_direct_error="%.1e" % worst_float,
                    exact_integer_matches=exact)
        assert worst_conv <= 1e-9
        assert worst_float <= 1e-9


# 6 ---------------------------------------------------------------------------------------

def test_single_queue_reduction():
    with criterion(6, "K=1 reduction: backlog equals the rate-M workload") as info:
        sysm = ForkJoinSystem((1.0,))
        src = GeneratorSpec("onoff", rate=2.0, on=1.0, off=1.0, horizon=4000.0).with_mean_rate(0.8)
        worst = 0.0
        for seed in range(5):
            A = generate(src.with_seed(seed))
            ts = np.sort(np.r_[np.linspace(0.0, A.horizon, 20_000), A.times])
            worst = max(worst, float(np.max(np.abs(backlog(sysm, A, ts) - workload(A, 1.0, ts)))))
        xs = [0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
        rep = verify_claim2(sysm, src, xs, replicas=20, seed=1)
        gap = np.abs(rep.empirical - rep.bound)
        info.update(pathwise_error="%.1e" % worst, max_tail_gap="%.4f" % gap.max(),
                    min_margin="%.4f" % rep.margin.min())
        assert worst <= 1e-9
        assert rep.shift == 0.0
        assert np.all(gap <= rep.margin)


# 7 ---------------------------------------------------------------------------------------

CLAIM2_MU = {2: (0.5, 1.5), 4: (0.5, 0.75, 1.0, 1.75)}
CLAIM2_OFFSETS = np.array([0.25, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0])


def test_claim2_inequality():
    with criterion(7, "stochastic bound P(A-D >= x) <= Phi(x - shift) + margin") as info:
        t0 = time.perf_counter()
        configs = failures = 0
        closest = -np.inf
        for kind in ("poisson-batch", "onoff"):
            for load in (0.5, 0.7, 0.9):
                for K in (2, 4):
                    for policy in (SplitPolicy("fluid"), SplitPolicy("quantized", 1.0)):
                        sysm = ForkJoinSystem(CLAIM2_MU[K], split=policy)
                        src = GeneratorSpec(kind, horizon=5000.0).with_mean_rate(load * sysm.M)
                        xs = sysm.shift + CLAIM2_OFFSETS
                        rep = verify_claim2(sysm, src, xs, replicas=20, samples=10_000, seed=configs)
                        failures += int(not rep.ok)
                        used = rep.margin > 0
                        if used.any():
                            closest = max(closest, float(np.max((rep.empirical - rep.bound)[used] / rep.margin[used])))
                        configs += 1
        # closest: largest (empirical - bound) / margin; a row fails above 1
        info.update(configs=configs, failing=failures, closest="%.3f" % closest)
        assert failures == 0
        assert elapsed(t0) < 300.0


# 8 ---------------------------------------------------------------------------------------

def test_quantized_splitter_guarantee():
    with criterion(8, "quantized splitter deviation <= quantum on every prefix") as info:
        t0 = time.perf_counter()
        rng = np.random.default_rng(99)
        worst_ratio = 0.0
        traces = 0
        for K, mode in ((2, STEP), (3, LINEAR), (5, STEP), (8, LINEAR)):
            n = 100_000
            A = CumulativeProcess(np.cumsum(rng.exponential(1.0, n)), np.cumsum(rng.exponential(1.0, n)), mode)
            q = float(rng.uniform(0.3, 2.0))
            sysm = ForkJoinSystem(tuple(rng.uniform(0.2, 3.0, K)), split=SplitPolicy("quantized", q))
            parts = split(A, sysm)
            # deviation e_k = a_k - w_k A at every breakpoint, left and right values alike; its range
            # is the largest prefix deviation |a_k(t) - a_k(s) - w_k (A(t) - A(s))| over all s <= t
            for p, w in zip(parts, sysm.weights):
                t = p.times
                e = np.concatenate((p(t) - w * A(t), p.right(t) - w * A.right(t)))
                worst_ratio = max(worst_ratio, (e.max() - min(e.min(), 0.0)) / q)
            np.testing.assert_array_less(split_deviation(A, parts, sysm.weights), q + 1e-9)
            traces += 1
        info.update(traces=traces, events=100_000, max_deviation_over_quantum="%.6f" % worst_ratio)
        assert worst_ratio <= 1.0 + 1e-9
        assert elapsed(t0) < 10.0


# 9 ---------------------------------------------------------------------------------------

def test_reproducibility(tmp_path):
    with criterion(9, "identical seeds give byte-identical reports") as info:
        cfg = tmp_path / "sys.json"
        cfg.write_text('{"mu": [1, 0.5], "split": {"policy": "quantized", "quantum": 0.5},'
                       ' "envelopes": [{"token_bucket": [25, 0.6]}, {"token_bucket": [15, 0.3]}]}')
        src = tmp_path / "src.json"
        src.write_text('{"type": "poisson-batch", "rate": 0.8, "horizon": 1500, "seed": 1}')
        commands = {
            "bound": ["bound"],
            "simulate": ["simulate", "--source", str(src)],
            "gsbb": ["gsbb", "--source", str(src), "--rate", "1.5", "--xs", "0,1,2,4"],
            "verify-claim2": ["verify-claim2", "--source", str(src), "--xs", "0.5,1,2", "--relative",
                              "--replicas", "6", "--samples", "5000"],
            "envelope": ["envelope", "--source", str(src), "--rhos", "0.6,0.8,1.2"],
            "generate": ["generate", "--source", str(src)],
        }
        identical = 0
        for name, argv in commands.items():
            out = tmp_path / (name + ".csv")
            runs = []
            for _ in range(2):
                code = main(["--config", str(cfg), "--seed", "2024", "--jobs", "2", "--out", str(out)] + argv)
                assert code == 0, name
                runs.append(b"\n".join(ln for ln in out.read_bytes().split(b"\n") if not ln.startswith(b"# timestamp:")))
            assert runs[0] == runs[1], name
            identical += 1
        info.update(commands=identical)
