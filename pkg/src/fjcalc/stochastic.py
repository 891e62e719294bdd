"""Empirical burstiness tails and Monte Carlo checks of the stochastic backlog bound.

The central object is the rate-``M`` workload of an arrival process,

    W(t) = max_{v <= t} A(t) - A(v) - M (t - v),

whose tail ``P(W(t) >= x)`` at a stationary time ``t`` is the generalized
stochastically bounded burstiness (gSBB) function ``Phi(x)``. A fork-join
system whose splitter deviates from exact proportions by at most ``eps_k``
per queue keeps its backlog tail under ``Phi(x - 2 M max_k eps_k / mu_k)``;
:func:`verify_claim2` estimates both sides and compares them.
"""
from __future__ import annotations

import io
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from statistics import NormalDist
from typing import NamedTuple

import numpy as np

from .curves import tightest_burst
from .errors import DomainError
from .forkjoin import FLUID, QUANTIZED, WORK, ForkJoinSystem, join_departures, lindley, simulate_queue, split
from .process import CumulativeProcess
from .workload import GeneratorSpec, generate

ZERO_BEYOND = "zero-beyond-max-x"
HOLD_LAST = "hold-last"

DEFAULT_WARMUP = 0.1
DEFAULT_SAMPLES = 10_000
CONFIDENCE = 0.95

DIVERGENT = "non-stationary: workload divergent"


@dataclass(frozen=True)
class TailBound:
    """A non-increasing tail function ``Phi`` tabulated at increasing ``xs``.

    Between grid points ``Phi`` is read as a right-continuous step,
    ``Phi(x) = phi[i]`` for ``xs[i] <= x < xs[i+1]``, which is the conservative
    reading of an upper bound on ``P(W >= x)``. Left of the first grid point the
    value is 1. Right of the last grid point it is 0 (``zero-beyond-max-x``) or
    the last tabulated value (``hold-last``).
    """

    xs: tuple
    phi: tuple
    extrapolation: str = ZERO_BEYOND

    def __post_init__(self):
        xs = np.asarray(self.xs, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if xs.ndim != 1 or xs.shape != phi.shape or xs.size == 0:
            raise ValueError("xs and phi must be non-empty 1-d sequences of equal length")
        if xs[0] < 0 or np.any(np.diff(xs) <= 0):
            raise ValueError("xs must be non-negative and strictly increasing")
        if np.any((phi < 0) | (phi > 1)):
            raise ValueError("phi values must lie in [0, 1]")
        if np.any(np.diff(phi) > 0):
            raise ValueError("phi must be non-increasing; build it with TailBound.enveloped")
        if self.extrapolation not in (ZERO_BEYOND, HOLD_LAST):
            raise ValueError("unknown extrapolation %r" % (self.extrapolation,))
        object.__setattr__(self, "xs", tuple(xs.tolist()))
        object.__setattr__(self, "phi", tuple(phi.tolist()))

    @classmethod
    def enveloped(cls, xs, phi, extrapolation=ZERO_BEYOND) -> "TailBound":
        """Smallest non-increasing function above ``phi`` (clipped to [0, 1])."""
        xs = np.asarray(xs, dtype=float)
        order = np.argsort(xs)
        xs = xs[order]
        phi = np.clip(np.asarray(phi, dtype=float)[order], 0.0, 1.0)
        env = np.maximum.accumulate(phi[::-1])[::-1]
        return cls(tuple(xs), tuple(env), extrapolation)

    @classmethod
    def constant(cls, value, xs=(0.0,)) -> "TailBound":
        return cls(tuple(xs), (float(value),) * len(xs), HOLD_LAST)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        xs = np.asarray(self.xs)
        phi = np.asarray(self.phi)
        i = np.searchsorted(xs, x, side="right") - 1
        out = np.where(i >= 0, phi[np.clip(i, 0, None)], 1.0)
        if self.extrapolation == ZERO_BEYOND:
            out = np.where(x > xs[-1], 0.0, out)
        return out[()]

    def to_csv(self, header=()) -> str:
        buf = io.StringIO()
        for line in header:
            buf.write("# %s\n" % line)
        buf.write("x,phi\n")
        for x, p in zip(self.xs, self.phi):
            buf.write("%r,%r\n" % (x, p))
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text, extrapolation=ZERO_BEYOND) -> "TailBound":
        rows = [ln for ln in text.splitlines() if ln.strip() and not ln.startswith("#")]
        if not rows or rows[0].replace(" ", "") != "x,phi":
            raise ValueError("expected a 'x,phi' header")
        data = np.array([[float(c) for c in r.split(",")] for r in rows[1:]], dtype=float).reshape(-1, 2)
        return cls(tuple(data[:, 0]), tuple(data[:, 1]), extrapolation)


# -- sampling --------------------------------------------------------------------------------

def stationary_times(horizon, warmup=DEFAULT_WARMUP, samples=DEFAULT_SAMPLES):
    """Uniform sample times over ``(warmup * horizon, horizon]``."""
    if not 0.0 <= warmup < 1.0:
        raise ValueError("warmup must be a fraction in [0, 1)")
    if samples < 1:
        raise ValueError("need at least one sample")
    start = warmup * horizon
    step = (horizon - start) / samples
    return start + step * np.arange(1, samples + 1)


def long_run_rate(A: CumulativeProcess) -> float:
    if len(A) == 0 or A.horizon <= 0:
        return 0.0
    return A.total / A.horizon


def _warn_if_divergent(rate, M):
    if rate >= M:
        warnings.warn("%s (long-run rate %.6g >= M = %.6g)" % (DIVERGENT, rate, M), RuntimeWarning, stacklevel=3)


def workload(A: CumulativeProcess, M: float, t):
    """``W(t) = max_{v<=t} A(t) - A(v) - M (t - v)`` at times ``t`` (linear-time recursion)."""
    if not M > 0:
        raise DomainError("rate M must be positive")
    return lindley(A, M)(t)


def tail_counts(samples, xs):
    """Number of samples ``>= x`` for every ``x`` in ``xs``."""
    s = np.sort(np.asarray(samples, dtype=float))
    return s.size - np.searchsorted(s, np.asarray(xs, dtype=float), side="left")


def empirical_gsbb(A: CumulativeProcess, M: float, xs, warmup=DEFAULT_WARMUP, samples=DEFAULT_SAMPLES,
                   sampling="grid", extrapolation=ZERO_BEYOND) -> TailBound:
    """Empirical tail of the rate-``M`` workload of ``A``.

    With ``sampling="grid"`` the workload is read at ``samples`` uniformly
    spaced times after discarding the first ``warmup`` fraction of the trace,
    which estimates the tail at an arbitrary stationary time. With
    ``sampling="events"`` it is read right after every event in the same window.

    Warns (``RuntimeWarning``) when the trace's long-run rate reaches ``M``;
    the window statistics are still returned.
    """
    if not M > 0:
        raise DomainError("rate M must be positive")
    _warn_if_divergent(long_run_rate(A), M)
    if len(A) == 0:
        return TailBound.enveloped(xs, np.zeros(len(xs)), extrapolation)
    if sampling == "grid":
        W = workload(A, M, stationary_times(A.horizon, warmup, samples))
    elif sampling == "events":
        W = lindley(A, M).after[A.times >= warmup * A.horizon]
    else:
        raise ValueError("sampling must be 'grid' or 'events'")
    return TailBound.enveloped(xs, tail_counts(W, xs) / W.size, extrapolation)


def check_gsbb_dominates(A: CumulativeProcess, M: float, phi: TailBound, xs=None,
                         warmup=DEFAULT_WARMUP, samples=DEFAULT_SAMPLES, tol=1e-12) -> bool:
    """True iff the empirical workload tail of ``A`` stays under ``phi`` on ``xs``.

    ``xs`` defaults to the grid ``phi`` is tabulated on.
    """
    xs = np.asarray(phi.xs if xs is None else xs, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        emp = empirical_gsbb(A, M, xs, warmup, samples)
    return bool(np.all(np.asarray(emp.phi) <= phi(np.asarray(emp.xs)) + tol))


class EnvelopePoint(NamedTuple):
    rho: float
    sigma: float


def measured_envelope(A: CumulativeProcess, rhos) -> list:
    """Tightest token-bucket burst ``sigma(rho)`` of ``A`` for every rate in ``rhos``."""
    out = []
    for rho in rhos:
        if not rho > 0:
            raise DomainError("envelope rates must be positive")
        out.append(EnvelopePoint(float(rho), tightest_burst(A, rho)))
    return out


def envelope_csv(points, header=()) -> str:
    buf = io.StringIO()
    for line in header:
        buf.write("# %s\n" % line)
    buf.write("rho,sigma\n")
    for p in points:
        buf.write("%r,%r\n" % (p.rho, p.sigma))
    return buf.getvalue()


# -- confidence intervals ------------------------------------------------------------------------

def z_value(confidence=CONFIDENCE, comparisons=1) -> float:
    """Two-sided normal quantile, Bonferroni-adjusted for ``comparisons`` tests."""
    alpha = (1.0 - confidence) / max(1, comparisons)
    return NormalDist().inv_cdf(1.0 - alpha / 2.0)


def wilson_interval(p, n, z):
    """Wilson score interval for a proportion ``p`` observed on ``n`` trials (vectorized)."""
    p = np.asarray(p, dtype=float)
    n = np.asarray(n, dtype=float)
    denom = 1.0 + z * z / n
    centre = (p + z * z / (2 * n)) / denom
    half = z / denom * np.sqrt(p * (1 - p) / n + z * z / (4 * n * n))
    return np.clip(centre - half, 0.0, 1.0), np.clip(centre + half, 0.0, 1.0)


def effective_trials(per_replica, samples):
    """Effective sample size of the pooled proportion.

    ``per_replica`` has one row per independent replica and one column per
    threshold. Samples inside a replica are serially correlated, so the
    variance of the pooled mean is estimated from the spread between replicas
    and converted back to a binomial-equivalent count. The result is bounded
    below by the number of replicas and above by the raw sample count.
    """
    per_replica = np.atleast_2d(np.asarray(per_replica, dtype=float))
    R = per_replica.shape[0]
    raw = R * samples
    if R < 2:
        return np.full(per_replica.shape[1], float(raw))
    p = per_replica.mean(axis=0)
    var = per_replica.var(axis=0, ddof=1) / R
    with np.errstate(divide="ignore", invalid="ignore"):
        n = np.where(var > 0, p * (1 - p) / var, raw)
    return np.clip(n, R, raw)


# -- the stochastic bound ----------------------------------------------------------------------

@dataclass(frozen=True)
class Claim2Report:
    xs: np.ndarray
    empirical: np.ndarray
    bound: np.ndarray
    margin: np.ndarray
    shift: float
    replicas: int
    samples: int

    @property
    def passed(self) -> np.ndarray:
        return self.empirical <= self.bound + self.margin

    @property
    def ok(self) -> bool:
        return bool(np.all(self.passed))

    def to_csv(self, header=()) -> str:
        buf = io.StringIO()
        for line in header:
            buf.write("# %s\n" % line)
        buf.write("# shift=%r replicas=%d samples=%d\n" % (self.shift, self.replicas, self.samples))
        buf.write("x,empirical,bound,margin,pass\n")
        for row in zip(self.xs.tolist(), self.empirical.tolist(), self.bound.tolist(),
                       self.margin.tolist(), self.passed.tolist()):
            buf.write("%r,%r,%r,%r,%s\n" % (*row[:4], "true" if row[4] else "false"))
        return buf.getvalue()


def backlog(system: ForkJoinSystem, A: CumulativeProcess, ts) -> np.ndarray:
    """Fork-join backlog ``A(t) - D(t)`` at ``ts``, joining on work-index barriers."""
    parts = split(A, system)
    deps = [simulate_queue(a, m) for a, m in zip(parts, system.mu)]
    D = join_departures(A, parts, deps, ts, WORK, system.allocation())
    return A(ts) - D(ts)


def stationary_horizon(source: GeneratorSpec, M: float) -> float:
    """Source horizon, stretched to at least ``100 / (M - rate)`` when that is finite."""
    rate = source.mean_rate
    if rate is not None and rate < M:
        return max(source.horizon, 100.0 / (M - rate))
    return source.horizon


def _replica(job):
    system, source, seed, phi_seed, xs, shift, warmup, samples = job
    A = generate(source.with_seed(seed))
    ts = stationary_times(source.horizon, warmup, samples)
    emp = tail_counts(backlog(system, A, ts), xs)
    A_phi = generate(source.with_seed(phi_seed))
    phi = tail_counts(workload(A_phi, system.M, ts), xs - shift)
    return emp, phi


def replica_seeds(seed, replicas):
    """Independent integer seeds for measurement and for the tail estimate."""
    meas, est = np.random.SeedSequence(int(seed)).spawn(2)
    as_int = lambda ss: int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
    return [as_int(s) for s in meas.spawn(replicas)], [as_int(s) for s in est.spawn(replicas)]


def verify_claim2(system: ForkJoinSystem, source: GeneratorSpec, xs, replicas=20, seed=0,
                  samples=DEFAULT_SAMPLES, warmup=DEFAULT_WARMUP, jobs=1,
                  confidence=CONFIDENCE) -> Claim2Report:
    """Monte Carlo comparison of the backlog tail with the shifted workload tail.

    Every replica draws one realization of ``source`` and reads the fork-join
    backlog at ``samples`` stationary times. ``Phi`` is estimated from a
    second, independently seeded realization per replica through the
    rate-``M`` workload, evaluated at ``x - shift``. The reported margin is the
    sum of the two one-sided Wilson half-widths at ``confidence``,
    Bonferroni-corrected over ``xs``, with sample sizes deflated for serial
    correlation (:func:`effective_trials`).

    Raises :class:`DomainError` if some ``x`` is not above the shift (the bound
    says nothing there) and :class:`ValueError` for splitters other than
    fluid- or quantized-proportional.
    """
    xs = np.asarray(xs, dtype=float)
    shift = system.shift
    if xs.size == 0:
        raise ValueError("need at least one threshold x")
    if np.any(xs <= shift):
        raise DomainError("every x must exceed the shift 2M max(eps/mu) = %r" % shift)
    if system.split.kind not in (FLUID, QUANTIZED):
        raise ValueError("the stochastic bound needs a fluid- or quantized-proportional splitter")
    if replicas < 1:
        raise ValueError("replicas must be positive")
    if source.mean_rate is not None:
        _warn_if_divergent(source.mean_rate, system.M)
        source = GeneratorSpec(**{**source.to_json(), "horizon": stationary_horizon(source, system.M)})

    seeds, phi_seeds = replica_seeds(seed, replicas)
    work = [(system, source, s, p, xs, shift, warmup, samples) for s, p in zip(seeds, phi_seeds)]
    if jobs > 1 and replicas > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_replica, work))
    else:
        results = [_replica(w) for w in work]

    emp_r = np.array([r[0] for r in results], dtype=float) / samples
    phi_r = np.array([r[1] for r in results], dtype=float) / samples
    emp = emp_r.mean(axis=0)
    phi = phi_r.mean(axis=0)

    z = z_value(confidence, xs.size)
    lo, _ = wilson_interval(emp, effective_trials(emp_r, samples), z)
    _, hi = wilson_interval(phi, effective_trials(phi_r, samples), z)
    margin = (emp - lo) + (hi - phi)
    return Claim2Report(xs, emp, phi, margin, shift, replicas, samples)
