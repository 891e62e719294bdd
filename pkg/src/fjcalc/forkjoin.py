"""Fork-join systems: splitting, exact fluid servers, barrier departures and the
deterministic end-to-end delay bound.

A job stream ``A`` is forked over ``K`` queues (``a_k``), each queue is served
by a work-conserving fluid server, and the join releases work only once every
queue has finished its share.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .curves import (
    ATOL, Curve, conforms, convolve, from_process, horizontal_deviation, to_process, token_bucket,
    tightest_burst,
)
from .errors import CausalityError, SplitError, UnboundedDelayError
from .process import LINEAR, STEP, CumulativeProcess

FLUID = "fluid"
QUANTIZED = "quantized"
CUSTOM = "custom"

JOB = "job"
WORK = "work"

SLACK_TOL = 1e-9


# -- split policies and work allocations --------------------------------------------

@dataclass(frozen=True)
class SplitPolicy:
    """How arriving work is divided among the queues.

    ``fluid``: every unit of work is divided in proportion ``mu_k / M``.
    ``quantized``: work is dispatched in rounds of ``quantum`` units; each
    round hands a contiguous piece of ``quantum * mu_k / M`` to each queue in
    index order (weighted round robin).
    ``custom``: fixed fluid proportions ``weights``.
    """
    kind: str = FLUID
    quantum: float = 1.0
    weights: Optional[tuple] = None

    def __post_init__(self):
        if self.kind not in (FLUID, QUANTIZED, CUSTOM):
            raise SplitError("unknown split policy %r" % self.kind)
        if self.kind == QUANTIZED and not self.quantum > 0:
            raise SplitError("quantum must be positive")
        if self.kind == CUSTOM:
            if self.weights is None:
                raise SplitError("custom split needs weights")
            w = np.asarray(self.weights, dtype=float)
            if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
                raise SplitError("custom weights must be non-negative and sum to 1")
            object.__setattr__(self, "weights", tuple(float(x) for x in w))

    def to_json(self):
        out = {"policy": self.kind}
        if self.kind == QUANTIZED:
            out["quantum"] = self.quantum
        if self.kind == CUSTOM:
            out["weights"] = list(self.weights)
        return out

    @classmethod
    def from_json(cls, obj):
        if obj is None:
            return cls()
        kind = obj.get("policy", FLUID)
        if kind in ("quantized-proportional",):
            kind = QUANTIZED
        if kind in ("fluid-proportional",):
            kind = FLUID
        weights = obj.get("weights")
        return cls(kind, float(obj.get("quantum", 1.0)), tuple(weights) if weights else None)


class Allocation:
    """Cumulative share ``c_k(u)`` of queue ``k`` in the first ``u`` units of work.

    Proportional allocations have ``c_k(u) = w_k u``; the round-robin
    allocation is periodic with period ``quantum``.
    """

    def __init__(self, weights, quantum=None):
        self.weights = np.asarray(weights, dtype=float)
        self.quantum = quantum
        self.offsets = np.concatenate(([0.0], np.cumsum(self.weights)[:-1]))

    @property
    def K(self):
        return self.weights.size

    def share(self, k, u):
        u = np.asarray(u, dtype=float)
        w = self.weights[k]
        if self.quantum is None:
            return w * u
        q = self.quantum
        r = np.floor(u / q)
        frac = u - r * q
        return r * w * q + np.clip(frac - self.offsets[k] * q, 0.0, w * q)

    def upper_inverse(self, k, y, tol=ATOL):
        """``sup{u : c_k(u) <= y}`` (``inf`` for a queue that never receives work)."""
        y = np.asarray(y, dtype=float)
        w = self.weights[k]
        if w == 0:
            return np.full_like(y, np.inf)
        if self.quantum is None:
            return y / w
        q = self.quantum
        # a level within tol of a completed slice counts as completing it, so
        # the flat stretch that follows is not lost to rounding
        r = np.floor((y + tol) / (w * q))
        rem = np.maximum(y - r * w * q, 0.0)
        return r * q + self.offsets[k] * q + rem

    def levels(self, u_max):
        """Work levels in ``(0, u_max)`` at which some ``c_k`` changes slope."""
        if self.quantum is None:
            return np.zeros(0)
        q = self.quantum
        n = int(math.ceil(u_max / q))
        base = np.arange(n + 1)[:, None] * q + self.offsets[None, :] * q
        lv = base.ravel()
        return np.unique(lv[(lv > 0) & (lv < u_max)])


# -- the system -------------------------------------------------------------------------

@dataclass(frozen=True)
class ForkJoinSystem:
    mu: tuple
    epsilon: Optional[tuple] = None
    service_curves: Optional[tuple] = None
    envelopes: Optional[tuple] = None
    split: SplitPolicy = field(default_factory=SplitPolicy)

    def __post_init__(self):
        mu = tuple(float(m) for m in self.mu)
        if len(mu) < 1:
            raise ValueError("K >= 1 queues required")
        if any(not m > 0 for m in mu):
            raise ValueError("service rates mu_k must be positive")
        object.__setattr__(self, "mu", mu)
        if self.epsilon is None:
            eps = (self.split.quantum if self.split.kind == QUANTIZED else 0.0,) * len(mu)
        else:
            eps = tuple(float(e) for e in self.epsilon)
        if len(eps) != len(mu) or any(e < 0 for e in eps):
            raise ValueError("epsilon must hold K non-negative values")
        object.__setattr__(self, "epsilon", eps)
        for name in ("service_curves", "envelopes"):
            val = getattr(self, name)
            if val is not None:
                val = tuple(val)
                if len(val) != len(mu):
                    raise ValueError("%s must hold K curves" % name)
                object.__setattr__(self, name, val)
        if self.service_curves is not None:
            for s in self.service_curves:
                if s.segments[0][1] != 0.0:
                    raise ValueError("service curves must vanish at the origin")
        if self.split.kind == CUSTOM and len(self.split.weights) != len(mu):
            raise SplitError("custom weights must hold K values")

    @property
    def K(self) -> int:
        return len(self.mu)

    @property
    def M(self) -> float:
        return math.fsum(self.mu)

    @property
    def weights(self):
        if self.split.kind == CUSTOM:
            return np.asarray(self.split.weights)
        return np.asarray(self.mu) / self.M

    @property
    def shift(self) -> float:
        """The Claim-2 offset ``2 M max_k eps_k / mu_k``."""
        return 2.0 * self.M * max(e / m for e, m in zip(self.epsilon, self.mu))

    def allocation(self) -> Allocation:
        if self.split.kind == QUANTIZED:
            return Allocation(self.weights, self.split.quantum)
        return Allocation(self.weights)

    def replace(self, **kw) -> "ForkJoinSystem":
        from dataclasses import replace
        return replace(self, **kw)

    def to_json(self) -> dict:
        out = {"mu": list(self.mu), "epsilon": list(self.epsilon), "split": self.split.to_json()}
        if self.envelopes is not None:
            out["envelopes"] = [c.to_json() for c in self.envelopes]
        if self.service_curves is not None:
            out["service_curves"] = [c.to_json() for c in self.service_curves]
        return out

    @classmethod
    def from_json(cls, obj: dict) -> "ForkJoinSystem":
        if "mu" not in obj:
            raise ValueError("config: missing 'mu'")
        env = obj.get("envelopes")
        srv = obj.get("service_curves")
        return cls(
            mu=tuple(obj["mu"]),
            epsilon=tuple(obj["epsilon"]) if obj.get("epsilon") is not None else None,
            service_curves=tuple(Curve.from_json(c) for c in srv) if srv else None,
            envelopes=tuple(Curve.from_json(c) for c in env) if env else None,
            split=SplitPolicy.from_json(obj.get("split")),
        )


# -- splitting -------------------------------------------------------------------------

def split(A: CumulativeProcess, system: ForkJoinSystem, policy: Optional[SplitPolicy] = None) -> List[CumulativeProcess]:
    """Fork ``A`` into ``K`` per-queue arrival processes with ``sum_k a_k = A``."""
    if policy is not None and policy != system.split:
        system = system.replace(split=policy, epsilon=None)
    alloc = system.allocation()
    if system.K == 1:
        return [A]
    if alloc.quantum is None or len(A) == 0:
        return [CumulativeProcess(A.times, w * A.values, A.mode, check=False) for w in alloc.weights]
    times, levels = A.times, A.values
    if A.mode == LINEAR:
        extra = alloc.levels(A.total)
        extra = extra[extra > A.values[0]]
        if extra.size:
            t_extra = A.lower_inverse(extra)
            times = np.concatenate((times, t_extra))
            levels = np.concatenate((levels, extra))
            order = np.argsort(times, kind="stable")
            times, levels = times[order], levels[order]
            keep = np.concatenate(([True], np.diff(times) > 0))
            times, levels = times[keep], levels[keep]
    return [CumulativeProcess(times, alloc.share(k, levels), A.mode, check=False) for k in range(system.K)]


def split_deviation(A: CumulativeProcess, parts: Sequence[CumulativeProcess], weights) -> np.ndarray:
    """Per queue, ``sup_{v<=t} |a_k(t) - a_k(v) - w_k (A(t) - A(v))|`` over all event pairs.

    The deviation process ``e_k = a_k - w_k A`` is piecewise linear between the
    union of event times, so the supremum over pairs equals its range, which a
    single pass with running extrema computes exactly.
    """
    ts = np.unique(np.concatenate([A.times] + [p.times for p in parts]))
    out = []
    for p, w in zip(parts, weights):
        e = np.concatenate((p(ts) - w * A(ts), p.right(ts) - w * A.right(ts)))
        e = np.concatenate(([0.0], e.reshape(2, -1).T.ravel()))
        hi = np.maximum.accumulate(e)
        lo = np.minimum.accumulate(e)
        out.append(max(np.max(e - lo), np.max(hi - e)))
    return np.array(out)


# -- fluid servers ----------------------------------------------------------------------

@dataclass(frozen=True)
class Backlog:
    """Lindley workload of a fluid server at every event of its input."""
    times: np.ndarray
    before: np.ndarray   # workload just before each event (left value)
    after: np.ndarray    # workload right after each event's jump
    drift: np.ndarray    # d/dt of workload on (t_i, t_{i+1}) while positive
    rate: float

    def __call__(self, t):
        """Left-continuous workload ``W(t)``."""
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            return np.zeros_like(t)[()]
        i = np.searchsorted(self.times, t, side="left") - 1
        ic = np.maximum(i, 0)
        w = np.maximum(0.0, self.after[ic] + self.drift[ic] * (t - self.times[ic]))
        return np.where(i >= 0, w, 0.0)[()]


def lindley(a: CumulativeProcess, rate: float) -> Backlog:
    """Workload of a rate-``rate`` fluid server fed by ``a``.

    ``U_{i+1} = max(0, U_i + J_i + (s_i - rate) * (t_{i+1} - t_i))`` with
    jumps ``J`` and input slopes ``s``, solved in closed form through the
    running minimum of its partial sums.
    """
    if not rate > 0:
        raise ValueError("service rate must be positive")
    t = a.times
    jumps = a.jumps
    drift = a.slopes - rate
    if t.size == 0:
        z = np.zeros(0)
        return Backlog(t, z, z, z, rate)
    steps = jumps[:-1] + drift[:-1] * np.diff(t)
    S = np.concatenate(([0.0], np.cumsum(steps)))
    before = S - np.minimum.accumulate(np.minimum(S, 0.0))
    before[0] = 0.0
    return Backlog(t, before, before + jumps, drift, rate)


def simulate_queue(a: CumulativeProcess, mu: float, latency: float = 0.0) -> CumulativeProcess:
    """Departures of an exact work-conserving fluid server of rate ``mu``.

    ``d(t) = min_{v<=t} a(v) + mu (t - v)``; with ``latency > 0`` the output is
    further delayed, realising the rate-latency service curve with equality.
    """
    W = lindley(a, mu)
    if len(a) == 0:
        return CumulativeProcess.empty()
    t = a.times
    d_at = a.left_values - W.before
    # emptying instants inside each inter-event interval
    lens = np.append(np.diff(t), np.inf)
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = np.where(W.drift < 0, W.after / -W.drift, np.inf)
    empties = (W.after > 0) & (tau < lens)
    te = t[empties] + tau[empties]
    de = a.values[empties] + a.slopes[empties] * tau[empties]
    times = np.concatenate((t, te))
    vals = np.concatenate((d_at, de))
    order = np.argsort(times, kind="stable")
    times, vals = times[order], vals[order]
    keep = np.concatenate(([True], np.diff(times) > 0))
    times, vals = times[keep], np.maximum.accumulate(vals[keep])
    if latency:
        times = times + latency
    return CumulativeProcess(times, vals, LINEAR, check=False)


def _rate_latency_params(s: Curve):
    if s.inf_from is not None:
        if len(s.segments) == 1 and s.segments[0][1:] == (0.0, 0.0):
            return math.inf, s.inf_from
        return None
    segs = s.segments
    if len(segs) == 1 and segs[0][1] == 0.0 and segs[0][2] > 0:
        return segs[0][2], 0.0
    if len(segs) == 2 and segs[0][1:] == (0.0, 0.0) and segs[1][1] == 0.0 and segs[1][2] > 0:
        return segs[1][2], segs[1][0]
    return None


def serve(a: CumulativeProcess, s: Curve) -> CumulativeProcess:
    """Departures of the minimal server with service curve ``s``: ``d = a * s``."""
    params = _rate_latency_params(s)
    if params is not None:
        rate, latency = params
        if math.isinf(rate):
            if len(a) == 0:
                return a
            return CumulativeProcess(a.times + latency, a.values, a.mode, check=False)
        return simulate_queue(a, rate, latency)
    out = convolve(from_process(a), s)
    return to_process(out)


# -- virtual delay and the join ------------------------------------------------------------

def _check_causal(a, d, ts, tol=ATOL):
    if np.any(d(ts) > a(ts) + tol * np.maximum(1.0, np.abs(a(ts)))):
        raise CausalityError("departures exceed arrivals")


def virtual_delay(a: CumulativeProcess, d: CumulativeProcess, t):
    """``t - a^{-1}(d(t))``: how long the work leaving at ``t`` has waited.

    The inverse is taken as ``sup{s : a(s) <= d(t)}`` so that a queue whose
    departures have caught up with its arrivals has zero delay.
    """
    t = np.asarray(t, dtype=float)
    _check_causal(a, d, np.atleast_1d(t))
    level = np.minimum(d(t), a(t))
    origin = a.upper_inverse(level, tol=ATOL)
    return np.maximum(0.0, t - origin)[()]


def join_departures(A, parts, deps, ts, barrier=JOB, allocation: Optional[Allocation] = None):
    """Join output ``D(t) = A(min_k a_k^{-1}(d_k(t)))`` sampled at ``ts``.

    ``barrier='job'`` applies the formula in the time domain: work arriving in
    one batch leaves only when every queue has finished its share of it.
    ``barrier='work'`` applies it on the work axis through ``allocation``
    (``D = min_k c_k^{-1}(d_k)``), so batches leave progressively; for fluid
    input both agree.
    """
    ts = np.asarray(ts, dtype=float)
    At = A(ts)
    total = sum(p(ts) for p in parts)
    if np.any(np.abs(total - At) > 1e-9 * np.maximum(1.0, np.abs(At))):
        raise SplitError("per-queue arrivals do not add up to the total")
    for a, d in zip(parts, deps):
        _check_causal(a, d, ts)
    if barrier == WORK:
        if allocation is None:
            raise ValueError("work barriers need the split allocation")
        u = np.full(ts.shape, np.inf)
        for k, d in enumerate(deps):
            u = np.minimum(u, allocation.upper_inverse(k, d(ts)))
        D = np.minimum(u, At)
    else:
        tau = np.full(ts.shape, np.inf)
        for a, d in zip(parts, deps):
            level = np.minimum(d(ts), a(ts))
            tau = np.minimum(tau, a.upper_inverse(level, tol=ATOL))
        D = np.where(np.isinf(tau), A.total, A(np.where(np.isinf(tau), 0.0, tau)))
        D = np.minimum(D, At)
    D = np.maximum.accumulate(D)
    if ts[0] > 0.0:
        # anchor at the origin so the sample at ts[0] is not read as a jump
        ts, D = np.concatenate(([0.0], ts)), np.concatenate(([0.0], D))
    return CumulativeProcess(ts, D, LINEAR, check=False)


@dataclass(frozen=True)
class SimulationResult:
    A: CumulativeProcess
    a: tuple
    d: tuple
    D: CumulativeProcess
    delta: tuple
    times: np.ndarray


def sample_times(A, deps, grid=1e-2, horizon=None):
    """Union of departure/arrival event times and a uniform grid, from 0 to ``horizon``."""
    if horizon is None:
        horizon = max([A.horizon] + [d.horizon for d in deps])
    parts = [A.times] + [d.times for d in deps] + [[0.0, horizon]]
    if grid:
        parts.append(np.arange(0.0, horizon, grid))
    ts = np.unique(np.concatenate([np.asarray(p, dtype=float) for p in parts]))
    return ts[ts <= horizon]


def simulate(system: ForkJoinSystem, A: CumulativeProcess, grid=1e-2, barrier=JOB, ts=None) -> SimulationResult:
    """Fork ``A``, serve each share and join; everything sampled at ``ts``."""
    parts = split(A, system)
    if system.service_curves is not None:
        deps = [serve(a, s) for a, s in zip(parts, system.service_curves)]
    else:
        deps = [simulate_queue(a, m) for a, m in zip(parts, system.mu)]
    if ts is None:
        ts = sample_times(A, deps, grid)
    D = join_departures(A, parts, deps, ts, barrier, system.allocation())
    delta = tuple(virtual_delay(a, d, ts) for a, d in zip(parts, deps))
    return SimulationResult(A, tuple(parts), tuple(deps), D, delta, ts)


# -- the deterministic bound ----------------------------------------------------------------

def queue_delay_bounds(system: ForkJoinSystem) -> List[float]:
    """Horizontal deviation between each queue's envelope and service curve."""
    if system.envelopes is None:
        raise ValueError("per-queue envelopes are required")
    services = system.service_curves
    if services is None:
        from .curves import rate_curve
        services = tuple(rate_curve(m) for m in system.mu)
    out = []
    for k, (b, s) in enumerate(zip(system.envelopes, services)):
        try:
            out.append(horizontal_deviation(b, s))
        except UnboundedDelayError:
            raise UnboundedDelayError(queue=k + 1) from None
    return out


def claim1_delay_bound(system: ForkJoinSystem) -> float:
    """End-to-end delay bound: the largest per-queue horizontal deviation."""
    return max(queue_delay_bounds(system))


def measured_envelopes(parts, rhos) -> tuple:
    """Tightest token bucket at the given rate for every queue's realised arrivals."""
    return tuple(token_bucket(tightest_burst(a, r), r) for a, r in zip(parts, rhos))


@dataclass
class BoundReport:
    t: np.ndarray
    A: np.ndarray
    D: np.ndarray
    bound: np.ndarray
    delay_bound: float
    queue_bounds: list
    hypothesis_ok: bool
    violations: list = field(default_factory=list)
    on_grid: Optional[np.ndarray] = None   # rows that lie on the uniform sampling grid

    @property
    def slack(self):
        return self.D - self.bound

    @property
    def min_slack(self) -> float:
        return float(np.min(self.slack)) if self.slack.size else 0.0

    @property
    def ok(self) -> bool:
        return self.hypothesis_ok and self.min_slack >= -SLACK_TOL

    def to_csv(self, fh=None, grid_only=False) -> str:
        """CSV ``t,A,D,bound,slack``.

        With ``grid_only`` only rows on the uniform sampling grid are written;
        the summary comment still reports the minimum slack over every
        sampled instant, event times included.
        """
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        if not self.hypothesis_ok:
            buf.write("# hypothesis violated: %s\n" % "; ".join(self.violations))
        buf.write("# delay_bound=%r min_slack=%r\n" % (self.delay_bound, self.min_slack))
        w.writerow(["t", "A", "D", "bound", "slack"])
        rows = np.ones(self.t.shape, bool) if not grid_only or self.on_grid is None else self.on_grid
        for row in zip(self.t[rows], self.A[rows], self.D[rows], self.bound[rows], self.slack[rows]):
            w.writerow(["%.12g" % x for x in row])
        text = buf.getvalue()
        if fh is not None:
            fh.write(text)
        return text


def verify_claim1(system: ForkJoinSystem, A: CumulativeProcess, grid=1e-2, aggregate_envelope: Optional[Curve] = None,
                  barrier=JOB) -> BoundReport:
    """Simulate and check ``D(t) >= A(t - d)`` with ``d`` the end-to-end delay bound.

    Per-queue envelopes come from ``system.envelopes`` or, given only an
    aggregate token bucket ``(sigma, rho)``, are measured on the realised
    shares at rates ``w_k rho``. If a share does not conform to its envelope
    the report is flagged and the inequality is not asserted.
    """
    parts = split(A, system)
    if system.envelopes is None:
        if aggregate_envelope is None:
            raise ValueError("need per-queue envelopes or an aggregate envelope")
        rho = aggregate_envelope.final_slope
        system = system.replace(envelopes=measured_envelopes(parts, rho * system.weights))
    violations = []
    for k, (a, b) in enumerate(zip(parts, system.envelopes)):
        res = conforms(a, b)
        if not res.ok:
            violations.append("queue %d exceeds its envelope by %g" % (k + 1, res.violation))
    bounds = queue_delay_bounds(system)
    d = max(bounds)
    sim = simulate(system, A, grid=grid, barrier=barrier)
    ts = sim.times
    lower = A(ts - d)
    on_grid = np.abs(ts / grid - np.round(ts / grid)) < 1e-9 if grid else None
    return BoundReport(ts, A(ts), sim.D(ts), lower, d, bounds, not violations, violations, on_grid)
