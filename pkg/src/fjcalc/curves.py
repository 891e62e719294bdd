"""Piecewise-linear min-plus algebra.

A :class:`Curve` is a non-negative, non-decreasing, left-continuous function of
``t >= 0`` made of finitely many affine segments, the last of which extends to
``+inf`` unless the curve becomes infinite from some time ``inf_from`` on.
Segment ``i`` covers ``(t_i, t_{i+1}]``; its stored value is the right limit at
``t_i``, so jumps are encoded as a gap between the end of one segment and the
start of the next. Every curve satisfies ``f(0) = 0``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Optional, Sequence, Tuple

import numpy as np

from .errors import CausalityError, DomainError, UnboundedDelayError, UnreachableLevelError
from .process import LINEAR, STEP, CumulativeProcess

INF = math.inf
ATOL = 1e-9
SNAP = 1e-12   # relative time tolerance for locating breakpoints
_MIN_LEN = 1e-12

Segment = Tuple[float, float, float]


@dataclass(frozen=True)
class Curve:
    segments: Tuple[Segment, ...]
    inf_from: Optional[float] = None

    def __post_init__(self):
        segs = tuple((float(t), float(v), float(r)) for t, v, r in self.segments)
        if not segs:
            raise ValueError("a curve needs at least one segment")
        if segs[0][0] != 0.0:
            raise ValueError("first segment must start at t=0")
        inf_from = None if self.inf_from is None else float(self.inf_from)
        if inf_from is not None:
            if inf_from < 0:
                raise DomainError("inf_from must be non-negative")
            segs = segs[:1] + tuple(s for s in segs[1:] if s[0] < inf_from)
        for (t0, v0, r0), (t1, v1, _) in zip(segs, segs[1:]):
            if t1 <= t0:
                raise ValueError("segment start times must be strictly increasing")
            if v1 < v0 + r0 * (t1 - t0) - ATOL:
                raise ValueError("curve must be non-decreasing (negative jump at t=%g)" % t1)
        if segs[0][1] < -ATOL or any(r < 0 for _, _, r in segs):
            raise ValueError("curve must be non-negative and non-decreasing")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "inf_from", inf_from)

    # -- array views ----------------------------------------------------

    @cached_property
    def _arrays(self):
        a = np.array(self.segments, dtype=float)
        return a[:, 0].copy(), a[:, 1].copy(), a[:, 2].copy()

    @property
    def starts(self):
        return self._arrays[0]

    @property
    def final_slope(self) -> float:
        return self.segments[-1][2]

    def lengths(self):
        """Length of every segment (``inf`` for an unbounded last segment)."""
        t = self.starts
        end = INF if self.inf_from is None else self.inf_from
        return np.diff(np.append(t, end))

    def ends(self):
        """Left-limit value at the end of every segment (``inf`` if unbounded)."""
        t, v, r = self._arrays
        lens = self.lengths()
        with np.errstate(invalid="ignore"):
            out = v + np.where(r > 0, r * lens, 0.0)
        return out

    @property
    def sup(self) -> float:
        """Supremum of the curve over ``t >= 0``."""
        if self.inf_from is not None:
            return INF
        return INF if self.final_slope > 0 else self.segments[-1][1]

    # -- evaluation -----------------------------------------------------

    def __call__(self, t):
        return evaluate(self, t)

    def right_limit(self, t):
        """``f(t+)`` for ``t >= 0`` (vectorised)."""
        t = np.asarray(t, dtype=float)
        if np.any(t < 0):
            raise DomainError("curves are defined for t >= 0")
        starts, v, r = self._arrays
        eps = _snap(t)
        i = np.searchsorted(starts, t + eps, side="right") - 1
        out = v[i] + r[i] * np.maximum(t - starts[i], 0.0)
        if self.inf_from is not None:
            out = np.where(t >= self.inf_from - eps, INF, out)
        return out[()]

    def __repr__(self):
        body = ", ".join("(%g, %g, %g)" % s for s in self.segments)
        return "Curve([%s], inf_from=%r)" % (body, self.inf_from)

    # -- serialisation --------------------------------------------------

    def to_json(self) -> dict:
        return {
            "segments": [{"t": t, "v": v, "slope": r} for t, v, r in self.segments],
            "final_slope": self.final_slope,
            "inf_from": self.inf_from,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Curve":
        """Inverse of :meth:`to_json`.

        The shorthands ``{"token_bucket": [sigma, rho]}``,
        ``{"rate_latency": [R, T]}`` and ``{"rate": R}`` are also accepted.
        """
        if "token_bucket" in obj:
            return token_bucket(*map(float, obj["token_bucket"]))
        if "rate_latency" in obj:
            return rate_latency(*map(float, obj["rate_latency"]))
        if "rate" in obj:
            return rate_curve(float(obj["rate"]))
        if "segments" not in obj:
            raise ValueError("curve needs 'segments' or a token_bucket / rate_latency / rate shorthand")
        segs = [(s["t"], s["v"], s["slope"]) for s in obj["segments"]]
        curve = cls(tuple(segs), obj.get("inf_from"))
        fs = obj.get("final_slope")
        if fs is not None and abs(float(fs) - curve.final_slope) > ATOL:
            raise ValueError("final_slope %r disagrees with the last segment" % fs)
        return curve


# -- constructors ---------------------------------------------------------

def token_bucket(sigma: float, rho: float) -> Curve:
    """Affine arrival envelope ``sigma + rho*t`` for ``t > 0`` (0 at the origin)."""
    if sigma < 0 or rho < 0:
        raise ValueError("token bucket parameters must be non-negative")
    return Curve(((0.0, sigma, rho),))


def rate_latency(rate: float, latency: float) -> Curve:
    """Service curve ``rate * max(0, t - latency)``."""
    if rate < 0 or latency < 0:
        raise ValueError("rate-latency parameters must be non-negative")
    if latency == 0:
        return Curve(((0.0, 0.0, rate),))
    return Curve(((0.0, 0.0, 0.0), (latency, 0.0, rate)))


def rate_curve(rate: float) -> Curve:
    return rate_latency(rate, 0.0)


def identity(delay: float = 0.0) -> Curve:
    """The min-plus identity ``u_inf`` delayed by ``delay``: 0 up to ``delay``, then ``+inf``."""
    if delay < 0:
        raise DomainError("delay must be non-negative")
    return Curve(((0.0, 0.0, 0.0),), inf_from=delay)


def from_process(a: CumulativeProcess) -> Curve:
    """View a cumulative process as a curve (same values, left-continuous)."""
    segs = []
    if len(a) == 0 or a.times[0] > 0:
        segs.append((0.0, 0.0, 0.0))
    slopes = a.slopes
    for t, w, s in zip(a.times, a.values, slopes):
        segs.append((float(t), float(w), float(s)))
    return canonical(Curve(tuple(segs)))


def to_process(f: Curve, horizon: Optional[float] = None) -> CumulativeProcess:
    """Sample a continuous curve into a linear-mode process over ``[0, horizon]``.

    Raises :class:`ValueError` if ``f`` has a jump after the origin or is
    infinite somewhere in the window.
    """
    ends = f.ends()
    starts = f.starts
    for i in range(1, len(f.segments)):
        if f.segments[i][1] > ends[i - 1] + ATOL:
            raise ValueError("curve has a jump at t=%g; not representable as a fluid process" % starts[i])
    if horizon is None:
        horizon = starts[-1]
    if f.inf_from is not None and horizon > f.inf_from:
        raise ValueError("curve is infinite inside the requested window")
    pts = [s for s in starts if s <= horizon]
    if pts[-1] < horizon:
        pts.append(horizon)
    times = np.array(pts, dtype=float)
    values = np.array([f.segments[0][1]] + list(evaluate(f, times[1:])), dtype=float)
    if times.size > 1 and times[0] == 0 and values[0] == 0 and values[1] == 0:
        # leading idle stretch: start the process at the last zero
        k = int(np.searchsorted(values, 0.0, side="right")) - 1
        times, values = times[k:], values[k:]
    return CumulativeProcess(times, values, LINEAR)


# -- canonical form ---------------------------------------------------------

def canonical(f: Curve, tol: float = ATOL) -> Curve:
    """Merge collinear neighbours and drop negligible segments."""
    end = INF if f.inf_from is None else f.inf_from
    out = [list(f.segments[0])]
    for t, v, r in f.segments[1:]:
        pt, pv, pr = out[-1]
        if t - pt < _MIN_LEN:
            # the previous segment is negligible: this one takes its place
            out[-1] = [pt, max(v, pv), r]
            continue
        cont = pv + pr * (t - pt)
        if abs(v - cont) <= tol * max(1.0, abs(v)):
            if abs(r - pr) <= tol * max(1.0, abs(r)):
                continue
            v = cont
        out.append([t, v, r])
    if len(out) > 1 and end - out[-1][0] < _MIN_LEN:
        out.pop()
    return Curve(tuple(tuple(s) for s in out), f.inf_from)


def curves_close(f: Curve, g: Curve, tol: float = 1e-9) -> bool:
    """Segment-level equality of the canonical forms, up to ``tol`` (relative for large values)."""
    cf, cg = canonical(f, tol), canonical(g, tol)
    if (cf.inf_from is None) != (cg.inf_from is None):
        return False
    if cf.inf_from is not None and abs(cf.inf_from - cg.inf_from) > tol:
        return False
    if len(cf.segments) != len(cg.segments):
        return False
    a = np.array(cf.segments)
    b = np.array(cg.segments)
    return bool(np.allclose(a, b, rtol=tol, atol=tol))


# -- operations -----------------------------------------------------------

def evaluate(f: Curve, t):
    """Value of ``f`` at ``t`` under the left-continuity convention (``inf`` inside an infinite region).

    Breakpoints of derived curves are floating-point sums (``2.05 + 0.15`` is
    not ``2.2``), so a time within :data:`SNAP` (relative) of a breakpoint is
    read as that breakpoint.
    """
    t = np.asarray(t, dtype=float)
    if np.any(t < 0):
        raise DomainError("curves are defined for t >= 0")
    starts, v, r = f._arrays
    eps = _snap(t)
    i = np.searchsorted(starts, t - eps, side="left") - 1
    ic = np.maximum(i, 0)
    out = np.where(i >= 0, v[ic] + r[ic] * np.maximum(t - starts[ic], 0.0), 0.0)
    if f.inf_from is not None:
        out = np.where(t > f.inf_from + eps, INF, out)
    return out[()]


def _snap(t):
    return SNAP * np.maximum(1.0, np.abs(t))


def delay_shift(f: Curve, d: float) -> Curve:
    """The delay operator: ``g(t) = f(t - d)`` for ``t >= d`` and ``f(0) = 0`` before."""
    if d < 0:
        raise DomainError("delay must be non-negative")
    if d == 0:
        return f
    segs = [(0.0, 0.0, 0.0)] + [(t + d, v, r) for t, v, r in f.segments]
    inf_from = None if f.inf_from is None else f.inf_from + d
    return canonical(Curve(tuple(segs), inf_from))


def _pieces(f: Curve):
    """Finite-length or unbounded affine pieces of ``f``: (start, value, slope, length)."""
    out = []
    for (t, v, r), ln in zip(f.segments, f.lengths()):
        if ln > 0:
            out.append((t, v, r, ln))
    return out


def convolve(f: Curve, g: Curve) -> Curve:
    """Exact min-plus convolution ``(f*g)(t) = inf_{0<=v<=t} f(v) + g(t-v)``.

    The convolution of two affine pieces is a convex piece with at most two
    slopes (the smaller slope first); the result is the lower envelope of all
    such pieces, together with each operand's pieces combined with the other
    operand's value 0 at the origin.
    """
    pf, pg = _pieces(f), _pieces(g)
    rows = []
    for t, v, r, ln in pf + pg:
        rows.append((t, v, r, ln, 0.0, 0.0))
    for tf, vf, rf, lf in pf:
        for tg, vg, rg, lg in pg:
            (ra, la), (rb, lb) = sorted(((rf, lf), (rg, lg)))
            rows.append((tf + tg, vf + vg, ra, la, rb, lb if math.isfinite(la) else 0.0))
    if f.inf_from is not None and g.inf_from is not None:
        inf_from = f.inf_from + g.inf_from
    else:
        inf_from = None
    if not rows:
        return identity(inf_from or 0.0)
    return _lower_envelope(np.array(rows, dtype=float), inf_from)


def _piece_values(P, x):
    x0, y0, r1, l1, r2, l2 = P.T
    u = np.clip(x - x0, 0.0, None)
    first = np.minimum(u, l1)
    with np.errstate(invalid="ignore"):
        second = np.where(np.isfinite(l1), np.clip(u - l1, 0.0, l2), 0.0)
    return y0 + r1 * first + r2 * second


def _piece_slopes(P, x):
    x0, _, r1, l1, r2, _ = P.T
    return np.where(x - x0 < l1, r1, r2)


def _lower_envelope(P, inf_from):
    x0 = P[:, 0]
    k1 = x0 + P[:, 3]
    end = k1 + P[:, 5]
    cuts = np.concatenate((x0, k1[np.isfinite(k1)], end[np.isfinite(end)], [0.0]))
    xs = np.unique(cuts)
    if inf_from is not None:
        xs = xs[xs <= inf_from + _MIN_LEN]
        if xs[-1] < inf_from:
            xs = np.append(xs, inf_from)
    bounds = list(zip(xs[:-1], xs[1:]))
    if inf_from is None:
        bounds.append((xs[-1], INF))
    segs = []
    for a, b in bounds:
        if b - a < _MIN_LEN:
            continue
        active = (x0 <= a + _MIN_LEN) & (end >= b - _MIN_LEN)
        if not np.any(active):
            raise RuntimeError("convolution envelope has a gap at t=%g" % a)
        Q = P[active]
        mid = a + 1.0 if b == INF else 0.5 * (a + b)
        val = _piece_values(Q, a)
        slope = _piece_slopes(Q, mid)
        segs.extend(_walk_lines(a, b, val, slope))
    if not segs or segs[0][0] > 0:
        segs.insert(0, (0.0, 0.0, 0.0))
    return canonical(Curve(tuple(segs), inf_from))


def _walk_lines(a, b, val, slope):
    """Lower envelope of lines ``val + slope*(x - a)`` on ``[a, b)``."""
    out = []
    lo = val.min()
    tie = val <= lo + ATOL * max(1.0, abs(lo))
    cur = int(np.flatnonzero(tie)[np.argmin(slope[tie])])
    pos = a
    while True:
        out.append((pos, float(val[cur] + slope[cur] * (pos - a)), float(slope[cur])))
        cand = slope < slope[cur]
        if not np.any(cand):
            break
        with np.errstate(divide="ignore", invalid="ignore"):
            cross = a + (val - val[cur]) / (slope[cur] - slope)
        cross = np.where(cand & (cross > pos + _MIN_LEN), cross, INF)
        nxt = cross.min()
        if not nxt < b:
            break
        ties = cross <= nxt + _MIN_LEN
        cur = int(np.flatnonzero(ties)[np.argmin(slope[ties])])
        pos = float(nxt)
    return out


# -- inverses ------------------------------------------------------------------

def _level_time(f: Curve, y: float, strict: bool) -> float:
    """``inf{t : f(t) >= y}`` (or ``> y`` when ``strict``); ``inf`` if never reached."""
    if y < 0 or (y == 0 and not strict):
        return 0.0
    starts, v, r = f._arrays
    ends = f.ends()
    lens = f.lengths()
    for i in range(len(starts)):
        hit_start = v[i] > y if strict else v[i] >= y
        if hit_start:
            return float(starts[i])
        hit_end = ends[i] > y if strict else ends[i] >= y
        if lens[i] > 0 and hit_end and r[i] > 0:
            return float(starts[i] + (y - v[i]) / r[i])
    if f.inf_from is not None:
        return f.inf_from
    return INF


def pseudo_inverse(a, v):
    """Generalised left-continuous inverse ``inf{t >= 0 : a(t) >= v}``.

    Works on a :class:`Curve` or a :class:`~fjcalc.process.CumulativeProcess`.
    Raises :class:`UnreachableLevelError` when ``v`` exceeds ``sup a``.
    """
    if np.any(np.asarray(v) < 0):
        raise DomainError("level must be non-negative")
    if isinstance(a, CumulativeProcess):
        return a.lower_inverse(v)
    vs = np.atleast_1d(np.asarray(v, dtype=float))
    out = np.array([_level_time(a, float(y), strict=False) for y in vs])
    if np.any(np.isinf(out)):
        raise UnreachableLevelError("level exceeds the supremum of the curve")
    return out.reshape(np.shape(v))[()]


def horizontal_deviation(b: Curve, s: Curve) -> float:
    """Smallest ``z >= 0`` with ``s(x) >= b(x - z)`` for all ``x >= z``.

    Computed on the level axis: ``z = sup_y [T_s(y) - T_b(y)]`` where ``T_f(y)``
    is the first time ``f`` exceeds ``y``. Both inverses are piecewise linear
    in ``y``, so the supremum is attained at a breakpoint level (taking both the
    strict and non-strict inverse to capture one-sided limits) or diverges
    along the affine tails.
    """
    levels = {0.0}
    for f in (b, s):
        levels.update(v for _, v, _ in f.segments)
        levels.update(e for e in f.ends() if math.isfinite(e))
    b_sup = b.sup
    best = 0.0
    for y in sorted(levels):
        if y > b_sup:
            continue
        for strict in (False, True):
            tb = _level_time(b, y, strict)
            if not math.isfinite(tb):
                continue
            ts = _level_time(s, y, strict)
            if not math.isfinite(ts):
                raise UnboundedDelayError()
            best = max(best, ts - tb)
    if b_sup == INF:
        if s.sup < INF:
            raise UnboundedDelayError()
        if b.inf_from is not None:
            if s.inf_from is None:
                raise UnboundedDelayError()
            best = max(best, s.inf_from - b.inf_from)
        elif s.inf_from is None and b.final_slope > s.final_slope:
            raise UnboundedDelayError()
    return max(best, 0.0)


# -- relations with cumulative processes ------------------------------------------

class Conformance(NamedTuple):
    ok: bool
    violation: float


def _is_token_bucket(b: Curve) -> bool:
    return len(b.segments) == 1 and b.inf_from is None


def tightest_burst(a: CumulativeProcess, rho: float) -> float:
    """Smallest ``sigma`` such that ``a`` conforms to the token bucket ``(sigma, rho)``.

    One pass: ``max_j [a(t_j+) - rho t_j] - min_{i<=j} [a(t_i) - rho t_i]``.
    """
    if len(a) == 0:
        return 0.0
    t = a.times
    gain = a.values - rho * t
    base = np.minimum.accumulate(a.left_values - rho * t)
    return float(max(np.max(gain - base), 0.0))


def conforms(a: CumulativeProcess, b: Curve, tol: float = ATOL) -> Conformance:
    """Check ``a(t) - a(v) <= b(t - v)`` for all event times ``v <= t``.

    Pairs are compared at their worst one-sided limits: the right limit of ``a``
    at ``t``, the left value at ``v`` and the right limit of ``b``. The returned
    violation is the largest excess (0 when conformant).
    """
    if len(a) == 0 or b.inf_from is not None and b.inf_from == 0:
        return Conformance(True, 0.0)
    t = a.times
    right = a.values
    left = a.left_values
    if _is_token_bucket(b):
        sigma, rho = b.segments[0][1], b.segments[0][2]
        worst = tightest_burst(a, rho) - sigma
    else:
        worst = -INF
        for j0 in range(0, t.size, 512):
            j = np.arange(j0, min(j0 + 512, t.size))
            lag = t[j][:, None] - t[None, :]
            mask = lag >= 0
            bv = b.right_limit(np.where(mask, lag, 0.0))
            diff = np.where(mask, right[j][:, None] - left[None, :] - bv, -INF)
            worst = max(worst, float(np.max(diff)))
    worst = float(worst)
    return Conformance(worst <= tol, max(worst, 0.0))


def check_service_curve(a: CumulativeProcess, d: CumulativeProcess, s: Curve, tol: float = ATOL) -> bool:
    """True iff ``d(t) >= (s*a)(t)`` at every event time of ``a`` and ``d``."""
    ts = np.union1d(a.times, d.times)
    if ts.size == 0:
        return True
    if np.any(d(ts) > a(ts) + tol) or np.any(d.right(ts) > a.right(ts) + tol):
        raise CausalityError("departures exceed arrivals")
    lower = convolve(from_process(a), s)
    ts = np.union1d(ts, lower.starts)
    ts = ts[ts > 0]
    need = evaluate(lower, ts)
    return bool(np.all(d(ts) >= need - tol))
