"""Cumulative work processes: event-indexed, non-decreasing functions of time.

Two interpolation modes are supported:

``step``
    Discrete arrivals. ``values[i]`` is the cumulative work right after the
    event at ``times[i]``; the process is constant on ``(times[i], times[i+1]]``.
``linear``
    Fluid arrivals. The process interpolates linearly between the points
    ``(times[i], values[i])`` and is constant after the last one. A positive
    ``values[0]`` is a jump at ``times[0]``.

Both modes are left-continuous and vanish for ``t <= times[0]``, so the value at
an event time excludes any jump that happens there. :meth:`CumulativeProcess.right`
gives right limits.
"""
from __future__ import annotations

from functools import cached_property

import numpy as np

from .errors import DomainError, UnreachableLevelError

STEP = "step"
LINEAR = "linear"

ATOL = 1e-9


class CumulativeProcess:
    __slots__ = ("times", "values", "mode", "__dict__")

    def __init__(self, times, values, mode=STEP, *, check=True):
        times = np.asarray(times, dtype=float)
        values = np.asarray(values, dtype=float)
        if mode not in (STEP, LINEAR):
            raise ValueError("unknown interpolation mode %r" % (mode,))
        if times.ndim != 1 or times.shape != values.shape:
            raise ValueError("times and values must be 1-d arrays of equal length")
        if check and times.size:
            if times[0] < 0:
                raise DomainError("event times must be non-negative")
            if np.any(np.diff(times) <= 0):
                raise ValueError("event times must be strictly increasing")
            if values[0] < -ATOL or np.any(np.diff(values) < -ATOL):
                raise ValueError("cumulative work must be non-negative and non-decreasing")
        times.setflags(write=False)
        values.setflags(write=False)
        self.times = times
        self.values = values
        self.mode = mode

    # -- constructors ---------------------------------------------------

    @classmethod
    def from_increments(cls, times, increments, mode=STEP):
        return cls(times, np.cumsum(np.asarray(increments, dtype=float)), mode)

    @classmethod
    def empty(cls):
        return cls(np.zeros(0), np.zeros(0))

    @classmethod
    def fluid_rate(cls, rate, horizon, burst=0.0):
        """Greedy fluid source: ``burst`` at time 0, then constant ``rate`` until ``horizon``."""
        return cls([0.0, horizon], [burst, burst + rate * horizon], LINEAR)

    # -- basic properties -----------------------------------------------

    def __len__(self):
        return int(self.times.size)

    def __repr__(self):
        return "CumulativeProcess(n=%d, mode=%s, total=%g)" % (len(self), self.mode, self.total)

    def __eq__(self, other):
        if not isinstance(other, CumulativeProcess):
            return NotImplemented
        return (self.mode == other.mode
                and np.array_equal(self.times, other.times)
                and np.array_equal(self.values, other.values))

    @property
    def total(self) -> float:
        return float(self.values[-1]) if self.values.size else 0.0

    @property
    def horizon(self) -> float:
        return float(self.times[-1]) if self.times.size else 0.0

    @cached_property
    def jumps(self):
        """Jump size at every event time (right limit minus left value)."""
        if self.mode == STEP:
            return np.diff(self.values, prepend=0.0)
        out = np.zeros_like(self.values)
        if out.size:
            out[0] = self.values[0]
        return out

    @cached_property
    def left_values(self):
        """Process value at each event time (left-continuous convention)."""
        if self.mode == STEP:
            return np.concatenate(([0.0], self.values[:-1])) if self.values.size else self.values
        out = self.values.copy()
        if out.size:
            out[0] = 0.0
        return out

    @cached_property
    def slopes(self):
        """Slope on ``(times[i], times[i+1])``; the slope after the last event is 0."""
        if self.mode == STEP or self.times.size < 2:
            return np.zeros_like(self.values)
        s = np.diff(self.values) / np.diff(self.times)
        return np.append(s, 0.0)

    # -- evaluation -----------------------------------------------------

    def __call__(self, t):
        """Left-continuous value at ``t`` (scalar or array)."""
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            return np.zeros_like(t)[()]
        if self.mode == STEP:
            idx = np.searchsorted(self.times, t, side="left") - 1
            out = np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)
        else:
            out = np.interp(t, self.times, self.values)
            out = np.where(t <= self.times[0], 0.0, out)
        return out[()]

    def right(self, t):
        """Right limit ``A(t+)``."""
        t = np.asarray(t, dtype=float)
        if self.times.size == 0:
            return np.zeros_like(t)[()]
        if self.mode == STEP:
            idx = np.searchsorted(self.times, t, side="right") - 1
            out = np.where(idx >= 0, self.values[np.maximum(idx, 0)], 0.0)
        else:
            out = np.interp(t, self.times, self.values)
            out = np.where(t < self.times[0], 0.0, out)
        return out[()]

    # -- inverses -------------------------------------------------------

    def lower_inverse(self, v, tol=0.0):
        """``inf{t >= 0 : A(t) >= v}`` (vectorised).

        Raises :class:`UnreachableLevelError` when ``v`` exceeds the total work.
        """
        v = np.asarray(v, dtype=float)
        if np.any(v - tol > self.total):
            raise UnreachableLevelError("level %g exceeds total work %g"
                                        % (float(np.max(v)), self.total))
        if self.times.size == 0:
            return np.zeros_like(v)[()]
        w = self.values
        i = np.minimum(np.searchsorted(w, v - tol, side="left"), w.size - 1)
        out = self.times[i]
        if self.mode == LINEAR:
            prev = np.maximum(i - 1, 0)
            dw = w[i] - w[prev]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(dw > 0, (v - w[prev]) / dw, 1.0)
            frac = np.clip(frac, 0.0, 1.0)
            interp = self.times[prev] + frac * (self.times[i] - self.times[prev])
            out = np.where(i > 0, interp, out)
        return np.where(v <= 0, 0.0, out)[()]

    def upper_inverse(self, v, tol=0.0):
        """``sup{t : A(t) <= v}``; ``inf`` once ``v`` reaches the total work."""
        v = np.asarray(v, dtype=float)
        if self.times.size == 0:
            return np.full_like(v, np.inf)[()]
        w = self.values
        i = np.searchsorted(w, v + tol, side="right")
        ic = np.minimum(i, w.size - 1)
        out = self.times[ic]
        if self.mode == LINEAR:
            prev = np.maximum(ic - 1, 0)
            dw = w[ic] - w[prev]
            with np.errstate(divide="ignore", invalid="ignore"):
                frac = np.where(dw > 0, (v - w[prev]) / dw, 0.0)
            frac = np.clip(frac, 0.0, 1.0)
            interp = self.times[prev] + frac * (self.times[ic] - self.times[prev])
            out = np.where(ic > 0, interp, out)
        return np.where(i >= w.size, np.inf, out)[()]

    # -- transforms -----------------------------------------------------

    def scaled(self, time_unit=1.0, work_unit=1.0):
        return CumulativeProcess(self.times * time_unit, self.values * work_unit, self.mode)

    def breakpoints(self):
        return self.times
