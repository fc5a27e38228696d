"""Comparators: KS distance, weighted path norms and the time-regularity fit."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["ks_distance", "WeightedNorm", "norm_eval", "sup_increments", "holder_time_exponent", "pooled_moment_gap"]


def ks_distance(a, b) -> float:
    """Two-sample Kolmogorov-Smirnov statistic ``sup |F_a - F_b|``."""
    a = np.sort(np.asarray(a, dtype=float))
    b = np.sort(np.asarray(b, dtype=float))
    if a.size == 0 or b.size == 0:
        raise ValueError("samples must be nonempty")
    pts = np.concatenate([a, b])
    fa = np.searchsorted(a, pts, side="right") / a.size
    fb = np.searchsorted(b, pts, side="right") / b.size
    return float(np.max(np.abs(fa - fb)))


@dataclass(frozen=True)
class WeightedNorm:
    """``sup``: plain sup over the path; ``discrete``: sup over the sample times only;
    ``nw``: ``sup_s s^{1/2 - eps_nw} sup_x |F_s|``."""

    kind: str = "sup"
    eps_nw: float = 0.05

    def __post_init__(self):
        if self.kind not in ("sup", "discrete", "nw"):
            raise ValueError(f"unknown norm kind {self.kind!r}")


def norm_eval(times, fields, norm: WeightedNorm, horizon: float | None = None) -> float:
    """Norm of a piecewise-constant field path.

    ``fields[i]`` holds on ``[times[i], times[i+1])`` and the last row up to
    ``horizon``.  For ``nw`` the weight increases in time, so on each piece the
    weighted sup is reached at the right end.
    """
    times = np.asarray(times, dtype=float)
    fields = np.asarray(fields, dtype=float).reshape(times.size, -1)
    site_sup = np.max(np.abs(fields), axis=1)
    if norm.kind in ("sup", "discrete"):
        return float(site_sup.max())
    horizon = times[-1] if horizon is None else horizon
    right = np.append(times[1:], horizon)
    return float(np.max(right ** (0.5 - norm.eps_nw) * site_sup))


def sup_increments(grid_fields, lags) -> np.ndarray:
    """``sup_{t,x} |F_t - F_{t - lag}|`` for integer lags on a uniform grid.

    ``grid_fields`` has shape ``(times, sites)`` or ``(replicas, times, sites)``;
    the result has one row per replica.
    """
    f = np.asarray(grid_fields, dtype=float)
    if f.ndim == 2:
        f = f[None]
    out = np.empty((f.shape[0], len(lags)))
    for j, lag in enumerate(lags):
        out[:, j] = np.max(np.abs(f[:, lag:, :] - f[:, :-lag, :]), axis=(1, 2))
    return out


def holder_time_exponent(grid_fields, dt: float, lags) -> tuple:
    """Least-squares slope of ``log E sup|increment|`` against ``log tau``.

    Returns ``(slope, taus, mean increments)``.
    """
    lags = list(lags)
    if len(lags) < 4:
        raise ValueError("need at least four lags")
    inc = sup_increments(grid_fields, lags).mean(axis=0)
    taus = np.asarray(lags, dtype=float) * dt
    if np.any(inc <= 0):
        return 0.0, taus, inc
    slope = float(np.polyfit(np.log(taus), np.log(inc), 1)[0])
    return slope, taus, inc


def pooled_moment_gap(a, b, power: int) -> tuple:
    """``(|E a^p - E b^p|, pooled standard error)``."""
    a = np.asarray(a, dtype=float) ** power
    b = np.asarray(b, dtype=float) ** power
    gap = abs(a.mean() - b.mean())
    se = math.sqrt(a.var(ddof=1) / a.size + b.var(ddof=1) / b.size)
    return float(gap), float(se)
