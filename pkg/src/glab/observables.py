"""Height function, Gärtner transform, local functionals and averaging operators."""
from __future__ import annotations

import csv
import io
import itertools
import json
import math
from dataclasses import dataclass, replace

import numpy as np

from . import _kernels
from .dynamics import JumpEvent, SpinConfig, Trajectory
from .model import DerivedConstants, ModelParams, continuum_match, derive_constants
from .schedules import ScaleSchedule, make_schedule

__all__ = [
    "HeightField",
    "GartnerField",
    "LocalFunctional",
    "StepPath",
    "ScaleSchedule",
    "make_schedule",
    "init_height",
    "update_height",
    "height_after",
    "origin_flux",
    "height_grid",
    "gartner",
    "stationary_log_drift",
    "calibrate_vN",
    "spatial_average",
    "cutoff_spatial",
    "time_average",
    "running_integral_sup",
    "cutoff_time_average",
    "is_pseudo_gradient",
    "is_weakly_vanishing",
    "builtin_pseudo_gradients",
    "replay_consistency",
    "snapshot_csv",
]

LOG_OVERFLOW = 700.0


# ---------------------------------------------------------------- heights

@dataclass(frozen=True)
class HeightField:
    """Heights ``h_x`` at every site label of the geometry.

    ``values[i]`` belongs to label ``first_label + i``; ``flux`` is the net
    number of particles that crossed the edge ``(0, 1)`` leftward.
    """

    values: np.ndarray
    N: int
    first_label: int
    periodic: bool
    flux: int = 0

    @property
    def origin(self) -> int:
        return -self.first_label

    @property
    def h0(self) -> float:
        return 2.0 * self.flux / math.sqrt(self.N)

    @property
    def labels(self) -> np.ndarray:
        return np.arange(self.first_label, self.first_label + self.values.size)

    def at(self, label: int) -> float:
        return float(self.values[label - self.first_label])

    def increment_errors(self, config: SpinConfig) -> np.ndarray:
        """``|h_x - h_{x-1} - N^{-1/2} eta_x|`` for every label after the first."""
        inc = np.diff(self.values)
        return np.abs(inc - config.spins[1:] / math.sqrt(self.N))


def _profile(spins: np.ndarray, origin: int, base: float, inv_sqrt_n: float) -> np.ndarray:
    n = spins.size
    h = np.empty(n)
    if not 0 <= origin < n:
        raise ValueError("the label 0 must lie in the lattice")
    h[origin] = base
    h[origin + 1 :] = base + inv_sqrt_n * np.cumsum(spins[origin + 1 :])
    # h_{x-1} = h_x - eta_x / sqrt N going left
    left = spins[1 : origin + 1][::-1]
    h[:origin] = (base - inv_sqrt_n * np.cumsum(left))[::-1]
    return h


def init_height(config: SpinConfig, N: int, first_label: int = 0, periodic: bool = False) -> HeightField:
    """Height at time zero with zero flux, ``h_0 = 0``.

    ``first_label`` is the label of ``config.spins[0]``; it defaults to 0
    only for convenience, and label 0 must be inside the lattice.
    """
    inv = 1.0 / math.sqrt(N)
    values = _profile(config.spins.astype(float), -first_label, 0.0, inv)
    return HeightField(values, N, first_label, periodic, 0)


def update_height(height: HeightField, event: JumpEvent) -> HeightField:
    """Apply one logged event.  No-op and neutral events leave the field unchanged."""
    if not event.executed or event.direction == "neutral":
        return height
    sign = 1 if event.direction == "right" else -1
    n = height.values.size
    step = 2.0 / math.sqrt(height.N)
    values = height.values.copy()
    flux = height.flux
    for q in range(event.k):
        idx = event.x + q - height.first_label
        if height.periodic:
            idx %= n
        elif not 0 <= idx < n - 1:
            raise IndexError("event crosses an edge outside the segment")
        values[idx] -= sign * step
        if idx == height.origin:
            flux -= sign
    return replace(height, values=values, flux=flux)


def height_after(traj: Trajectory) -> HeightField:
    """Height profile at the end of a trajectory, rebuilt from flux and spins."""
    geo = traj.params.geometry
    final = traj.final
    flux = origin_flux(traj)
    inv = 1.0 / math.sqrt(traj.params.N)
    values = _profile(final.spins.astype(float), -geo.first_label, 2.0 * flux * inv, inv)
    return HeightField(values, traj.params.N, geo.first_label, geo.periodic, flux)


def origin_flux(traj: Trajectory, until: float | None = None) -> int:
    """Net leftward particle crossings of the edge ``(0, 1)``."""
    ev = traj.events
    if until is not None:
        ev = ev[ev["time"] <= until]
    ev = ev[ev["executed"] == 1]
    geo = traj.params.geometry
    n = geo.n_sites
    x = ev["x"].astype(np.int64) - geo.first_label
    k = ev["k"].astype(np.int64)
    origin = -geo.first_label
    if geo.periodic:
        crosses = ((origin - x) % n) < k
    else:
        crosses = (x <= origin) & (origin < x + k)
    return int(-np.sum(ev["direction"][crosses].astype(np.int64)))


def height_grid(traj: Trajectory, grid) -> np.ndarray:
    """Height profiles (one row per time in the sorted ``grid``) along a trajectory."""
    geo = traj.params.geometry
    inv = 1.0 / math.sqrt(traj.params.N)
    spins = np.array(traj.initial.spins, dtype=np.int8)
    h = init_height(traj.initial, traj.params.N, geo.first_label, geo.periodic).values.copy()
    times, xs, ks, ex, dr = traj.index_columns()
    return _kernels.height_snapshots(
        spins, geo.periodic, -geo.first_label, h, np.ascontiguousarray(times), xs.astype(np.int32),
        ks.astype(np.int16), ex.astype(np.int8), dr.astype(np.int8), inv, np.asarray(grid, dtype=float),
    )


def replay_consistency(traj: Trajectory, lam: float, *, check_every: int = 10_000, tol: float = 1e-9):
    """Replay ``traj`` maintaining ``h`` and ``log Z`` incrementally.

    Returns ``(violations, worst increment error, worst recomputation gap, flux)``.
    """
    geo = traj.params.geometry
    inv = 1.0 / math.sqrt(traj.params.N)
    spins = np.array(traj.initial.spins, dtype=np.int8)
    h = init_height(traj.initial, traj.params.N, geo.first_label, geo.periodic).values.copy()
    _, xs, ks, ex, dr = traj.index_columns()
    out = _kernels.replay_height(
        spins, geo.periodic, -geo.first_label, h, xs.astype(np.int32), ks.astype(np.int16),
        ex.astype(np.int8), dr.astype(np.int8), inv, float(lam), int(check_every), float(tol),
    )
    return int(out[0]), float(out[1]), float(out[2]), int(out[3])


# ---------------------------------------------------------------- Gärtner transform

@dataclass(frozen=True)
class GartnerField:
    """``Z = exp(-lambda h + vN T)``.  ``values`` is ``None`` when exponentiation
    would overflow; ``log_values`` is always available."""

    log_values: np.ndarray
    lam: float
    vN: float
    T: float
    N: int
    values: np.ndarray | None = None

    @property
    def log_domain(self) -> bool:
        return self.values is None

    def narrow_wedge_scaled(self) -> np.ndarray:
        """Wedge normalisation ``(2 lambda)^{-1} N^{1/2} Z``, returned in log form if needed."""
        if self.lam == 0:
            raise ValueError("wedge rescale requires nonzero lambda")
        shift = math.log(0.5 * math.sqrt(self.N) / abs(self.lam))
        logs = self.log_values + shift
        return np.exp(logs) if np.max(logs) < LOG_OVERFLOW else logs


def gartner(height: HeightField, lam, vN: float, T: float) -> GartnerField:
    """Pointwise transform; ``lam`` is a float or ``DerivedConstants``."""
    if isinstance(lam, DerivedConstants):
        lam = lam.lambda_
    if not math.isfinite(vN):
        raise ValueError("vN must be finite")
    logs = -float(lam) * height.values + vN * T
    values = np.exp(logs) if np.max(np.abs(logs), initial=0.0) <= LOG_OVERFLOW else None
    return GartnerField(logs, float(lam), float(vN), float(T), height.N, values)


def _log_drift_enumerated(params: ModelParams, lam: float) -> float:
    """``E[Z_0^{-1} (S Z)_0]`` at density 0 by enumerating the sites ``1-m .. m``."""
    m = params.m
    N = params.N
    a = lam / math.sqrt(N)
    up = math.expm1(2 * a)
    down = math.expm1(-2 * a)
    total = 0.0
    weight = 0.5 ** (2 * m)
    # window labels 1-m .. m, stored at offsets 0 .. 2m-1 (label = offset + 1 - m)
    for pattern in itertools.product((-1, 1), repeat=2 * m):
        drift = 0.0
        for k in range(1, m + 1):
            fast = N**2 * params.alpha[k - 1]
            slow = fast * (1.0 - params.gamma[k - 1] / math.sqrt(N))
            for y in range(1 - k, 1):
                a_spin = pattern[y + m - 1]
                b_spin = pattern[y + k + m - 1]
                if a_spin == 1 and b_spin == -1:
                    drift += fast * up
                elif a_spin == -1 and b_spin == 1:
                    drift += slow * down
        total += weight * drift
    return total


def stationary_log_drift(params: ModelParams, lam: float | None = None) -> float:
    """``-E^{mu_0}[Z_0^{-1} (S Z)_0]`` by exact enumeration.

    This constant removes the mean of the whole generator action on ``log Z``.
    ``lam`` defaults to the closing exponent of :func:`continuum_match`.
    """
    if lam is None:
        lam = continuum_match(params).gartner_lambda
    return -_log_drift_enumerated(params, lam)


def heat_mean(params: ModelParams, lam: float | None = None) -> float:
    """``E^{mu_0}[Z_0^{-1} (L Z)_0]`` for the lattice heat operator of :func:`continuum_match`."""
    match = continuum_match(params)
    if lam is None:
        lam = match.gartner_lambda
    a = lam / math.sqrt(params.N)
    ch = math.cosh(a)
    return math.fsum(
        rate * 2.0 * (ch**k - 1.0) for k, rate in enumerate(match.heat_rates, start=1)
    )


def calibrate_vN(params: ModelParams, constants: DerivedConstants | None = None, lam: float | None = None) -> float:
    """Renormalisation constant for ``Z = exp(-lambda h + vN T)``.

    Chosen so that ``S Z - L Z + vN Z`` has zero mean at density 0, where ``L``
    is the lattice heat operator; the remainder is then a martingale term plus
    mean-zero fluctuations.  It equals the stationary log-drift plus the mean
    of ``Z^{-1} L Z``.
    """
    if lam is None:
        lam = continuum_match(params).gartner_lambda
    if lam == 0:
        return 0.0
    return stationary_log_drift(params, lam) + heat_mean(params, lam)


# ---------------------------------------------------------------- local functionals

CLASSES = ("pseudo-gradient", "weakly-vanishing", "has-pseudo-gradient-factor", "none")


@dataclass(frozen=True)
class LocalFunctional:
    """A function of the spins at ``offset .. offset + width - 1`` (relative labels).

    ``table[code]`` is its value where bit ``q`` of ``code`` is set when the
    spin at ``offset + q`` is +1.
    """

    table: np.ndarray
    width: int
    offset: int = 0
    classification: str = "none"
    bound: float | None = None
    decay_exponent: float | None = None
    name: str = ""

    def __post_init__(self):
        t = np.asarray(self.table, dtype=float)
        if t.shape != (1 << self.width,):
            raise ValueError("table length must be 2^width")
        if self.classification not in CLASSES:
            raise ValueError(f"unknown classification {self.classification!r}")
        object.__setattr__(self, "table", t)
        if self.bound is None:
            object.__setattr__(self, "bound", float(np.max(np.abs(t))))

    @classmethod
    def from_function(cls, fn, width: int, offset: int = 0, **kw) -> "LocalFunctional":
        table = np.array([fn(_spins_of(code, width)) for code in range(1 << width)], dtype=float)
        return cls(table, width, offset, **kw)

    @classmethod
    def constant(cls, c: float, **kw) -> "LocalFunctional":
        return cls(np.array([c, c]), 1, 0, **kw)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.table)))

    def shifted(self, z: int) -> "LocalFunctional":
        return replace(self, offset=self.offset + z)

    def evaluate(self, config, x: int = 0, first_label: int = 0, periodic: bool = False) -> float:
        spins = getattr(config, "spins", config)
        n = len(spins)
        idx = np.arange(self.width) + x + self.offset - first_label
        if periodic:
            idx %= n
        elif idx[0] < 0 or idx[-1] >= n:
            raise IndexError("support escapes the lattice")
        code = int(np.sum((np.asarray(spins)[idx] == 1) << np.arange(self.width)))
        return float(self.table[code])

    def product(self, other: "LocalFunctional") -> "LocalFunctional":
        """Pointwise product on the union window."""
        lo = min(self.offset, other.offset)
        hi = max(self.offset + self.width, other.offset + other.width)
        w = hi - lo

        def fn(s):
            a = self.table[_code(s[self.offset - lo : self.offset - lo + self.width])]
            b = other.table[_code(s[other.offset - lo : other.offset - lo + other.width])]
            return a * b

        return LocalFunctional.from_function(fn, w, lo)

    def on_interval(self, n: int, start: int = 0) -> np.ndarray:
        """Values on all ``2^n`` states of sites ``0..n-1`` with the support placed at ``start``."""
        states = (np.arange(1 << n)[:, None] >> np.arange(n)) & 1
        cols = start + self.offset + np.arange(self.width)
        if cols[0] < 0 or cols[-1] >= n:
            raise IndexError("support escapes the interval")
        codes = (states[:, cols] << np.arange(self.width)).sum(axis=1)
        return self.table[codes]


def _spins_of(code: int, width: int) -> np.ndarray:
    return np.where((code >> np.arange(width)) & 1, 1, -1)


def _code(spins) -> int:
    return int(np.sum((np.asarray(spins) == 1) << np.arange(len(spins))))


def builtin_pseudo_gradients() -> list:
    """Local functionals with vanishing mean on every canonical ensemble."""
    lib = [
        ("grad1", lambda s: s[1] - s[0], 2),
        ("grad2", lambda s: s[2] - s[0], 3),
        ("pair_shift", lambda s: s[0] * s[1] - s[2] * s[3], 4),
        ("pair_gap", lambda s: s[0] * s[1] - s[0] * s[2], 3),
        ("grad_weighted", lambda s: 2 * s[0] - s[1] - s[2], 3),
        ("pair_flip", lambda s: s[0] * s[2] - s[1] * s[3], 4),
        ("triple_shift", lambda s: s[0] * s[1] * s[2] - s[1] * s[2] * s[3], 4),
        ("grad_cubic", lambda s: (s[1] - s[0]) * (1 + s[2] * s[3]), 4),
        ("antisym", lambda s: (s[0] - s[1]) * s[2], 3),
        ("mixed", lambda s: s[0] * s[1] + s[2] - s[1] * s[3] - s[0], 4),
    ]
    return [
        LocalFunctional.from_function(fn, w, 0, classification="pseudo-gradient", name=name)
        for name, fn, w in lib
    ]


def is_pseudo_gradient(g: LocalFunctional, tol: float = 1e-12) -> bool:
    """Exact check that every canonical mean over the support vanishes."""
    if g.width > 12:
        raise ValueError("support too large for enumeration")
    counts = np.array([bin(c).count("1") for c in range(1 << g.width)])
    for n_up in range(g.width + 1):
        if abs(np.mean(g.table[counts == n_up])) > tol:
            return False
    return True


def is_weakly_vanishing(w: LocalFunctional, N: int, beta: float | None = None, tol: float = 1e-12) -> bool:
    if w.width > 12:
        raise ValueError("support too large for enumeration")
    beta = w.decay_exponent if beta is None else beta
    if beta is not None and beta > 0 and w.sup_norm <= N ** (-beta):
        return True
    return abs(float(np.mean(w.table))) <= tol and w.sup_norm <= w.bound + tol


# ---------------------------------------------------------------- averaging

def spatial_average(g: LocalFunctional, config, x: int, J: int, *, m: int, first_label: int = 0, periodic: bool = False) -> float:
    """Mean of ``g`` over the ``J`` translates shifted left by ``3 l m`` for ``l = 1..J``."""
    if J < 1:
        raise ValueError("J must be positive")
    return math.fsum(g.evaluate(config, x - 3 * l * m, first_label, periodic) for l in range(1, J + 1)) / J


def cutoff_threshold(N: int, eps_x1: float, beta_x: float | None = None) -> float:
    beta_x = 1.0 / 3.0 + eps_x1 if beta_x is None else beta_x
    return N ** (-0.5 * beta_x + 0.5 * eps_x1)


def cutoff_spatial(value, N: int, eps_x1: float, beta_x: float | None = None):
    """Keep ``value`` where ``|value|`` is at most the large-deviation threshold, else 0."""
    thr = cutoff_threshold(N, eps_x1, beta_x)
    v = np.asarray(value, dtype=float)
    out = np.where(np.abs(v) <= thr, v, 0.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class StepPath:
    """Right-continuous piecewise-constant path: ``values[i]`` on ``[times[i], times[i+1])``,
    the last value holding until ``horizon``."""

    times: np.ndarray
    values: np.ndarray
    horizon: float

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.size == 0 or t.shape != v.shape or t[0] != 0.0 or np.any(np.diff(t) < 0):
            raise ValueError("path needs sorted times starting at 0")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, c: float, horizon: float) -> "StepPath":
        return cls(np.array([0.0]), np.array([c]), horizon)

    def value_at(self, t: float) -> float:
        return float(self.values[np.searchsorted(self.times, t, side="right") - 1])

    def integral(self, a: float, b: float) -> float:
        """Exact ``int_a^b`` of the path."""
        if b > self.horizon * (1 + 1e-12) or a < 0:
            raise ValueError("insufficient horizon")
        return float(self._cumulative(np.array([b]))[0] - self._cumulative(np.array([a]))[0])

    def _cumulative(self, s: np.ndarray) -> np.ndarray:
        t, v = self.times, self.values
        seg = np.diff(np.append(t, max(self.horizon, t[-1])))
        prefix = np.concatenate([[0.0], np.cumsum(v * seg)])
        i = np.searchsorted(t, s, side="right") - 1
        return prefix[i] + v[i] * (s - t[i])


def time_average(path: StepPath, tau: float, t: float = 0.0) -> float:
    """``tau^{-1} int_t^{t+tau}`` of the path; the current value when ``tau = 0``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if t + tau > path.horizon * (1 + 1e-12):
        raise ValueError("insufficient horizon")
    if tau == 0:
        return path.value_at(t)
    return path.integral(t, t + tau) / tau


def running_integral_sup(path: StepPath, start: float, tau: float) -> float:
    """``sup_{0<=s<=tau} (s/tau) |A_s|`` from ``start``, i.e. ``sup |int_start^{start+s}| / tau``.

    The integral is piecewise linear in ``s``, so the sup is attained at a
    breakpoint or at an endpoint.
    """
    if tau <= 0:
        return abs(path.value_at(start)) if tau == 0 else 0.0
    inner = path.times[(path.times > start) & (path.times < start + tau)]
    pts = np.concatenate([[start], inner, [start + tau]])
    base = path._cumulative(np.array([start]))[0]
    return float(np.max(np.abs(path._cumulative(pts) - base))) / tau


def cutoff_time_average(
    path: StepPath,
    tau: float,
    beta_plus: float,
    beta_minus: float,
    N: int,
    t_shift: float = 0.0,
    variant: int = 1,
    t: float = 0.0,
    upper_constant: float = 1.0,
) -> float:
    """Time average with the upper running-sup cutoff ``c N^{-beta_minus}`` and
    the lower trigger ``N^{-beta_plus}``.

    Variant 1 shifts the average and the upper cutoff by ``t_shift``; variant 2
    shifts only the lower trigger.
    """
    if variant not in (1, 2):
        raise ValueError("variant must be 1 or 2")
    shifted = t + t_shift
    avg_at = shifted if variant == 1 else t
    upper_at = shifted if variant == 1 else t
    lower_at = t if variant == 1 else shifted
    upper = running_integral_sup(path, upper_at, tau) <= upper_constant * N ** (-beta_minus)
    lower = running_integral_sup(path, lower_at, tau) >= N ** (-beta_plus)
    if not (upper and lower):
        return 0.0
    return time_average(path, tau, avg_at)


# ---------------------------------------------------------------- export

def snapshot_csv(config: SpinConfig, height: HeightField, field_z: GartnerField, *, seed: int, flagged_vN: bool = True):
    """Return ``(csv_text, manifest_dict)`` for a field snapshot."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "eta", "h", "Z"])
    zs = field_z.values if field_z.values is not None else field_z.log_values
    for x, eta, h, z in zip(height.labels, config.spins, height.values, zs):
        w.writerow([int(x), int(eta), repr(float(h)), repr(float(z))])
    manifest = {
        "N": height.N,
        "lambda": field_z.lam,
        "vN": field_z.vN,
        "T": field_z.T,
        "seed": int(seed),
        "Z_column": "log" if field_z.log_domain else "linear",
        "vN_source": "calibrated (heat-corrected stationary log-drift)" if flagged_vN else "user",
    }
    return buf.getvalue(), manifest


def manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2)
