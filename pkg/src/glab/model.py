"""Model parameters, lattice geometries and derived constants.

The process lives on a finite lattice: either a segment with free ends (bonds
that would leave it are absent) or a torus with periodic addition.  Spins take
values in {-1, +1} with +1 marking a particle.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "Segment",
    "Torus",
    "ModelParams",
    "DerivedConstants",
    "AsymmetryDeviation",
    "ValidationReport",
    "ContinuumMatch",
    "InvalidParamsError",
    "derive_constants",
    "mean_invariance_residual",
    "asymmetry_deviation",
    "validate_params",
    "jump_rate",
    "continuum_match",
]


class InvalidParamsError(ValueError):
    """Raised when parameters cannot define a Markov generator."""


@dataclass(frozen=True)
class Segment:
    """Sites ``left..right`` inclusive, no wrap-around bonds."""

    left: int
    right: int

    periodic = False

    def __post_init__(self):
        if self.right < self.left:
            raise ValueError("segment must contain at least one site")

    @classmethod
    def centered(cls, L: int) -> "Segment":
        return cls(-L, L)

    @property
    def n_sites(self) -> int:
        return self.right - self.left + 1

    @property
    def first_label(self) -> int:
        return self.left

    @property
    def labels(self) -> np.ndarray:
        return np.arange(self.left, self.right + 1)

    def index(self, label: int) -> int:
        if not self.left <= label <= self.right:
            raise IndexError(f"site {label} outside segment [{self.left}, {self.right}]")
        return label - self.left

    def partner(self, label: int, k: int) -> int:
        """Label of ``label + k``; raises if it leaves the segment."""
        self.index(label)
        return self.left + self.index(label + k)

    def bond_count(self, k: int) -> int:
        return max(self.n_sites - k, 0)


@dataclass(frozen=True)
class Torus:
    """``L`` sites with periodic addition.

    Labels run over ``first_label .. first_label + L - 1`` (default centres
    label 0, so labels are ``-(L//2) .. L - L//2 - 1``).  The fundamental domain
    used for height profiles is exactly this label range.
    """

    L: int
    first_label: int | None = None

    periodic = True

    def __post_init__(self):
        if self.L < 1:
            raise ValueError("torus needs at least one site")
        if self.first_label is None:
            object.__setattr__(self, "first_label", -(self.L // 2))

    @property
    def n_sites(self) -> int:
        return self.L

    @property
    def labels(self) -> np.ndarray:
        return np.arange(self.first_label, self.first_label + self.L)

    def index(self, label: int) -> int:
        return (label - self.first_label) % self.L

    def partner(self, label: int, k: int) -> int:
        return self.first_label + self.index(label + k)

    def bond_count(self, k: int) -> int:
        return self.L


Geometry = Segment | Torus


@dataclass(frozen=True)
class ModelParams:
    """Scale ``N``, jump coefficients and lattice geometry.

    ``alpha[k-1]`` and ``gamma[k-1]`` are the symmetric and asymmetric
    coefficients of range ``k``; the maximal range is ``len(alpha)``.
    """

    N: int
    alpha: tuple
    gamma: tuple
    geometry: Geometry = field(default_factory=lambda: Torus(16))
    assumption2_constant: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "alpha", tuple(float(a) for a in self.alpha))
        object.__setattr__(self, "gamma", tuple(float(g) for g in self.gamma))
        if len(self.alpha) != len(self.gamma):
            raise InvalidParamsError("alpha and gamma must have the same length")
        if len(self.alpha) < 1:
            raise InvalidParamsError("maximal range must be at least 1")
        if int(self.N) != self.N or self.N < 1:
            raise InvalidParamsError("N must be a positive integer")

    @property
    def m(self) -> int:
        return len(self.alpha)

    @property
    def alpha_array(self) -> np.ndarray:
        return np.asarray(self.alpha)

    @property
    def gamma_array(self) -> np.ndarray:
        return np.asarray(self.gamma)

    @property
    def asym(self) -> np.ndarray:
        """Per-range asymmetry ``N^{-1/2} gamma_k``."""
        return self.gamma_array / math.sqrt(self.N)

    def with_geometry(self, geometry: Geometry) -> "ModelParams":
        return ModelParams(self.N, self.alpha, self.gamma, geometry, self.assumption2_constant)

    def with_N(self, N: int) -> "ModelParams":
        return ModelParams(N, self.alpha, self.gamma, self.geometry, self.assumption2_constant)

    def to_dict(self) -> dict:
        geo = self.geometry
        if isinstance(geo, Torus):
            gd = {"kind": "torus", "L": geo.L, "first_label": geo.first_label}
        else:
            gd = {"kind": "segment", "left": geo.left, "right": geo.right}
        return {
            "N": self.N,
            "alpha": list(self.alpha),
            "gamma": list(self.gamma),
            "geometry": gd,
            "assumption2_constant": self.assumption2_constant,
        }


@dataclass(frozen=True)
class DerivedConstants:
    alpha_bar: float
    alpha_prime: float
    lambda_: float
    gamma_bar: tuple
    alpha_gamma_bar: tuple
    undefined_ranges: tuple = ()

    @property
    def lam(self) -> float:
        return self.lambda_


@dataclass(frozen=True)
class AsymmetryDeviation:
    deviation: float
    threshold: float

    @property
    def satisfied(self) -> bool:
        return self.deviation <= self.threshold


@dataclass(frozen=True)
class ValidationReport:
    rates_nonnegative: bool
    deviation: AsymmetryDeviation
    geometry_ok: bool
    messages: tuple = ()

    @property
    def ok(self) -> bool:
        return self.rates_nonnegative and self.geometry_ok


def derive_constants(params: ModelParams) -> DerivedConstants:
    a = params.alpha_array
    g = params.gamma_array
    k = np.arange(1, params.m + 1, dtype=float)
    alpha_bar = float(np.sum(k * k * a))
    alpha_prime = float(np.sum(k * a * g))
    lam = alpha_prime / alpha_bar
    # sum_{l >= k} (l - k) alpha_l via suffix sums
    s0 = np.cumsum(a[::-1])[::-1]
    s1 = np.cumsum((k * a)[::-1])[::-1]
    tail = s1 - k * s0
    prod = 2.0 * lam * tail / k + lam * a
    gbar = np.zeros_like(prod)
    pos = a > 0
    gbar[pos] = prod[pos] / a[pos]
    undefined = tuple(int(i) for i in k[~pos])
    return DerivedConstants(
        alpha_bar=alpha_bar,
        alpha_prime=alpha_prime,
        lambda_=lam,
        gamma_bar=tuple(gbar.tolist()),
        alpha_gamma_bar=tuple(prod.tolist()),
        undefined_ranges=undefined,
    )


def mean_invariance_residual(params: ModelParams, constants: DerivedConstants | None = None) -> float:
    """``|sum k a_k g_k - sum k (a g-bar)_k|`` using the defined products."""
    c = constants or derive_constants(params)
    k = np.arange(1, params.m + 1, dtype=float)
    lhs = math.fsum(k * params.alpha_array * params.gamma_array)
    rhs = math.fsum(k * np.asarray(c.alpha_gamma_bar))
    return abs(lhs - rhs)


def asymmetry_deviation(params: ModelParams, constants: DerivedConstants | None = None) -> AsymmetryDeviation:
    c = constants or derive_constants(params)
    k = np.arange(1, params.m + 1, dtype=float)
    a = params.alpha_array
    dev = float(np.sum(k * a * np.abs(params.gamma_array - np.asarray(c.gamma_bar))))
    return AsymmetryDeviation(dev, params.assumption2_constant / math.sqrt(params.N))


def validate_params(params: ModelParams) -> ValidationReport:
    """Check the parameters; raise :class:`InvalidParamsError` on fatal problems."""
    a = params.alpha_array
    if np.any(a < 0):
        raise InvalidParamsError("alpha coefficients must be nonnegative")
    if abs(a.sum() - 1.0) > 1e-12:
        raise InvalidParamsError(f"alpha must sum to 1 (got {a.sum()!r})")
    if a[0] <= 0:
        raise InvalidParamsError("alpha_1 must be positive")
    worst = float(np.max(np.abs(params.asym)))
    if worst > 1.0 + 1e-15:
        raise InvalidParamsError(
            f"negative jump rate: N^-1/2 |gamma_k| = {worst:.6g} > 1"
        )
    msgs = []
    n = params.geometry.n_sites
    geometry_ok = n >= 2 * params.m + 1
    if not geometry_ok:
        msgs.append(f"lattice has {n} sites, fewer than 2m+1 = {2 * params.m + 1}")
    dev = asymmetry_deviation(params)
    if not dev.satisfied:
        msgs.append(f"asymmetry deviation {dev.deviation:.3g} exceeds {dev.threshold:.3g}")
    return ValidationReport(True, dev, geometry_ok, tuple(msgs))


def jump_rate(config, x: int, k: int, params: ModelParams) -> float:
    """Firing rate of the swap channel on the bond ``(x, x + k)``.

    ``x`` is a site label.  On a segment the partner must lie inside.
    """
    if not 1 <= k <= params.m:
        raise IndexError(f"range {k} outside 1..{params.m}")
    geo = params.geometry
    spins = getattr(config, "spins", config)
    i = geo.index(x)
    j = geo.index(geo.partner(x, k))
    base = params.N ** 2 * params.alpha[k - 1]
    if spins[i] == -1 and spins[j] == 1:
        return base * (1.0 - params.gamma[k - 1] / math.sqrt(params.N))
    return base


@dataclass(frozen=True)
class ContinuumMatch:
    """Effective constants linking the lattice dynamics to a continuum SHE.

    ``gartner_lambda`` is the exponent used in ``Z = exp(-lambda h + v T)``;
    ``heat_rates[k-1]`` is the per-range coefficient of the lattice heat
    operator seen by ``Z``; ``she_alpha``/``she_lambda`` parametrise the
    continuum equation ``dZ = (a/2) Z'' dT - l sqrt(a) Z dW``.
    """

    gartner_lambda: float
    heat_rates: tuple
    she_alpha: float
    she_lambda: float


def continuum_match(params: ModelParams) -> ContinuumMatch:
    """Constants under which the Gärtner transform closes for these rates.

    Each bond fires at ``N^2 a_k`` with the hole-particle pattern slowed by
    ``1 - N^{-1/2} g_k``.  For nearest-neighbour jumps the transform closes
    exactly when ``exp(2 lambda / sqrt N) = 1 - N^{-1/2} g_1``; the same
    formula with the effective asymmetry ``lambda`` is used for longer ranges.
    The heat coefficient of range ``k`` is the geometric mean of the two
    directed rates, and the continuum noise strength comes from the mean
    spatially integrated covariance of the ``log Z`` increments at density
    1/2 (a range-``k`` jump moves ``k`` consecutive heights together).
    """
    c = derive_constants(params)
    N = params.N
    sq = math.sqrt(N)
    ratio = 1.0 - c.lambda_ / sq
    if ratio <= 0:
        raise InvalidParamsError("asymmetry too strong for a finite Gärtner exponent")
    lam_z = 0.5 * sq * math.log(ratio)
    a_step = lam_z / sq
    k = np.arange(1, params.m + 1, dtype=float)
    fast = N**2 * params.alpha_array
    slow = fast * (1.0 - params.asym)
    heat = np.sqrt(fast * slow)
    she_alpha = 2.0 * float(np.sum(heat * k * k)) / N**2
    qv = float(np.sum(k * k * 0.25 * (fast * np.expm1(2 * a_step) ** 2 + slow * np.expm1(-2 * a_step) ** 2)))
    noise = math.sqrt(qv / N)
    she_lambda = math.copysign(noise / math.sqrt(she_alpha), c.lambda_) if she_alpha > 0 else 0.0
    return ContinuumMatch(lam_z, tuple(heat.tolist()), she_alpha, she_lambda)
