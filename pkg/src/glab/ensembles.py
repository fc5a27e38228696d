"""Exact ensemble computations on small intervals and tori.

States are integer codes: bit ``i`` set means the spin at site ``i`` is +1.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .dynamics import LawVector, generator_matrix
from .model import ModelParams, Torus
from .observables import is_pseudo_gradient

__all__ = [
    "EnsembleSpec",
    "GeneratorMatrix",
    "enumerate_hyperplane",
    "build_generator",
    "relative_entropy",
    "dirichlet_form",
    "spectral_gap",
    "lsi_ratio",
    "HMinusOne",
    "h_minus_one_norm",
    "kv_lhs_exact",
    "kv_sweep",
    "disjoint_average_bound_check",
    "pgf_ratio",
    "azuma_tail_check",
    "project_density",
    "entropy_production_trajectory",
    "EntropyCurve",
]

MAX_SITES = 14


def _popcount(codes: np.ndarray) -> np.ndarray:
    c = np.asarray(codes, dtype=np.int64)
    out = np.zeros_like(c)
    while np.any(c):
        out += c & 1
        c = c >> 1
    return out


def _spins(codes: np.ndarray, n: int) -> np.ndarray:
    return np.where((np.asarray(codes)[:, None] >> np.arange(n)) & 1, 1, -1).astype(np.int8)


def _particles_for(n: int, rho: float) -> int:
    k = n * (1 + rho) / 2
    if abs(k - round(k)) > 1e-9 or not 0 <= round(k) <= n:
        raise ValueError(f"density {rho} infeasible on {n} sites")
    return int(round(k))


def enumerate_hyperplane(n: int, rho: float) -> np.ndarray:
    """Spin arrays (one row per state) of all configurations with mean spin ``rho``."""
    return _spins(_hyperplane_codes(n, _particles_for(n, rho)), n)


def _hyperplane_codes(n: int, ups: int) -> np.ndarray:
    codes = np.arange(1 << n, dtype=np.int64)
    return codes[_popcount(codes) == ups]


@dataclass(frozen=True)
class EnsembleSpec:
    n: int
    kind: str
    rho: float
    codes: np.ndarray
    weights: np.ndarray

    @classmethod
    def canonical(cls, n: int, rho: float | None = None, *, ups: int | None = None) -> "EnsembleSpec":
        if n > MAX_SITES:
            raise ValueError(f"at most {MAX_SITES} sites")
        if ups is None:
            ups = _particles_for(n, rho)
        codes = _hyperplane_codes(n, ups)
        return cls(n, "canonical", 2 * ups / n - 1, codes, np.full(codes.size, 1.0 / codes.size))

    @classmethod
    def grand(cls, n: int, rho: float) -> "EnsembleSpec":
        if n > MAX_SITES:
            raise ValueError(f"at most {MAX_SITES} sites")
        codes = np.arange(1 << n, dtype=np.int64)
        up = (1 + rho) / 2
        k = _popcount(codes)
        return cls(n, "grand", rho, codes, up**k * (1 - up) ** (n - k))

    @property
    def size(self) -> int:
        return self.codes.size

    @property
    def spins(self) -> np.ndarray:
        return _spins(self.codes, self.n)

    def index_of(self, codes) -> np.ndarray:
        idx = np.searchsorted(self.codes, codes)
        return idx

    def expect(self, values) -> float:
        return float(np.dot(self.weights, values))

    def evaluate(self, functional, start: int = 0) -> np.ndarray:
        """Values of a ``LocalFunctional`` (support placed at ``start``) on every state."""
        table = functional.on_interval(self.n, start)
        return table[self.codes]


def _pairs(n: int, alpha, periodic: bool):
    """Unordered site pairs ``(x, x+k)`` with their weight; wrap pairs only when periodic."""
    out = []
    for k, a in enumerate(alpha, start=1):
        if a == 0:
            continue
        for x in range(n):
            y = x + k
            if y >= n:
                if not periodic or k >= n:
                    continue
                y %= n
            out.append((x, y, a))
    return out


def _swap(codes: np.ndarray, x: int, y: int) -> np.ndarray:
    bx = (codes >> x) & 1
    by = (codes >> y) & 1
    flip = (bx ^ by) * ((1 << x) | (1 << y))
    return codes ^ flip


@dataclass(frozen=True)
class GeneratorMatrix:
    """Dense generator on an ensemble's states; ``matrix @ f`` is the action on functions."""

    matrix: np.ndarray
    ensemble: EnsembleSpec
    full: bool
    periodic: bool
    scaled: bool


def build_generator(
    ensemble: EnsembleSpec,
    alpha,
    gamma=None,
    *,
    N: int | None = None,
    full: bool = True,
    periodic: bool = True,
) -> GeneratorMatrix:
    """Full dynamic (asymmetric, optional wrap) or the symmetric reduction.

    With ``full=False`` the asymmetry is dropped and wrap bonds are removed
    regardless of ``periodic``.  ``N=None`` strips the ``N^2`` speed factor
    (and is only allowed for the symmetric reduction).
    """
    n = ensemble.n
    if full and N is None:
        raise ValueError("the full dynamic needs N")
    speed = 1.0 if N is None else float(N) ** 2
    gamma = gamma if gamma is not None else [0.0] * len(alpha)
    codes = ensemble.codes
    K = codes.size
    M = np.zeros((K, K))
    rows = np.arange(K)
    for k, a in enumerate(alpha, start=1):
        if a == 0:
            continue
        g = gamma[k - 1] / math.sqrt(N) if (full and N is not None) else 0.0
        for x in range(n):
            y = x + k
            if y >= n:
                if not (full and periodic) or k >= n:
                    continue
                y %= n
            bx = (codes >> x) & 1
            by = (codes >> y) & 1
            moving = bx != by
            rate = np.full(K, speed * a)
            rate[(bx == 0) & (by == 1)] *= 1.0 - g
            target = ensemble.index_of(_swap(codes, x, y))
            np.add.at(M, (rows[moving], target[moving]), rate[moving])
            M[rows[moving], rows[moving]] -= rate[moving]
    return GeneratorMatrix(M, ensemble, full, full and periodic, N is not None)


# ---------------------------------------------------------------- entropy and Dirichlet form

def relative_entropy(f, ensemble: EnsembleSpec) -> float:
    """``E[f log f]`` with ``0 log 0 = 0``."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("density must be nonnegative")
    pos = f > 0
    return float(np.dot(ensemble.weights[pos], f[pos] * np.log(f[pos])))


def dirichlet_form(f, ensemble: EnsembleSpec, alpha, periodic: bool = False) -> float:
    """``(1/2) sum_{x<y} a_{y-x} E[(sqrt f(eta^{xy}) - sqrt f(eta))^2]``."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0):
        raise ValueError("density must be nonnegative")
    root = np.sqrt(f)
    codes = ensemble.codes
    total = 0.0
    for x, y, a in _pairs(ensemble.n, alpha, periodic):
        partner = ensemble.index_of(_swap(codes, x, y))
        total += a * np.dot(ensemble.weights, (root[partner] - root) ** 2)
    return 0.5 * total


def lsi_ratio(f, ensemble: EnsembleSpec, alpha) -> float:
    """``H(f) / (n^2 D(f))``; 0 for the constant density."""
    h = relative_entropy(f, ensemble)
    d = dirichlet_form(f, ensemble, alpha)
    if d <= 1e-300:
        if h > 1e-12:
            raise ArithmeticError("zero Dirichlet form with positive entropy")
        return 0.0
    return h / (ensemble.n**2 * d)


def spectral_gap(sizes, alpha, ups=None) -> list:
    """Rows ``(n, ups, gap, gap * n^2)`` for the symmetric dynamic on an interval.

    ``ups`` is a callable ``n -> particle count`` (default ``n // 2``).
    """
    rows = []
    for n in sizes:
        k = ups(n) if ups is not None else n // 2
        ens = EnsembleSpec.canonical(n, ups=k)
        M = build_generator(ens, alpha, full=False).matrix
        ev = np.sort(np.linalg.eigvalsh(-0.5 * (M + M.T)))
        gap = float(ev[1]) if ev.size > 1 else math.inf
        rows.append((n, k, gap, gap * n * n))
    return rows


# ---------------------------------------------------------------- H^{-1}

@dataclass(frozen=True)
class HMinusOne:
    value: float
    lower_bound: float
    mean_zero: bool


def _sym_parts(gen: GeneratorMatrix):
    w = gen.ensemble.weights
    sq = np.sqrt(w)
    # -S is self-adjoint in L^2(mu): conjugate by sqrt(mu) to a symmetric matrix
    A = -(sq[:, None] * gen.matrix / sq[None, :])
    A = 0.5 * (A + A.T)
    return A, sq


def h_minus_one_norm(phi, ensemble: EnsembleSpec, sbar: GeneratorMatrix, *, samples: int = 64, seed: int = 0, refine: int = 200) -> HMinusOne:
    """``<phi, (-S)^+ phi>_mu`` by eigendecomposition, plus an independent
    variational lower bound from random test functions refined by conjugate
    gradients on ``2 E[phi psi] + E[psi S psi]``."""
    phi = np.asarray(phi, dtype=float)
    w = ensemble.weights
    mean = float(np.dot(w, phi))
    if abs(mean) > 1e-10 * max(1.0, float(np.max(np.abs(phi)))):
        return HMinusOne(math.inf, math.inf, False)
    A, sq = _sym_parts(sbar)
    vals, vecs = np.linalg.eigh(A)
    coef = vecs.T @ (sq * phi)
    keep = vals > 1e-10
    value = float(np.sum(coef[keep] ** 2 / vals[keep]))
    lower = _variational_lower(phi, w, sbar.matrix, samples, seed, refine)
    return HMinusOne(value, lower, True)


def _variational_lower(phi, w, S, samples, seed, refine) -> float:
    rng = np.random.default_rng(seed)
    Q = -(w[:, None] * S)  # E[psi (-S) psi] = psi^T Q psi
    Q = 0.5 * (Q + Q.T)
    b = w * phi

    def best_scaled(psi):
        num = float(b @ psi)
        den = float(psi @ Q @ psi)
        return num * num / den if den > 1e-300 else 0.0

    best, best_psi = 0.0, None
    for _ in range(samples):
        psi = rng.standard_normal(phi.size)
        val = best_scaled(psi)
        if val > best:
            best, best_psi = val, psi
    # conjugate gradients on Q psi = b starting from the best sample; every
    # iterate is a valid test function, so its value stays a lower bound
    psi = best_psi if best_psi is not None else np.zeros_like(phi)
    r = b - Q @ psi
    p = r.copy()
    for _ in range(refine):
        rr = float(r @ r)
        if rr < 1e-30:
            break
        Qp = Q @ p
        denom = float(p @ Qp)
        if denom <= 1e-300:
            break
        step = rr / denom
        psi = psi + step * p
        r = r - step * Qp
        p = r + (float(r @ r) / rr) * p
        best = max(best, best_scaled(psi))
    return best


def _kv_weight(lam: np.ndarray, tau: float) -> np.ndarray:
    """``(2 / tau^2) int_0^tau (tau - s) exp(lam s) ds`` for complex ``lam``."""
    z = lam * tau
    out = np.empty_like(z, dtype=complex)
    small = np.abs(z) < 1e-3
    zs = z[small]
    out[small] = 1 + zs / 3 + zs**2 / 12 + zs**3 / 60
    zb = z[~small]
    out[~small] = 2 * (np.expm1(zb) - zb) / zb**2
    return out


def kv_lhs_exact(phi, tau: float, gen: GeneratorMatrix) -> float:
    """``E|tau^{-1} int_0^tau phi(eta_s) ds|^2`` at stationarity of the ensemble."""
    phi = np.asarray(phi, dtype=float)
    w = gen.ensemble.weights
    if tau == 0:
        return float(np.dot(w, phi * phi))
    lam, V = scipy.linalg.eig(gen.matrix)
    right = np.linalg.solve(V, phi.astype(complex))
    left = (w * phi) @ V
    return float(np.real(np.sum(left * right * _kv_weight(lam, tau))))


def kv_sweep(functionals, sizes, taus, alpha, gamma, N: int) -> list:
    """Rows ``(name, n, ups, tau, kv_lhs * tau / ||phi||^2_{-1})`` on tori."""
    rows = []
    for n in sizes:
        for ups in range(1, n):
            ens = EnsembleSpec.canonical(n, ups=ups)
            G = build_generator(ens, alpha, gamma, N=N, full=True, periodic=True)
            S = build_generator(ens, alpha, N=N, full=False)
            for g in functionals:
                phi = ens.evaluate(g)
                norm = h_minus_one_norm(phi, ens, S, samples=0, refine=0).value
                if norm <= 1e-14:
                    continue
                for tau in taus:
                    rows.append((g.name, n, ups, tau, kv_lhs_exact(phi, tau, G) * tau / norm))
    return rows


def _sup_over_densities(n, fn):
    return max(fn(EnsembleSpec.canonical(n, ups=k)) for k in range(0, n + 1))


def disjoint_average_bound_check(phis, starts, n: int, alpha) -> dict:
    """Both sides of the disjoint-support averaging bound on an interval of ``n`` sites.

    ``phis[j]`` is placed at ``starts[j]``; supports must be disjoint.
    """
    spans = sorted((s + g.offset, s + g.offset + g.width) for g, s in zip(phis, starts))
    for (a0, a1), (b0, _) in zip(spans, spans[1:]):
        if b0 < a1:
            raise ValueError("overlapping supports")
    J = len(phis)

    def norm_on(ens, values):
        S = build_generator(ens, alpha, full=False)
        return h_minus_one_norm(values, ens, S, samples=0, refine=0).value

    def lhs(ens):
        avg = sum(ens.evaluate(g, s) for g, s in zip(phis, starts)) / J
        return norm_on(ens, avg)

    left = _sup_over_densities(n, lhs)
    singles = [_sup_over_densities(n, lambda ens, g=g, s=s: norm_on(ens, ens.evaluate(g, s))) for g, s in zip(phis, starts)]
    right = float(np.mean(singles)) / J
    return {"J": J, "lhs": left, "rhs": right, "ratio": left / right if right > 0 else math.inf, "single_norms": singles}


def pgf_ratio(g, factor_sites, n: int, alpha, start: int = 0) -> float:
    """``sup_rho ||g f||_{-1} / sup_rho ||g||_{-1}`` with ``f`` a product of spins
    at ``factor_sites``; the product's norm is taken on ``n`` sites and the
    factor's on its own support."""
    sites = np.asarray(factor_sites)

    def norm(ens, values):
        S = build_generator(ens, alpha, full=False)
        return h_minus_one_norm(values, ens, S, samples=0, refine=0).value

    def prod_norm(ens):
        f = np.prod(ens.spins[:, sites], axis=1)
        return norm(ens, ens.evaluate(g, start) * f)

    top = _sup_over_densities(n, prod_norm)
    base = _sup_over_densities(g.width, lambda ens: norm(ens, ens.evaluate(g.shifted(-g.offset))))
    return math.sqrt(top / base) if base > 0 else math.inf


def azuma_tail_check(phis, starts, n: int, rho: float, c_grid, bound: float | None = None) -> dict:
    """Exact tails ``P[|J^{-1} sum phi_j| >= C]`` on the canonical hyperplane against
    ``2 exp(-J C^2 / (2 B^2))``.  ``rigorous`` reports whether every ``phi_j``
    has vanishing canonical means, the hypothesis under which the bound holds."""
    ens = EnsembleSpec.canonical(n, rho)
    J = len(phis)
    B = bound if bound is not None else max(g.sup_norm for g in phis)
    avg = sum(ens.evaluate(g, s) for g, s in zip(phis, starts)) / J
    rows = []
    for C in c_grid:
        tail = float(np.sum(ens.weights[np.abs(avg) >= C - 1e-12]))
        rows.append((float(C), tail, 2 * math.exp(-J * C * C / (2 * B * B))))
    return {
        "J": J,
        "B": B,
        "rows": rows,
        "holds": all(t <= b + 1e-12 for _, t, b in rows),
        "rigorous": all(is_pseudo_gradient(g) for g in phis),
    }


# ---------------------------------------------------------------- entropy production

def project_density(f, n: int, sites, rho: float = 0.0) -> tuple:
    """Conditional expectation of a density (w.r.t. the product law on ``n`` sites)
    onto ``sites``.  Returns ``(marginal density over 2^|sites| codes, ensemble)``."""
    sites = list(sites)
    codes = np.arange(1 << n)
    sub = np.zeros(codes.size, dtype=np.int64)
    for q, s in enumerate(sites):
        sub |= ((codes >> s) & 1) << q
    full = EnsembleSpec.grand(n, rho)
    mass = np.bincount(sub, weights=full.weights * np.asarray(f, dtype=float), minlength=1 << len(sites))
    small = EnsembleSpec.grand(len(sites), rho)
    return mass / small.weights, small


@dataclass(frozen=True)
class EntropyCurve:
    times: np.ndarray
    values: np.ndarray
    integral: float


def entropy_production_trajectory(params: ModelParams, f0, T: float, sub_block, *, grid: int = 64, tol: float = 1e-6, max_grid: int = 8192) -> EntropyCurve:
    """``s -> D(f_s projected on sub_block)`` under the exact law, integrated by the
    trapezoid rule on a grid doubled until the integral moves by less than ``tol``."""
    geo = params.geometry
    if not isinstance(geo, Torus) or geo.n_sites > 10:
        raise ValueError("needs a torus with at most 10 sites")
    n = geo.n_sites
    mu0 = EnsembleSpec.grand(n, 0.0).weights
    law0 = LawVector(np.asarray(f0, dtype=float) * mu0)
    G = generator_matrix(params).toarray()

    def curve(points):
        times = np.linspace(0.0, T, points + 1)
        stepper = scipy.linalg.expm((T / points) * G)
        p = law0.probs
        vals = []
        for i in range(points + 1):
            if i:
                p = p @ stepper
            fsub, ens = project_density(p / mu0, n, sub_block)
            vals.append(dirichlet_form(np.clip(fsub, 0, None), ens, params.alpha))
        return times, np.array(vals)

    times, vals = curve(grid)
    integral = float(np.trapezoid(vals, times))
    while grid < max_grid:
        grid *= 2
        t2, v2 = curve(grid)
        i2 = float(np.trapezoid(v2, t2))
        done = abs(i2 - integral) <= tol * max(1.0, abs(i2))
        times, vals, integral = t2, v2, i2
        if done:
            break
    return EntropyCurve(times, vals, integral)
