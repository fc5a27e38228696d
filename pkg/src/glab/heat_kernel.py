"""Periodic long-range heat kernel computed by Fourier diagonalisation.

The generator is ``L phi_x = (1/2) sum_k a_k N^2 (phi_{x+k} + phi_{x-k} - 2 phi_x)``
on a torus of ``L`` sites indexed ``0 .. L-1``.  It is circulant, so every
semigroup quantity is a pointwise multiplier in Fourier space.
"""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass

import numpy as np

__all__ = [
    "KernelSpec",
    "laplacian_apply",
    "symbol",
    "kernel_row",
    "heat_operator_space",
    "heat_operator_spacetime",
    "gradient",
    "dense_generator",
    "KernelReport",
    "kernel_bounds_report",
    "rows_csv",
]


@dataclass(frozen=True)
class KernelSpec:
    L: int
    N: int
    alpha_tilde: tuple

    def __post_init__(self):
        a = tuple(float(v) for v in self.alpha_tilde)
        if any(v < 0 for v in a):
            raise ValueError("kernel coefficients must be nonnegative")
        if self.L < 1:
            raise ValueError("torus needs a site")
        object.__setattr__(self, "alpha_tilde", a)

    @classmethod
    def from_params(cls, params, L: int | None = None) -> "KernelSpec":
        return cls(L or params.geometry.n_sites, params.N, params.alpha)

    @property
    def diffusivity(self) -> float:
        return float(sum(k * k * a for k, a in enumerate(self.alpha_tilde, start=1)))


def symbol(spec: KernelSpec) -> np.ndarray:
    """Eigenvalues ``N^2 sum_k a_k (cos(k theta_j) - 1)`` for ``theta_j = 2 pi j / L``."""
    theta = 2 * np.pi * np.arange(spec.L) / spec.L
    out = np.zeros(spec.L)
    for k, a in enumerate(spec.alpha_tilde, start=1):
        # cos(k theta) - 1 = -2 sin^2(k theta / 2), no cancellation near 0
        out -= 2.0 * a * np.sin(k * theta / 2) ** 2
    return spec.N**2 * out


def laplacian_apply(phi, spec: KernelSpec) -> np.ndarray:
    phi = np.asarray(phi, dtype=float)
    out = np.zeros_like(phi)
    for k, a in enumerate(spec.alpha_tilde, start=1):
        out += a * (np.roll(phi, -k) + np.roll(phi, k) - 2 * phi)
    return 0.5 * spec.N**2 * out


def kernel_row(spec: KernelSpec, s: float, t: float, x: int = 0) -> np.ndarray:
    """Row ``y -> P_{s,t,x,y}``."""
    if t < s:
        raise ValueError("need t >= s")
    row = np.fft.ifft(np.exp((t - s) * symbol(spec))).real
    return np.roll(row, x)


def heat_operator_space(spec: KernelSpec, t: float, phi0) -> np.ndarray:
    phi0 = np.asarray(phi0, dtype=float)
    return np.fft.ifft(np.fft.fft(phi0) * np.exp(t * symbol(spec))).real


def heat_operator_spacetime(spec: KernelSpec, times, values, t: float) -> np.ndarray:
    """``int_0^t sum_y P_{s,t,x,y} F_{s,y} ds`` for ``F`` piecewise constant in time.

    ``values[i]`` is the site function on ``[times[i], times[i+1])`` and the
    last one holds up to ``t``.
    """
    times = np.asarray(times, dtype=float)
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if times[0] != 0 or values.shape[0] != times.size:
        raise ValueError("path must start at 0 with one value row per time")
    mu = symbol(spec)
    ends = np.append(times[1:], t)
    acc = np.zeros(spec.L, dtype=complex)
    small = np.abs(mu) < 1e-300
    for a, b, row in zip(times, np.minimum(ends, t), values):
        if b <= a:
            continue
        # int_a^b exp((t - s) mu) ds = exp((t - b) mu) * expm1((b - a) mu) / mu
        w = np.where(small, b - a, np.exp((t - b) * mu) * np.expm1((b - a) * mu) / np.where(small, 1.0, mu))
        acc += np.fft.fft(row) * w
    return np.fft.ifft(acc).real


def gradient(phi, k: int, N: int) -> np.ndarray:
    """``N (phi_{x+k} - phi_x)`` with periodic addition."""
    phi = np.asarray(phi, dtype=float)
    return N * (np.roll(phi, -k) - phi)


def dense_generator(spec: KernelSpec) -> np.ndarray:
    eye = np.eye(spec.L)
    return np.stack([laplacian_apply(eye[:, j], spec) for j in range(spec.L)], axis=1)


@dataclass(frozen=True)
class KernelReport:
    times: np.ndarray
    diag_scaled: np.ndarray
    grad_scaled: np.ndarray
    offdiag_slope: np.ndarray
    regularity_ratio: np.ndarray
    mass_deviation: float
    diag_exponent: float
    grad_exponent: float

    def rows(self):
        for i, t in enumerate(self.times):
            yield {
                "t": float(t),
                "sup_P_N_sqrt_t": float(self.diag_scaled[i]),
                "sup_gradP_N_t": float(self.grad_scaled[i]),
                "offdiag_log_slope": float(self.offdiag_slope[i]),
                "regularity_ratio": float(self.regularity_ratio[i]),
            }


def _fit_slope(x, y) -> float:
    return float(np.polyfit(np.log(x), np.log(y), 1)[0])


def kernel_bounds_report(spec: KernelSpec, times, delta: float = 0.25, tau_fraction: float = 0.1) -> KernelReport:
    """Tabulate on-diagonal, gradient, off-diagonal and time-regularity behaviour."""
    times = np.asarray(times, dtype=float)
    N = spec.N
    ab = spec.diffusivity
    diag, grad, off, reg, mass = [], [], [], [], 0.0
    for t in times:
        row = kernel_row(spec, 0, t)
        mass = max(mass, abs(row.sum() - 1.0))
        sup_p = row.max()
        diag.append(sup_p)
        grad.append(np.abs(gradient(row, 1, N)).max())
        # log P at distance d against d^2 / (abar N^2 t); Gaussian slope is -1/2
        spread = np.sqrt(ab * N * N * t)
        d = int(min(max(2 * spread, 2), spec.L // 4))
        off.append(np.log(max(row[d], 1e-300) / row[0]) / (d * d / (ab * N * N * t)))
        tau = tau_fraction * t
        later = kernel_row(spec, 0, t + tau)
        reg.append(np.abs(later - row).max() / (sup_p * tau ** (1 - delta) * t ** (-1 + delta)))
    diag = np.array(diag)
    grad = np.array(grad)
    return KernelReport(
        times=times,
        diag_scaled=diag * N * np.sqrt(times),
        grad_scaled=grad * N * times,
        offdiag_slope=np.array(off),
        regularity_ratio=np.array(reg),
        mass_deviation=float(mass),
        diag_exponent=_fit_slope(times, diag),
        grad_exponent=_fit_slope(times, grad),
    )


def rows_csv(rows) -> str:
    rows = list(rows)
    buf = io.StringIO()
    if not rows:
        return ""
    w = csv.DictWriter(buf, fieldnames=list(rows[0].keys()), lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    return buf.getvalue()
