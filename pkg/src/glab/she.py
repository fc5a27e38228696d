"""Explicit Euler-Maruyama solver for the multiplicative stochastic heat equation
``dZ = (alpha/2) Z'' dT - lambda sqrt(alpha) Z dW`` on a periodic grid."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "SheGrid",
    "SheEnsemble",
    "make_grid",
    "she_step",
    "she_solve",
    "narrow_wedge_init",
    "kpz_height",
    "heat_step",
    "ensemble_summary",
]

CLAMP_FLOOR = 1e-300


@dataclass(frozen=True)
class SheGrid:
    """Field(s) on ``M = Lambda / dx`` periodic cells.  ``Z`` may be a batch of
    shape ``(replicas, M)``; cell 0 is the origin."""

    dx: float
    dt: float
    Lambda: float
    Z: np.ndarray
    alpha: float
    lam: float
    clamps: int = 0

    def __post_init__(self):
        if self.dt > self.dx**2 / (2 * self.alpha) * (1 + 1e-12):
            raise ValueError("stability violation: dt must be at most dx^2 / (2 alpha)")
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")

    @property
    def cells(self) -> int:
        return int(round(self.Lambda / self.dx))

    @property
    def x(self) -> np.ndarray:
        """Cell coordinates in ``[-Lambda/2, Lambda/2)`` order-matched to ``Z``."""
        c = np.arange(self.cells) * self.dx
        return np.where(c >= self.Lambda / 2, c - self.Lambda, c)


def make_grid(Lambda: float, dx: float, alpha: float, lam: float, *, dt: float | None = None, courant: float = 0.25, Z0=None) -> SheGrid:
    """Grid with ``dt = courant * dx^2 / alpha`` unless given."""
    cells = int(round(Lambda / dx))
    if abs(cells * dx - Lambda) > 1e-9 * Lambda:
        raise ValueError("Lambda must be a multiple of dx")
    if dt is None:
        dt = courant * dx * dx / alpha
    Z = np.ones(cells) if Z0 is None else np.asarray(Z0, dtype=float)
    return SheGrid(dx, dt, Lambda, Z, alpha, lam)


def _laplacian(Z: np.ndarray, dx: float) -> np.ndarray:
    return (np.roll(Z, 1, axis=-1) + np.roll(Z, -1, axis=-1) - 2 * Z) / (dx * dx)


def heat_step(Z: np.ndarray, grid: SheGrid) -> np.ndarray:
    """Deterministic part of one step."""
    return Z + grid.dt * 0.5 * grid.alpha * _laplacian(Z, grid.dx)


def _advance(Z, grid: SheGrid, rng: np.random.Generator):
    noise = rng.standard_normal(Z.shape)
    scale = grid.lam * math.sqrt(grid.alpha) * math.sqrt(grid.dt / grid.dx)
    new = heat_step(Z, grid) - scale * Z * noise
    bad = new < 0
    count = int(np.count_nonzero(bad))
    if count:
        new[bad] = CLAMP_FLOOR
    return new, count


def she_step(grid: SheGrid, rng: np.random.Generator) -> SheGrid:
    Z, count = _advance(np.array(grid.Z, dtype=float), grid, rng)
    return replace(grid, Z=Z, clamps=grid.clamps + count)


@dataclass(frozen=True)
class SheEnsemble:
    grid: SheGrid
    fields: np.ndarray
    T: float
    steps: int
    clamps: int
    seed: int

    def at(self, x: float) -> np.ndarray:
        """One-point samples at the cell nearest ``x``."""
        idx = int(round(x / self.grid.dx)) % self.grid.cells
        return self.fields[:, idx]


def she_solve(grid0: SheGrid, T: float, replicas: int, seed: int, *, batch: int = 512) -> SheEnsemble:
    """Independent replicas to time ``T`` (the last step is shortened to land on ``T``).

    Replicas are processed in batches, each batch drawing from its own stream
    spawned from ``seed``, so the result does not depend on memory limits.
    """
    if replicas < 1:
        raise ValueError("need at least one replica")
    steps = int(math.floor(T / grid0.dt + 1e-9))
    tail = T - steps * grid0.dt
    base = np.atleast_2d(np.asarray(grid0.Z, dtype=float))
    out = np.empty((replicas, grid0.cells))
    clamps = 0
    n_batches = -(-replicas // batch)
    streams = np.random.SeedSequence(seed).spawn(n_batches)
    short = replace(grid0, dt=tail) if tail > 1e-15 else None
    for b, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        lo, hi = b * batch, min((b + 1) * batch, replicas)
        Z = np.repeat(base, hi - lo, axis=0) if base.shape[0] == 1 else base[lo:hi].copy()
        for _ in range(steps):
            Z, c = _advance(Z, grid0, rng)
            clamps += c
        if short is not None:
            Z, c = _advance(Z, short, rng)
            clamps += c
        out[lo:hi] = Z
    return SheEnsemble(grid0, out, T, steps + (short is not None), clamps, seed)


def narrow_wedge_init(grid: SheGrid) -> SheGrid:
    Z = np.zeros(grid.cells)
    Z[0] = 1.0 / grid.dx
    return replace(grid, Z=Z)


def kpz_height(grid_or_field, lam: float | None = None) -> np.ndarray:
    """``h = -log(Z) / lambda``."""
    if isinstance(grid_or_field, SheGrid):
        Z, lam = grid_or_field.Z, grid_or_field.lam if lam is None else lam
    else:
        Z = np.asarray(grid_or_field, dtype=float)
    if not lam:
        raise ValueError("lambda must be nonzero")
    if np.any(Z <= 0):
        raise ValueError("Z must be positive")
    return -np.log(Z) / lam


def ensemble_summary(ens: SheEnsemble, points=(0.0,), quantiles=(0.05, 0.25, 0.5, 0.75, 0.95), cdf_grid: int = 41):
    """``(csv_text, manifest)`` with moments, quantiles and an empirical CDF per point."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "stat", "arg", "value"])
    for x in points:
        s = ens.at(x)
        w.writerow([x, "mean", "", repr(float(s.mean()))])
        w.writerow([x, "var", "", repr(float(s.var(ddof=1)))])
        for q in quantiles:
            w.writerow([x, "quantile", q, repr(float(np.quantile(s, q)))])
        for v in np.linspace(s.min(), s.max(), cdf_grid):
            w.writerow([x, "cdf", repr(float(v)), repr(float(np.mean(s <= v)))])
    g = ens.grid
    manifest = {"dx": g.dx, "dt": g.dt, "Lambda": g.Lambda, "alpha": g.alpha, "lambda": g.lam,
                "T": ens.T, "replicas": int(ens.fields.shape[0]), "seed": ens.seed, "clamps": ens.clamps}
    return buf.getvalue(), manifest


def manifest_json(manifest: dict) -> str:
    return json.dumps(manifest, sort_keys=True, indent=2)
