import math

import numpy as np
import pytest

from glab.she import (
    ensemble_summary,
    heat_step,
    kpz_height,
    make_grid,
    narrow_wedge_init,
    she_solve,
    she_step,
)


def multiplier_oracle(Z0, dx, dt, alpha, steps):
    theta = 2 * np.pi * np.fft.fftfreq(Z0.size)
    mult = 1 + dt * alpha / 2 * (2 * np.cos(theta) - 2) / dx**2
    return np.fft.ifft(np.fft.fft(Z0) * mult**steps).real


def test_deterministic_spike_matches_fourier_multiplier():
    grid = narrow_wedge_init(make_grid(1.0, 1 / 32, 1.0, 0.0))
    steps = 300
    ens = she_solve(grid, steps * grid.dt, 1, seed=0)
    assert ens.steps == steps
    oracle = multiplier_oracle(grid.Z, grid.dx, grid.dt, 1.0, steps)
    assert np.max(np.abs(ens.fields[0] - oracle)) <= 1e-8


def test_narrow_wedge_mass_and_spread():
    alpha, T = 1.0, 0.1
    grid = narrow_wedge_init(make_grid(8.0, 1 / 32, alpha, 0.0))
    field = she_solve(grid, T, 1, seed=0).fields[0]
    assert field.sum() * grid.dx == pytest.approx(1.0, rel=1e-12)
    var = float(np.sum(field * grid.x**2) * grid.dx)
    assert var == pytest.approx(alpha * T, rel=0.01)


def test_kpz_height():
    assert kpz_height(np.array([math.exp(-2.0)]), 2.0) == pytest.approx([1.0])
    grid = make_grid(1.0, 0.25, 1.0, 0.5, Z0=np.full(4, math.e))
    assert kpz_height(grid) == pytest.approx(np.full(4, -2.0))
    with pytest.raises(ValueError):
        kpz_height(np.ones(3), 0.0)
    with pytest.raises(ValueError):
        kpz_height(np.array([1.0, 0.0]), 1.0)


def test_stability_and_grid_checks():
    with pytest.raises(ValueError):
        make_grid(1.0, 0.1, 1.0, 0.5, dt=0.006)
    with pytest.raises(ValueError):
        make_grid(1.0, 0.3, 1.0, 0.5)
    with pytest.raises(ValueError):
        she_solve(make_grid(1.0, 0.25, 1.0, 0.5), 0.1, 0, seed=0)


def test_one_step_mean_is_heat_step():
    x = np.arange(16) / 16
    grid = make_grid(1.0, 1 / 16, 1.0, 0.4, Z0=1 + 0.5 * np.cos(2 * np.pi * x))
    rng = np.random.default_rng(0)
    batch = make_grid(1.0, 1 / 16, 1.0, 0.4, Z0=np.repeat(grid.Z[None], 20_000, axis=0))
    after = she_step(batch, rng).Z
    mean, se = after.mean(axis=0), after.std(axis=0, ddof=1) / math.sqrt(after.shape[0])
    assert np.all(np.abs(mean - heat_step(grid.Z, grid)) <= 4 * se)


def test_second_moment_recursion():
    # exact covariance recursion of the explicit scheme from a flat start
    dx, alpha, lam = 1 / 16, 1.0, 0.5
    grid = make_grid(1.0, dx, alpha, lam)
    steps = 200
    s2 = lam**2 * alpha * grid.dt / dx
    K = np.stack([heat_step(e, grid) for e in np.eye(16)], axis=1)
    C = np.ones((16, 16))
    for _ in range(steps):
        C = K @ C @ K.T + s2 * np.diag(np.diag(C))
    exact_var = C[0, 0] - 1.0
    ens = she_solve(grid, steps * grid.dt, 8000, seed=3)
    z = ens.at(0.0)
    assert ens.clamps == 0
    fourth = np.mean((z - z.mean()) ** 4)
    se = math.sqrt((fourth - z.var() ** 2) / z.size)
    assert abs(z.var(ddof=1) - exact_var) <= 4 * se
    assert abs(z.mean() - 1.0) <= 4 * z.std() / math.sqrt(z.size)


def test_batches_do_not_depend_on_replica_count():
    grid = make_grid(1.0, 1 / 16, 1.0, 0.5)
    a = she_solve(grid, 0.01, 600, seed=9)
    b = she_solve(grid, 0.01, 512, seed=9)
    assert np.array_equal(a.fields[:512], b.fields)
    c = she_solve(grid, 0.01, 600, seed=9, batch=512)
    assert np.array_equal(a.fields, c.fields)


def test_summary_export():
    ens = she_solve(make_grid(1.0, 1 / 16, 1.0, 0.5), 0.01, 50, seed=1)
    text, manifest = ensemble_summary(ens, points=(0.0, 0.5), cdf_grid=5)
    lines = text.splitlines()
    assert lines[0] == "x,stat,arg,value"
    assert len(lines) == 1 + 2 * (2 + 5 + 5)
    assert manifest["replicas"] == 50 and manifest["seed"] == 1
