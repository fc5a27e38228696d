import itertools
import json
import math

import numpy as np
import pytest
import scipy.linalg
from hypothesis import given, strategies as st

from glab.dynamics import JumpEvent, SpinConfig, simulate
from glab.model import ModelParams, Segment, Torus, continuum_match, derive_constants
from glab.observables import (
    LocalFunctional,
    StepPath,
    builtin_pseudo_gradients,
    calibrate_vN,
    cutoff_spatial,
    cutoff_threshold,
    cutoff_time_average,
    gartner,
    heat_mean,
    height_after,
    height_grid,
    init_height,
    is_pseudo_gradient,
    is_weakly_vanishing,
    origin_flux,
    replay_consistency,
    running_integral_sup,
    snapshot_csv,
    spatial_average,
    stationary_log_drift,
    time_average,
    update_height,
)


# ---------------------------------------------------------------- heights

def test_narrow_wedge_height():
    labels = np.arange(-6, 7)
    cfg = SpinConfig.narrow_wedge(labels)
    h = init_height(cfg, 16, first_label=-6)
    assert h.values == pytest.approx(np.abs(labels) / 4.0, abs=1e-15)
    assert np.max(h.increment_errors(cfg)) <= 1e-15


def test_full_height_is_linear():
    cfg = SpinConfig(np.ones(9))
    h = init_height(cfg, 9, first_label=-4)
    assert h.values == pytest.approx(np.arange(-4, 5) / 3.0, abs=1e-15)


def test_hop_across_origin_edge():
    cfg = SpinConfig(np.array([-1, -1, -1, 1, -1]))  # labels -2..2, particle at 1
    h = init_height(cfg, 4, first_label=-2)
    after = update_height(h, JumpEvent(0.1, 0, 1, True, "left"))  # particle 1 -> 0
    assert after.h0 == pytest.approx(2 / 2.0)
    assert after.flux == 1
    assert after.values[3:] == pytest.approx(h.values[3:])
    moved = SpinConfig(np.array([-1, -1, 1, -1, -1]))
    assert np.max(after.increment_errors(moved)) <= 1e-15


def test_hop_away_from_origin_and_noop():
    cfg = SpinConfig(np.array([-1] * 3 + [1] + [-1] * 4))  # labels 0..7, particle at 3
    h = init_height(cfg, 4, first_label=0)
    after = update_height(h, JumpEvent(0.1, 3, 2, True, "right"))
    assert after.flux == 0 and after.h0 == 0.0
    assert update_height(h, JumpEvent(0.1, 3, 1, False, "neutral")) is h


@given(st.integers(0, 2**31 - 1), st.sampled_from(["torus", "segment"]))
def test_replayed_height_keeps_increment_identity(seed, geo):
    geometry = Torus(20) if geo == "torus" else Segment.centered(10)
    p = ModelParams(16, (0.6, 0.4), (1.0, 1.0), geometry)
    init = SpinConfig.bernoulli(geometry.n_sites, 0.0, np.random.default_rng(seed))
    traj = simulate(p, init, 0.005, seed, log_noops=False)
    h = init_height(init, 16, geometry.first_label, geometry.periodic)
    spins = np.array(init.spins)
    for ev in traj.event_list():
        h = update_height(h, ev)
    final = traj.final
    assert np.max(h.increment_errors(final)) <= 1e-12
    assert h.flux == origin_flux(traj)
    rebuilt = height_after(traj)
    assert np.max(np.abs(rebuilt.values - h.values)) <= 1e-12


def test_replay_consistency_kernel():
    p = ModelParams(32, (0.6, 0.4), (1.0, 1.0), Torus(32))
    traj = simulate(p, SpinConfig.bernoulli(32, 0.0, np.random.default_rng(1)), 0.2, 5)
    viol, inc, gap, flux = replay_consistency(traj, continuum_match(p).gartner_lambda, check_every=500)
    assert viol == 0 and inc <= 1e-9 and gap <= 1e-9
    assert flux == origin_flux(traj)


def test_height_grid_matches_event_replay():
    p = ModelParams(16, (1.0,), (1.0,), Torus(16))
    traj = simulate(p, SpinConfig.alternating(16, -8), 0.02, 3, log_noops=False)
    grid = np.array([0.0, 0.005, 0.02])
    snaps = height_grid(traj, grid)
    for row, t in zip(snaps, grid):
        sub = traj.events[traj.events["time"] <= t]
        h = init_height(traj.initial, 16, -8, True)
        for e in sub:
            h = update_height(h, JumpEvent(float(e["time"]), int(e["x"]), int(e["k"]), bool(e["executed"]), {1: "right", -1: "left", 0: "neutral"}[int(e["direction"])]))
        assert row == pytest.approx(h.values, abs=1e-12)


# ---------------------------------------------------------------- Gärtner transform

def test_gartner_zero_lambda():
    h = init_height(SpinConfig.alternating(8), 4, first_label=-4)
    z = gartner(h, 0.0, 1.5, 2.0)
    assert z.values == pytest.approx(np.full(8, math.exp(3.0)))


def test_gartner_narrow_wedge_and_rescale():
    labels = np.arange(-5, 6)
    h = init_height(SpinConfig.narrow_wedge(labels), 25, first_label=-5)
    z = gartner(h, 0.4, 0.0, 0.0)
    assert z.values == pytest.approx(np.exp(-0.4 * np.abs(labels) / 5.0))
    assert z.narrow_wedge_scaled() == pytest.approx(0.5 * 5.0 / 0.4 * z.values)


def test_gartner_accepts_constants_and_guards_overflow():
    c = derive_constants(ModelParams(16, (1.0,), (2.0,)))
    h = init_height(SpinConfig(np.ones(9)), 16, -4)
    assert gartner(h, c, 0.0, 0.0).lam == 2.0
    big = init_height(SpinConfig(np.ones(2001)), 1, -1000)
    z = gartner(big, 1.0, 0.0, 0.0)
    assert z.log_domain and np.all(np.isfinite(z.log_values))


def test_bernoulli_mean_of_z():
    # exact product-measure expectation of exp(-lam h_x) against the cosh formula
    N, lam = 9, 0.8
    # direct enumeration over the x spins between the origin and x
    for x in range(1, 6):
        acc = 0.0
        for bits in itertools.product((-1, 1), repeat=x):
            acc += math.exp(-lam * sum(bits) / math.sqrt(N))
        acc /= 2**x
        assert acc == pytest.approx(math.cosh(lam / math.sqrt(N)) ** x, rel=1e-13)


def tilted_generator(params, lam):
    """Generator of (spins) weighted by the change of Z at the origin edge."""
    geo = params.geometry
    n = geo.n_sites
    origin = -geo.first_label
    N = params.N
    states = np.arange(1 << n)
    spins = np.where((states[:, None] >> np.arange(n)) & 1, 1, -1)
    M = np.zeros((states.size, states.size))
    for k in range(1, params.m + 1):
        fast = N * N * params.alpha[k - 1]
        slow = fast * (1 - params.gamma[k - 1] / math.sqrt(N))
        for i in range(n):
            j = (i + k) % n
            crosses = (origin - i) % n < k
            for s in states:
                a, b = spins[s, i], spins[s, j]
                if a == b:
                    continue
                rate = fast if a == 1 else slow
                dh = 0.0
                if crosses:
                    dh = -2 / math.sqrt(N) if a == 1 else 2 / math.sqrt(N)
                t = s ^ ((1 << i) | (1 << j))
                M[s, t] += rate * math.exp(-lam * dh)
                M[s, s] -= rate
    return M


def test_log_drift_matches_exact_law_finite_difference():
    params = ModelParams(4, (0.5, 0.5), (1.0, 1.0), Torus(8))
    lam = continuum_match(params).gartner_lambda
    M = tilted_generator(params, lam)
    mu = np.full(M.shape[0], 1.0 / M.shape[0])
    ones = np.ones(M.shape[0])

    def slope(h):
        return (mu @ scipy.linalg.expm(h * M) @ ones - 1.0) / h

    # Romberg extrapolation of the forward difference at T = 0
    h0 = 1e-3
    table = [[slope(h0 / 2**j)] for j in range(5)]
    for j in range(1, 5):
        for q in range(1, j + 1):
            table[j].append((2**q * table[j][q - 1] - table[j - 1][q - 1]) / (2**q - 1))
    derivative = table[-1][-1]
    assert derivative == pytest.approx(float(mu @ M @ ones), rel=1e-9)
    assert -stationary_log_drift(params) == pytest.approx(derivative, rel=1e-6, abs=1e-6)


def test_log_drift_closed_form():
    p = ModelParams(25, (0.5, 0.3, 0.2), (1.0, 0.5, -0.5), Torus(16))
    lam = continuum_match(p).gartner_lambda
    a = lam / 5.0
    closed = 0.0
    for k in range(1, 4):
        fast = 625 * p.alpha[k - 1]
        slow = fast * (1 - p.gamma[k - 1] / 5.0)
        closed -= k / 4 * (fast * math.expm1(2 * a) + slow * math.expm1(-2 * a))
    assert stationary_log_drift(p) == pytest.approx(closed, rel=1e-12)


def test_calibrated_constant():
    p = ModelParams(16, (0.6, 0.4), (0.0, 0.0), Torus(16))
    assert calibrate_vN(p) == 0.0
    q = ModelParams(16, (0.6, 0.4), (1.0, 1.0), Torus(16))
    assert calibrate_vN(q) == pytest.approx(stationary_log_drift(q) + heat_mean(q), rel=1e-14)


def test_heat_mean_enumeration():
    p = ModelParams(9, (0.7, 0.3), (1.0, 2.0), Torus(16))
    cm = continuum_match(p)
    a = cm.gartner_lambda / 3.0
    total = 0.0
    for k, rate in enumerate(cm.heat_rates, start=1):
        for bits in itertools.product((-1, 1), repeat=k):
            w = 0.5**k
            total += w * rate * (math.exp(-a * sum(bits)) + math.exp(a * sum(bits)) - 2)
    assert heat_mean(p) == pytest.approx(total, rel=1e-12)


def test_stationary_drift_monte_carlo_nearest_neighbour():
    # d/dT E[Z_T / Z_0] at T = 0 vanishes once the stationary log-drift is added
    N = 16
    p = ModelParams(N, (1.0,), (1.0,), Torus(16))
    lam = continuum_match(p).gartner_lambda
    v = stationary_log_drift(p)
    T = 0.02 / N**2
    rng = np.random.default_rng(5)
    samples = []
    for s in range(1000):
        init = SpinConfig.bernoulli(16, 0.0, rng)
        flux = origin_flux(simulate(p, init, T, s, log_noops=False))
        samples.append(math.exp(-lam * 2 * flux / math.sqrt(N) + v * T))
    samples = np.array(samples)
    drift = (samples.mean() - 1) / T
    se = samples.std(ddof=1) / math.sqrt(samples.size) / T
    assert abs(drift) <= 2 * se + 1e-12


# ---------------------------------------------------------------- local functionals

def test_builtin_library_pseudo_gradients():
    assert all(is_pseudo_gradient(g) for g in builtin_pseudo_gradients())
    eta0 = LocalFunctional.from_function(lambda s: s[0], 1)
    assert not is_pseudo_gradient(eta0)
    pair = LocalFunctional.from_function(lambda s: s[0] * s[1] - s[2] * s[3], 4)
    assert is_pseudo_gradient(pair)


def test_weakly_vanishing():
    pair = LocalFunctional.from_function(lambda s: s[0] * s[1], 2, classification="weakly-vanishing")
    assert is_weakly_vanishing(pair, 100)
    assert is_weakly_vanishing(LocalFunctional.constant(100**-0.5), 100, beta=0.5)
    assert not is_weakly_vanishing(LocalFunctional.constant(1.0), 100)


def test_spatial_average_basics():
    g = LocalFunctional.from_function(lambda s: s[1] - s[0], 2)
    cfg = SpinConfig.bernoulli(40, 0.0, np.random.default_rng(0))
    one = spatial_average(g, cfg, 20, 1, m=2)
    assert one == g.evaluate(cfg, 20 - 6)
    const = LocalFunctional.constant(0.3)
    assert spatial_average(const, cfg, 30, 4, m=2) == pytest.approx(0.3)
    with pytest.raises(IndexError):
        spatial_average(g, cfg, 3, 2, m=2)


def test_spatial_average_pair_product_mean():
    g = LocalFunctional.from_function(lambda s: s[0] * s[1] - s[2] * s[3], 4)
    rng = np.random.default_rng(11)
    vals = np.array([spatial_average(g, SpinConfig.bernoulli(40, 0.0, rng), 30, 3, m=1) for _ in range(10_000)])
    assert abs(vals.mean()) <= 3 * vals.std(ddof=1) / math.sqrt(vals.size)


def test_cutoff_spatial():
    thr = cutoff_threshold(256, 0.02)
    assert thr == pytest.approx(256 ** (-(1 / 3 + 0.02) / 2 + 0.01))
    assert cutoff_spatial(0.0, 256, 0.02) == 0.0
    assert cutoff_spatial(thr, 256, 0.02) == thr
    assert cutoff_spatial(-2 * thr, 256, 0.02) == 0.0


@given(st.lists(st.floats(-2, 2), min_size=1, max_size=30), st.integers(8, 4096))
def test_cutoff_idempotent(vals, N):
    once = cutoff_spatial(np.array(vals), N, 0.02)
    assert np.array_equal(cutoff_spatial(once, N, 0.02), once)


# ---------------------------------------------------------------- time averages

def test_time_average_constant_and_limit():
    path = StepPath.constant(0.7, 1.0)
    assert time_average(path, 0.5) == pytest.approx(0.7)
    steps = StepPath(np.array([0.0, 0.3]), np.array([1.0, -2.0]), 1.0)
    assert time_average(steps, 0.0, 0.3) == -2.0
    assert time_average(steps, 1e-8, 0.1) == pytest.approx(1.0, rel=1e-6)
    with pytest.raises(ValueError):
        time_average(steps, 0.9, 0.2)


def test_square_wave_average():
    d = 1e-3
    times = np.arange(0, 1, d)
    vals = np.where(np.arange(times.size) % 2 == 0, 1.0, -1.0)
    path = StepPath(times, vals, 1.0)
    for tau in (0.1, 0.2555, 0.7):
        assert abs(time_average(path, tau)) <= d / tau + 1e-12


def test_running_sup_is_exact_at_breakpoints():
    path = StepPath(np.array([0.0, 0.5]), np.array([1.0, -1.0]), 1.0)
    # integral rises to 0.5 at s=0.5 then falls back to 0
    assert running_integral_sup(path, 0.0, 1.0) == pytest.approx(0.5)


def test_cutoff_time_average_cases():
    N = 100
    zero = StepPath.constant(0.0, 1.0)
    assert cutoff_time_average(zero, 0.5, 0.5, 0.1, N) == 0.0
    big = StepPath.constant(1.0, 1.0)
    assert cutoff_time_average(big, 0.5, 0.5, 0.1, N) == 0.0  # above N^-0.1
    mid = StepPath(np.array([0.0, 0.2]), np.array([0.05, 0.2]), 2.0)
    a1 = cutoff_time_average(mid, 0.5, 1.0, 0.1, N, t_shift=0.0, variant=1)
    a2 = cutoff_time_average(mid, 0.5, 1.0, 0.1, N, t_shift=0.0, variant=2)
    assert a1 == a2 == pytest.approx(time_average(mid, 0.5))
    shifted = cutoff_time_average(mid, 0.5, 1.0, 0.1, N, t_shift=0.3, variant=1)
    assert shifted == pytest.approx(time_average(mid, 0.5, 0.3))
    with pytest.raises(ValueError):
        cutoff_time_average(mid, 0.5, 1.0, 0.1, N, variant=3)


def test_snapshot_export():
    cfg = SpinConfig.alternating(6, -3)
    h = init_height(cfg, 4, -3)
    z = gartner(h, 0.5, 0.1, 1.0)
    text, manifest = snapshot_csv(cfg, h, z, seed=3)
    lines = text.splitlines()
    assert lines[0] == "x,eta,h,Z" and len(lines) == 7
    assert json.loads(json.dumps(manifest))["vN"] == 0.1
