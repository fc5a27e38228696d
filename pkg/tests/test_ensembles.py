import itertools
import math

import numpy as np
import pytest
import scipy.integrate
import scipy.linalg
from hypothesis import given, strategies as st

from glab.ensembles import (
    EnsembleSpec,
    azuma_tail_check,
    build_generator,
    dirichlet_form,
    disjoint_average_bound_check,
    entropy_production_trajectory,
    enumerate_hyperplane,
    h_minus_one_norm,
    kv_lhs_exact,
    kv_sweep,
    lsi_ratio,
    project_density,
    relative_entropy,
    spectral_gap,
)
from glab.model import ModelParams, Torus
from glab.observables import LocalFunctional, builtin_pseudo_gradients

GRAD1 = builtin_pseudo_gradients()[0]


@pytest.mark.parametrize("n,rho,count", [(2, 0.0, 2), (4, 0.0, 6), (8, -0.5, 28)])
def test_hyperplane_counts(n, rho, count):
    states = enumerate_hyperplane(n, rho)
    assert states.shape == (count, n)
    assert np.all(states.sum(axis=1) == round(rho * n))


def test_infeasible_density():
    with pytest.raises(ValueError):
        enumerate_hyperplane(5, 0.0)


def test_grand_weights_sum_to_one():
    ens = EnsembleSpec.grand(6, 0.3)
    assert ens.weights.sum() == pytest.approx(1.0)
    assert ens.expect(ens.spins[:, 2]) == pytest.approx(0.3)


def test_relative_entropy_examples_and_loop_oracle():
    ens = EnsembleSpec.canonical(6, 0.0)
    assert relative_entropy(np.ones(ens.size), ens) == 0.0
    half = np.where(np.arange(ens.size) % 2 == 0, 2.0, 0.0)
    assert relative_entropy(half, ens) == pytest.approx(math.log(2))
    rng = np.random.default_rng(0)
    f = rng.lognormal(size=ens.size)
    f /= f.mean()
    loop = 0.0
    for i in range(ens.size):
        loop += f[i] * math.log(f[i]) / ens.size
    assert relative_entropy(f, ens) == pytest.approx(loop, rel=1e-12)
    with pytest.raises(ValueError):
        relative_entropy(-f, ens)


def test_dirichlet_point_mass_counts_moving_pairs():
    alpha = (0.5, 0.3, 0.2)
    ens = EnsembleSpec.canonical(6, 0.0)
    for idx in (0, 7, 13):
        f = np.zeros(ens.size)
        f[idx] = ens.size
        spins = ens.spins[idx]
        expected = sum(alpha[y - x - 1] for x, y in itertools.combinations(range(6), 2) if y - x <= 3 and spins[x] != spins[y])
        assert dirichlet_form(f, ens, alpha) == pytest.approx(expected, rel=1e-12)


@given(st.lists(st.floats(0, 10), min_size=20, max_size=20))
def test_dirichlet_nonnegative_and_constant_kernel(vals):
    ens = EnsembleSpec.canonical(6, 0.0)
    f = np.array(vals)
    assert dirichlet_form(f, ens, (0.6, 0.4)) >= 0
    assert dirichlet_form(np.full(ens.size, 3.0), ens, (0.6, 0.4)) == 0.0


def test_two_site_gap():
    (n, ups, gap, scaled), = spectral_gap([2], (1.0,))
    assert (n, ups) == (2, 1)
    assert gap == pytest.approx(2.0)
    assert scaled == pytest.approx(8.0)


def test_gap_scales_like_inverse_square():
    rows = spectral_gap(range(4, 11), (0.6, 0.4))
    scaled = [r[3] for r in rows]
    assert max(scaled) / min(scaled) <= 4


def test_lsi_ratio_examples():
    ens = EnsembleSpec.canonical(6, 0.0)
    assert lsi_ratio(np.ones(ens.size), ens, (1.0,)) == 0.0
    f = np.zeros(ens.size)
    f[3] = ens.size
    assert 0 < lsi_ratio(f, ens, (1.0,)) < 1


def test_h_minus_one_on_eigenvector():
    ens = EnsembleSpec.canonical(6, 0.0)
    S = build_generator(ens, (0.6, 0.4), full=False)
    vals, vecs = np.linalg.eigh(-S.matrix)
    phi = vecs[:, 3]
    res = h_minus_one_norm(phi, ens, S)
    assert res.mean_zero
    assert res.value == pytest.approx(np.mean(phi * phi) / vals[3], rel=1e-10)
    assert res.lower_bound <= res.value * (1 + 1e-9)


def test_h_minus_one_variational_route_agrees():
    ens = EnsembleSpec.canonical(4, 0.0)
    S = build_generator(ens, (1.0,), full=False)
    res = h_minus_one_norm(ens.evaluate(GRAD1), ens, S)
    assert 0.95 * res.value <= res.lower_bound <= res.value * (1 + 1e-9)
    biased = h_minus_one_norm(np.ones(ens.size), ens, S)
    assert not biased.mean_zero and math.isinf(biased.value)


def test_kv_limits_for_symmetric_dynamic():
    ens = EnsembleSpec.canonical(6, 0.0)
    G = build_generator(ens, (0.6, 0.4), (0.0, 0.0), N=4)
    phi = ens.evaluate(GRAD1)
    assert kv_lhs_exact(phi, 0.0, G) == pytest.approx(np.mean(phi**2))
    assert kv_lhs_exact(phi, 1e-9, G) == pytest.approx(np.mean(phi**2), rel=1e-6)
    taus = np.geomspace(1e-4, 10, 12)
    vals = [kv_lhs_exact(phi, t, G) for t in taus]
    assert all(b <= a * (1 + 1e-9) for a, b in zip(vals, vals[1:]))
    norm = h_minus_one_norm(phi, ens, G, samples=0, refine=0).value
    assert kv_lhs_exact(phi, 1e4, G) * 1e4 == pytest.approx(2 * norm, rel=1e-3)


def test_kv_matches_time_quadrature_with_asymmetry():
    ens = EnsembleSpec.canonical(6, 0.0)
    G = build_generator(ens, (0.6, 0.4), (1.0, 1.0), N=4)
    phi = ens.evaluate(builtin_pseudo_gradients()[1])
    tau = 0.02

    def integrand(s):
        return (tau - s) * np.mean(phi * (scipy.linalg.expm(s * G.matrix) @ phi))

    quad = 2 / tau**2 * scipy.integrate.quad(integrand, 0, tau, epsabs=1e-13)[0]
    assert kv_lhs_exact(phi, tau, G) == pytest.approx(quad, rel=1e-8)


def test_kv_sweep_rows():
    rows = kv_sweep([GRAD1], [4], [1e-2, 1.0], (1.0,), (1.0,), 4)
    assert {r[2] for r in rows} == {1, 2, 3}
    assert all(r[0] == "grad1" and r[4] > 0 for r in rows)


def test_full_generator_requires_speed():
    with pytest.raises(ValueError):
        build_generator(EnsembleSpec.canonical(4, 0.0), (1.0,))


def test_disjoint_average_bound():
    res = disjoint_average_bound_check([GRAD1, GRAD1], [0, 3], 6, (1.0,))
    assert res["J"] == 2 and res["ratio"] <= 4
    with pytest.raises(ValueError):
        disjoint_average_bound_check([GRAD1, GRAD1], [0, 1], 6, (1.0,))


def test_azuma_examples():
    res = azuma_tail_check([GRAD1] * 3, [0, 2, 4], 8, 0.0, np.linspace(0.1, 2, 20))
    assert res["holds"] and res["rigorous"] and res["B"] == 2.0
    first = res["rows"][0]
    assert first[1] <= 1.0
    pair = LocalFunctional.from_function(lambda s: s[0] * s[1], 2, name="pair")
    assert not azuma_tail_check([pair], [0], 4, 0.0, [0.5])["rigorous"]


def test_projection_preserves_mass_and_contracts_entropy():
    rng = np.random.default_rng(2)
    full = EnsembleSpec.grand(6, 0.0)
    f = rng.lognormal(size=full.size)
    f /= full.expect(f)
    sub, ens = project_density(f, 6, [1, 2, 4])
    assert ens.expect(sub) == pytest.approx(1.0)
    assert relative_entropy(sub, ens) <= relative_entropy(f, full) + 1e-12
    whole, _ = project_density(f, 6, range(6))
    assert whole == pytest.approx(f)


def test_entropy_production_vanishes_at_equilibrium():
    p = ModelParams(4, (1.0,), (1.0,), Torus(6))
    curve = entropy_production_trajectory(p, np.ones(64), 0.05, [0, 1, 2])
    assert curve.integral == pytest.approx(0.0, abs=1e-20)


def test_entropy_production_positive_from_point_mass():
    p = ModelParams(4, (1.0,), (1.0,), Torus(6))
    f0 = np.zeros(64)
    f0[0b010101] = 64.0
    curve = entropy_production_trajectory(p, f0, 0.02, [0, 1, 2])
    assert curve.integral > 0
    assert np.all(curve.values >= 0)
    with pytest.raises(ValueError):
        entropy_production_trajectory(ModelParams(4, (1.0,), (1.0,), Torus(12)), np.ones(4096), 0.1, [0])
