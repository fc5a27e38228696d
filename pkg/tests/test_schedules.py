import math

import pytest
from hypothesis import given, strategies as st

from glab.schedules import KINDS, make_schedule


def test_d1b1a_ladder_reevaluated():
    N, e = 256, 0.02
    s = make_schedule("D1B1a", N)
    beta_x = 1 / 3 + e
    betas = [beta_x / 2 - e + i * e for i in range(len(s.betas))]
    assert s.betas == pytest.approx(betas, rel=1e-12)
    for i, tau in enumerate(s.taus):
        expected = N ** (-1 - beta_x - betas[i] / 2 + betas[i + 1] + e)
        assert tau == pytest.approx(expected, rel=1e-12)
    assert s.betas[-1] > 0.5 + 3 * e >= s.betas[-2]
    assert s.cutoffs(0) == (s.betas[1], s.betas[0])


def test_d1b2a_geometric_ladder():
    s = make_schedule("D1B2a", 256)
    assert s.taus[0] == 256**-2
    assert s.m_infinity == 49
    assert s.taus[-1] == make_schedule("D1B1a", 256).taus[-1]
    for a, b in zip(s.taus[:-2], s.taus[1:-1]):
        assert b / a == pytest.approx(256**0.02, rel=1e-12)
    with pytest.raises(ValueError):
        s.cutoffs(0)


@given(st.sampled_from(KINDS), st.integers(6, 16))
def test_ladder_invariants(kind, log2n):
    s = make_schedule(kind, 2**log2n)
    assert s.violations() == []
    assert all(b >= a for a, b in zip(s.taus, s.taus[1:]))
    assert s.m_infinity >= 1


def test_epsilon_overrides():
    s = make_schedule("D1B1a", 1024, {"eps1": 0.05, "eps5": 0.3})
    assert s.beta_x == pytest.approx(1 / 3 + 0.05)
    assert s.terminal_slack == 0.3
    assert s.log_taus[0] == pytest.approx(math.log(s.taus[0]) / math.log(1024))


@pytest.mark.parametrize("bad", [{"eps3": 0.0}, {"eps2": -0.1}])
def test_nonpositive_epsilon_rejected(bad):
    with pytest.raises(ValueError):
        make_schedule("D1B1a", 256, bad)


def test_unknown_kind_and_small_n():
    with pytest.raises(ValueError):
        make_schedule("D3", 256)
    with pytest.raises(ValueError):
        make_schedule("D1B1a", 1)
