"""Multiscale time-scale schedules for mesoscopic time averages."""
from __future__ import annotations

import math
from dataclasses import dataclass

__all__ = ["ScaleSchedule", "make_schedule", "KINDS", "DEFAULT_EPS"]

KINDS = ("D1B1a", "D1B1b", "D1B2a", "D1B2b")
DEFAULT_EPS = 0.02
TERMINAL_EXPONENT = -13.0 / 12.0
MAX_STEPS = 100_000


@dataclass(frozen=True)
class ScaleSchedule:
    """A finite ladder of time scales with the exponents that generated it.

    ``taus[i]`` pairs with the cutoff exponents ``(beta_plus, beta_minus) =
    (betas[i+1], betas[i])`` for the D1B1 kinds; the D1B2 kinds carry the
    betas of the D1B1 ladder that fixes their terminal scale.  For D1B1 the
    taus start at index 1, for D1B2 at index 0.
    """

    kind: str
    N: int
    epsilons: tuple
    betas: tuple
    taus: tuple
    m_infinity: int
    ratio_exponent: float
    terminal_slack: float

    @property
    def beta_x(self) -> float:
        return 1.0 / 3.0 + self.epsilons[0]

    @property
    def log_taus(self) -> tuple:
        return tuple(math.log(t) / math.log(self.N) for t in self.taus)

    def cutoffs(self, i: int) -> tuple:
        """``(beta_plus, beta_minus)`` for the ``i``-th tau of a D1B1 ladder."""
        if self.kind not in ("D1B1a", "D1B1b"):
            raise ValueError("cutoff exponents belong to the D1B1 ladders")
        return self.betas[i + 1], self.betas[i]

    def violations(self, rtol: float = 1e-12) -> list:
        """Broken ladder invariants; empty when the schedule is sound."""
        out = []
        cap = self.N ** self.ratio_exponent * (1 + rtol)
        for a, b in zip(self.taus, self.taus[1:]):
            if not (1 - rtol <= b / a <= cap):
                out.append(f"ratio {b / a:.6g} outside [1, {cap:.6g}]")
        bound = self.N ** (TERMINAL_EXPONENT + self.terminal_slack) * (1 + rtol)
        if self.taus[-1] > bound:
            out.append(f"terminal tau {self.taus[-1]:.6g} above {bound:.6g}")
        return out


def _eps(epsilons) -> list:
    if epsilons is None:
        epsilons = {}
    if isinstance(epsilons, dict):
        e = [epsilons.get(f"eps{i}", DEFAULT_EPS) for i in range(1, 5)] + [epsilons.get("eps5")]
    else:
        e = list(epsilons) + [None] * (5 - len(epsilons))
        e = [DEFAULT_EPS if v is None and i < 4 else v for i, v in enumerate(e[:5])]
    for v in e[:4]:
        if v <= 0:
            raise ValueError("schedule epsilons must be positive")
    return e


def _d1b1a(N, e):
    e1, e2, e3, e4, _ = e
    beta_x = 1 / 3 + e1
    betas = [beta_x / 2 - e2]
    taus = []
    while True:
        betas.append(betas[-1] + e3)
        taus.append(N ** (-1 - beta_x - betas[-2] / 2 + betas[-1] + e4))
        if betas[-1] > 0.5 + 3 * e3:
            break
        if len(betas) > MAX_STEPS:
            raise ValueError("non-terminating schedule")
    # beta_{m_inf} <= 1/2 + 4 e3, giving exponent -13/12 - e1 + 5 e3 / 2 + e4
    return betas, taus, e3 / 2, 2.5 * e3 + e4


def _d1b1b(N, e):
    e1, e2, e3, _, _ = e
    beta_x = 1 / 3 + e1
    betas = [0.0]
    taus = []
    while True:
        betas.append(betas[-1] + e2)
        taus.append(N ** (-1.25 - betas[-2] / 2 + betas[-1] + e3))
        if betas[-1] > beta_x + 3 * e2:
            break
        if len(betas) > MAX_STEPS:
            raise ValueError("non-terminating schedule")
    return betas, taus, e2 / 2, e1 / 2 + 2.5 * e2 + e3


def make_schedule(kind: str, N: int, epsilons=None) -> ScaleSchedule:
    """Build a ladder.  ``epsilons`` is a dict ``{"eps1": .., ..., "eps5": ..}``
    or a sequence; missing entries default to 0.02 except ``eps5``, the
    terminal slack, which defaults to the value the ladder provably attains."""
    if kind not in KINDS:
        raise ValueError(f"unknown schedule kind {kind!r}")
    if N < 2:
        raise ValueError("N must be at least 2")
    e = _eps(epsilons)
    base = _d1b1a if kind.endswith("a") else _d1b1b
    if kind.endswith("a") and e[2] <= 0 or kind.endswith("b") and e[1] <= 0:
        raise ValueError("non-terminating schedule")
    betas, taus, ratio_exp, slack = base(N, e)
    if kind.startswith("D1B2"):
        terminal = taus[-1]
        step = N ** e[1]
        ladder = [N**-2.0]
        while ladder[-1] * step < terminal * (1 - 1e-12):
            ladder.append(ladder[-1] * step)
            if len(ladder) > MAX_STEPS:
                raise ValueError("non-terminating schedule")
        if ladder[-1] < terminal:
            ladder.append(terminal)
        taus, ratio_exp = ladder, e[1]
    if e[4] is not None:
        slack = e[4]
    return ScaleSchedule(kind, int(N), tuple(e[:4]) + (slack,), tuple(betas), tuple(taus), len(taus) - (0 if kind.startswith("D1B1") else 1), ratio_exp, slack)
