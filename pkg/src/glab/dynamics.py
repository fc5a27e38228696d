"""Event-driven simulation, exact law evolution and the two-species coupling."""
from __future__ import annotations

import csv
import io
import math
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .model import ModelParams, Segment, Torus, validate_params

__all__ = [
    "SpinConfig",
    "JumpEvent",
    "Trajectory",
    "CoupledState",
    "LawVector",
    "kernel_seed",
    "simulate",
    "step",
    "select_channel",
    "generator_matrix",
    "product_law",
    "evolve_law_exact",
    "coupled_simulate",
    "discrepancy_count",
    "write_journal",
    "read_journal",
    "EVENT_DTYPE",
]

DIRECTION_NAMES = {1: "right", -1: "left", 0: "neutral"}
EVENT_DTYPE = np.dtype(
    [("time", "<f8"), ("x", "<i4"), ("k", "<i2"), ("executed", "u1"), ("direction", "i1")]
)
MAX_TOTAL_RATE = 1e300


@dataclass(frozen=True)
class SpinConfig:
    spins: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.spins, dtype=np.int8)
        if s.ndim != 1 or not np.all(np.abs(s) == 1):
            raise ValueError("spins must be a 1-d array of +1/-1")
        s = s.copy()
        s.setflags(write=False)
        object.__setattr__(self, "spins", s)

    @property
    def n_sites(self) -> int:
        return self.spins.shape[0]

    @classmethod
    def alternating(cls, n: int, first_label: int = 0) -> "SpinConfig":
        """Flat density-1/2 data: +1 on even labels, -1 on odd ones."""
        labels = np.arange(first_label, first_label + n)
        return cls(np.where(labels % 2 == 0, 1, -1))

    @classmethod
    def narrow_wedge(cls, labels) -> "SpinConfig":
        labels = np.asarray(labels)
        return cls(np.where(labels > 0, 1, -1))

    @classmethod
    def bernoulli(cls, n: int, rho: float, rng: np.random.Generator) -> "SpinConfig":
        return cls(np.where(rng.random(n) < (1 + rho) / 2, 1, -1))

    def __eq__(self, other):
        return isinstance(other, SpinConfig) and np.array_equal(self.spins, other.spins)

    def __hash__(self):
        return hash(self.spins.tobytes())


@dataclass(frozen=True)
class JumpEvent:
    time: float
    x: int
    k: int
    executed: bool
    direction: str

    @property
    def bond(self) -> tuple:
        return (self.x, self.k)


@dataclass
class Trajectory:
    """Initial configuration plus the event log of a run.

    ``events`` is a structured array with ``EVENT_DTYPE``; ``x`` holds site
    labels.  Rejected clock rings are not events.
    """

    initial: SpinConfig
    events: np.ndarray
    horizon: float
    rng_seed: int
    params: ModelParams

    def __len__(self):
        return self.events.shape[0]

    def event_list(self) -> list:
        return [
            JumpEvent(float(e["time"]), int(e["x"]), int(e["k"]), bool(e["executed"]), DIRECTION_NAMES[int(e["direction"])])
            for e in self.events
        ]

    def index_columns(self):
        """Event columns with site indices (not labels), as the kernels expect."""
        geo = self.params.geometry
        xs = (self.events["x"] - geo.first_label).astype(np.int32)
        return self.events["time"], xs, self.events["k"], self.events["executed"].astype(np.int8), self.events["direction"]

    @property
    def final(self) -> SpinConfig:
        return replay(self.initial, self.events, self.params)

    def to_csv(self, fh=None) -> str:
        buf = fh or io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["time", "x", "k", "executed", "direction"])
        for e in self.events:
            w.writerow([repr(float(e["time"])), int(e["x"]), int(e["k"]), int(e["executed"]), DIRECTION_NAMES[int(e["direction"])]])
        return buf.getvalue() if fh is None else ""


def replay(initial: SpinConfig, events: np.ndarray, params: ModelParams) -> SpinConfig:
    geo = params.geometry
    spins = np.array(initial.spins, dtype=np.int8)
    xs = (events["x"] - geo.first_label).astype(np.int32)
    _kernels.apply_events(spins, geo.periodic, xs, events["k"].astype(np.int16), events["executed"].astype(np.int8))
    return SpinConfig(spins)


def kernel_seed(seed: int) -> int:
    """Map a 64-bit seed to the 32-bit seed of the compiled generator."""
    return int(np.random.SeedSequence(int(seed) & ((1 << 64) - 1)).generate_state(1, np.uint32)[0])


def _rate_arrays(params: ModelParams):
    n2a = params.N**2 * params.alpha_array
    return n2a.astype(np.float64), params.asym.astype(np.float64)


def simulate(params: ModelParams, initial: SpinConfig, horizon: float, seed: int, *, log_noops: bool = True) -> Trajectory:
    """Exact continuous-time simulation up to ``horizon``.

    With ``log_noops=False`` firings of equal-spin bonds are dropped from the
    log (the configuration path is unchanged).
    """
    validate_params(params)
    if horizon < 0:
        raise ValueError("horizon must be nonnegative")
    geo = params.geometry
    if initial.n_sites != geo.n_sites:
        raise ValueError("initial configuration does not match the geometry")
    n2a, asym = _rate_arrays(params)
    total = float(np.sum(n2a * np.maximum(1.0, 1.0 - asym))) * geo.n_sites
    if not math.isfinite(total) or total > MAX_TOTAL_RATE:
        raise OverflowError("total clock rate exceeds floating-point range")
    spins = np.array(initial.spins, dtype=np.int8)
    t, x, k, ex, d = _kernels.run_chain(spins, geo.periodic, n2a, asym, float(horizon), kernel_seed(seed), log_noops)
    events = np.empty(t.shape[0], dtype=EVENT_DTYPE)
    events["time"] = t
    events["x"] = x + geo.first_label
    events["k"] = k
    events["executed"] = ex
    events["direction"] = d
    return Trajectory(initial, events, float(horizon), int(seed), params)


def _channel_list(params: ModelParams):
    geo = params.geometry
    chans = []
    for k in range(1, params.m + 1):
        for i in range(geo.bond_count(k)):
            chans.append((i, k))
    return chans


def select_channel(rates, rng: np.random.Generator) -> int:
    """Index drawn with probability proportional to ``rates``."""
    rates = np.asarray(rates, dtype=float)
    cum = np.cumsum(rates)
    return int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))


def step(state, rng: np.random.Generator, params: ModelParams):
    """One transition by the direct method.  ``state`` is ``(SpinConfig, time)``."""
    config, t = state
    geo = params.geometry
    spins = config.spins
    n = geo.n_sites
    chans = _channel_list(params)
    rates = np.empty(len(chans))
    for c, (i, k) in enumerate(chans):
        rates[c] = jump_rate_index(spins, i, k, params)
    total = rates.sum()
    if total <= 0:
        raise ValueError("no channel has a positive rate")
    t = t + rng.exponential(1.0 / total)
    i, k = chans[select_channel(rates, rng)]
    j = (i + k) % n if geo.periodic else i + k
    a, b = spins[i], spins[j]
    new = np.array(spins)
    if a != b:
        new[i], new[j] = b, a
    direction = "neutral" if a == b else ("right" if a == 1 else "left")
    event = JumpEvent(float(t), int(i + geo.first_label), int(k), bool(a != b), direction)
    return (SpinConfig(new), t), event


def jump_rate_index(spins, i: int, k: int, params: ModelParams) -> float:
    n = spins.shape[0]
    j = (i + k) % n if params.geometry.periodic else i + k
    base = params.N**2 * params.alpha[k - 1]
    if spins[i] == -1 and spins[j] == 1:
        return base * (1.0 - params.gamma[k - 1] / math.sqrt(params.N))
    return base


# ---------------------------------------------------------------- exact laws

MAX_EXACT_SITES = 12


def _state_spins(n: int) -> np.ndarray:
    """Spin table: row ``s`` is the configuration encoded by bits of ``s``."""
    s = np.arange(1 << n)[:, None]
    return np.where((s >> np.arange(n)) & 1, 1, -1).astype(np.int8)


@dataclass(frozen=True)
class LawVector:
    """Probabilities over the ``2^L`` configurations; bit ``i`` set means spin +1 at site index ``i``."""

    probs: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.probs, dtype=float)
        if p.ndim != 1 or p.size & (p.size - 1):
            raise ValueError("law must have length 2^L")
        if np.any(p < -1e-12) or abs(p.sum() - 1.0) > 1e-10:
            raise ValueError("law must be a probability vector")
        object.__setattr__(self, "probs", p)

    @property
    def n_sites(self) -> int:
        return int(self.probs.size).bit_length() - 1

    @classmethod
    def point_mass(cls, config: SpinConfig) -> "LawVector":
        n = config.n_sites
        code = int(np.sum((config.spins == 1) << np.arange(n)))
        p = np.zeros(1 << n)
        p[code] = 1.0
        return cls(p)


def product_law(n: int, rho: float) -> LawVector:
    """Product Bernoulli law with mean spin ``rho``."""
    up = (1 + rho) / 2
    spins = _state_spins(n)
    k = (spins == 1).sum(axis=1)
    return LawVector(up**k * (1 - up) ** (n - k))


def generator_matrix(params: ModelParams, *, include_noops: bool = False) -> sp.csr_matrix:
    """Sparse forward generator ``G`` with ``G[s, s']`` the rate ``s -> s'``."""
    geo = params.geometry
    n = geo.n_sites
    if n > MAX_EXACT_SITES:
        raise ValueError(f"exact generator limited to {MAX_EXACT_SITES} sites")
    spins = _state_spins(n)
    states = np.arange(1 << n)
    rows, cols, vals = [], [], []
    for k in range(1, params.m + 1):
        for i in range(geo.bond_count(k)):
            j = (i + k) % n if geo.periodic else i + k
            a = spins[:, i]
            b = spins[:, j]
            rate = np.full(states.size, params.N**2 * params.alpha[k - 1])
            rate[(a == -1) & (b == 1)] *= 1.0 - params.gamma[k - 1] / math.sqrt(params.N)
            moving = a != b
            target = states ^ ((1 << i) | (1 << j))
            rows.append(states[moving])
            cols.append(target[moving])
            vals.append(rate[moving])
    rows = np.concatenate(rows) if rows else np.zeros(0, int)
    cols = np.concatenate(cols) if cols else np.zeros(0, int)
    vals = np.concatenate(vals) if vals else np.zeros(0)
    off = sp.coo_matrix((vals, (rows, cols)), shape=(states.size, states.size)).tocsr()
    out = -np.asarray(off.sum(axis=1)).ravel()
    return (off + sp.diags(out)).tocsr()


def evolve_law_exact(params: ModelParams, law0: LawVector, T: float) -> LawVector:
    """``law0 exp(T G)``; dense Padé exponential up to 512 states, Krylov-free
    truncated-Taylor action (``expm_multiply``) above."""
    n = params.geometry.n_sites
    if n > MAX_EXACT_SITES:
        raise ValueError("dimension overflow: at most 12 sites")
    if law0.n_sites != n:
        raise ValueError("law does not match the geometry")
    if T == 0:
        return law0
    G = generator_matrix(params)
    if G.shape[0] <= 512:
        p = law0.probs @ scipy.linalg.expm(T * G.toarray())
    else:
        p = spla.expm_multiply(T * G.T.tocsc(), law0.probs)
    p = np.clip(p, 0.0, None)
    return LawVector(p / p.sum())


# ---------------------------------------------------------------- coupling

@dataclass
class CoupledState:
    """Segment species and torus-window species after a coupled run.

    ``species_b`` spins sit on segment indices ``window[0] .. window[0]+len-1``.
    """

    species_a: np.ndarray
    species_b: np.ndarray
    window: tuple
    contamination_time: float = math.inf
    rings: int = 0
    ball: tuple = field(default=(0, -1))

    @property
    def discrepancy_set(self) -> np.ndarray:
        w0 = self.window[0]
        overlap = self.species_a[w0 : w0 + self.species_b.size]
        return np.flatnonzero(overlap != self.species_b) + w0


def discrepancy_count(state: CoupledState) -> int:
    return int(state.discrepancy_set.size)


def coupled_simulate(
    params: ModelParams,
    window: tuple,
    center: int,
    initial: SpinConfig,
    horizon: float,
    seed: int,
    *,
    ball_radius: int,
    initial_b: SpinConfig | None = None,
) -> CoupledState:
    """Run the segment dynamic and the window-periodic dynamic with shared clocks.

    ``window = (w0, W)`` in segment indices; ``center`` is a segment index and
    the contamination ball is ``[center - r, center + r]`` (must lie in the
    window).  Bonds present in both species share their clock ring and its
    uniform mark, which realises the spin-swap coupling of the symmetric part
    together with the basic coupling of the one-directional residual.
    """
    validate_params(params)
    if not isinstance(params.geometry, Segment):
        raise ValueError("species A runs on a segment")
    w0, W = window
    n = initial.n_sites
    if w0 < 0 or w0 + W > n or W <= params.m:
        raise ValueError("window must fit inside the segment and exceed the range")
    lo, hi = center - ball_radius, center + ball_radius
    if lo < w0 or hi >= w0 + W:
        raise ValueError("contamination ball must lie inside the window")
    a = np.array(initial.spins, dtype=np.int8)
    b = np.array(initial_b.spins if initial_b is not None else a[w0 : w0 + W], dtype=np.int8)
    if b.size != W:
        raise ValueError("species B configuration must cover the window")
    n2a, asym = _rate_arrays(params)
    tc, rings = _kernels.coupled_run(a, b, w0, n2a, asym, float(horizon), kernel_seed(seed), lo, hi)
    return CoupledState(a, b, (w0, W), float(tc), int(rings), (lo, hi))


# ---------------------------------------------------------------- journal

JOURNAL_MAGIC = b"GLABJRN1"
_HEADER = struct.Struct("<8sHIiBdQQ")


def write_journal(traj: Trajectory, fh) -> None:
    """Binary journal, all fields little-endian.

    Header (48 bytes): magic ``GLABJRN1`` (8s), version u16 = 1, site count
    u32, first label i32, periodic flag u8, horizon f64, seed u64, event count
    u64.  Then one i8 spin per site, then 16-byte records
    ``time f64 | x i32 | k i16 | executed u8 | direction i8``.
    """
    geo = traj.params.geometry
    fh.write(
        _HEADER.pack(
            JOURNAL_MAGIC, 1, geo.n_sites, geo.first_label, int(geo.periodic),
            traj.horizon, traj.rng_seed & ((1 << 64) - 1), len(traj),
        )
    )
    fh.write(traj.initial.spins.astype("<i1").tobytes())
    fh.write(traj.events.astype(EVENT_DTYPE).tobytes())


def read_journal(fh, params: ModelParams) -> Trajectory:
    raw = fh.read(_HEADER.size)
    magic, version, n, first, periodic, horizon, seed, count = _HEADER.unpack(raw)
    if magic != JOURNAL_MAGIC or version != 1:
        raise ValueError("not a journal file")
    geo = params.geometry
    if n != geo.n_sites or first != geo.first_label or bool(periodic) != geo.periodic:
        raise ValueError("journal geometry does not match the parameters")
    spins = np.frombuffer(fh.read(n), dtype="<i1")
    events = np.frombuffer(fh.read(count * EVENT_DTYPE.itemsize), dtype=EVENT_DTYPE).copy()
    return Trajectory(SpinConfig(spins), events, horizon, seed, params)
