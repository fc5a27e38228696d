"""Named experiments.  Each runner maps ``(config, master seed)`` to tables,
a summary and a list of in-run checks; nothing here touches the filesystem."""
from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
from scipy.optimize import brentq

from ..dynamics import SpinConfig, coupled_simulate, generator_matrix, product_law, simulate
from ..ensembles import (
    EnsembleSpec,
    azuma_tail_check,
    disjoint_average_bound_check,
    entropy_production_trajectory,
    kv_sweep,
    lsi_ratio,
    spectral_gap,
)
from ..heat_kernel import KernelSpec, dense_generator, kernel_bounds_report, kernel_row
from ..model import ModelParams, Segment, Torus, continuum_match, mean_invariance_residual
from ..observables import (
    builtin_pseudo_gradients,
    calibrate_vN,
    cutoff_spatial,
    height_grid,
    origin_flux,
    replay_consistency,
    running_integral_sup,
    StepPath,
)
from ..schedules import make_schedule
from ..she import heat_step, make_grid, she_solve
from .config import ConfigError, params_from_config
from .record import Check
from .stats import holder_time_exponent, ks_distance, pooled_moment_gap
from .. import _kernels

__all__ = ["ExperimentResult", "RUNNERS", "run_named", "replica_seeds", "parallel_map"]


@dataclass
class ExperimentResult:
    tables: dict = field(default_factory=dict)
    summary: dict = field(default_factory=dict)
    checks: list = field(default_factory=list)


def replica_seeds(master: int, count: int) -> list:
    """Independent per-replica seeds derived from the master seed."""
    children = np.random.SeedSequence(int(master)).spawn(int(count))
    return [int(c.generate_state(1, np.uint64)[0] >> np.uint64(1)) for c in children]


def parallel_map(fn, items, workers: int = 1) -> list:
    """Ordered map; results never depend on ``workers``."""
    items = list(items)
    if workers <= 1 or len(items) < 2:
        return [fn(i) for i in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (4 * workers))))


def _replicas(cfg, default: int) -> int:
    n = int(cfg.get("replicas", default))
    if n < 1:
        raise ConfigError("replicas must be at least 1")
    return n


def _params(cfg, **defaults) -> ModelParams:
    merged = {**defaults, **cfg}
    return params_from_config(merged)


# ---------------------------------------------------------------- identity and exact stationarity

def run_identity(cfg, seed):
    rng = np.random.default_rng(seed)
    count = int(cfg.get("samples", 500))
    max_m = int(cfg.get("max_range", 8))
    rows, worst = [], 0.0
    for i in range(count):
        m = int(rng.integers(1, max_m + 1))
        alpha = rng.uniform(0.05, 2.0, m)
        alpha /= alpha.sum()
        gamma = rng.uniform(-3.0, 3.0, m)
        N = int(rng.integers(4, 4096))
        p = ModelParams(N, tuple(alpha), tuple(gamma), Torus(max(2 * m + 1, 4)))
        r = mean_invariance_residual(p)
        worst = max(worst, r)
        rows.append({"sample": i, "m": m, "N": N, "residual": r})
    tol = float(cfg.get("tol", 1e-10))
    return ExperimentResult(
        {"residuals": rows},
        {"max_residual": worst, "samples": count},
        [Check("mean invariance residual", worst <= tol, f"max {worst:.3g} <= {tol:g}")],
    )


def exact_stationarity_rows(params: ModelParams, sizes, densities) -> list:
    rows = []
    for L in sizes:
        G = generator_matrix(params.with_geometry(Torus(L)))
        for rho in densities:
            mu = product_law(L, rho).probs
            rows.append({"L": L, "rho": rho, "residual": float(np.max(np.abs(G.T @ mu)))})
    return rows


def _stationary_flux(args):
    params, T, s = args
    rng = np.random.default_rng(s)
    init = SpinConfig.bernoulli(params.geometry.n_sites, 0.0, rng)
    traj = simulate(params, init, T, s, log_noops=False)
    return origin_flux(traj), int(traj.events.size)


def run_stationarity(cfg, seed):
    params = _params(cfg, N=64, alpha=[1.0], gamma=[1.0])
    T = float(cfg.get("T", 1.0))
    reps = _replicas(cfg, 200)
    sizes = cfg.get("exact_sizes", [4, 5, 6, 7, 8, 9, 10])
    exact = exact_stationarity_rows(params, sizes, cfg.get("densities", [-0.5, 0.0, 0.5]))
    worst = max(r["residual"] for r in exact)
    seeds = replica_seeds(seed, reps)
    out = parallel_map(_stationary_flux, [(params, T, s) for s in seeds], int(cfg.get("workers", 1)))
    flux = np.array([f for f, _ in out], dtype=float)
    # net leftward current per unit time at density 0: -(1/4) sum_k k N^2 a_k g_k / sqrt N per bond crossing
    N = params.N
    expected = -0.25 * sum(k * N * N * a * g for k, (a, g) in enumerate(zip(params.alpha, params.gamma), 1)) / math.sqrt(N) * T
    se = float(flux.std(ddof=1) / math.sqrt(reps)) if reps > 1 else math.inf
    drift = [{"replica": i, "seed": s, "flux": int(f), "events": e} for i, (s, (f, e)) in enumerate(zip(seeds, out))]
    tol = float(cfg.get("tol", 1e-9))
    checks = [Check("product law stationary", worst <= tol, f"max |mu G| {worst:.3g}")]
    if reps > 1:
        checks.append(Check("stationary current", abs(flux.mean() - expected) <= 4 * se,
                            f"mean {flux.mean():.4g} vs {expected:.4g} (se {se:.3g})"))
    return ExperimentResult(
        {"exact": exact, "drift": drift},
        {"max_exact_residual": worst, "mean_flux": float(flux.mean()), "expected_flux": expected, "flux_se": se},
        checks,
    )


def run_height(cfg, seed):
    params = _params(cfg, N=64, alpha=[0.6, 0.4], gamma=[1.0, 1.0])
    target = int(cfg.get("events", 1_000_000))
    T = float(cfg.get("T", 1.0))
    rng = np.random.default_rng(seed)
    init = SpinConfig.bernoulli(params.geometry.n_sites, 0.0, rng)
    traj = simulate(params, init, T, seed)
    while traj.events.size < target:
        T *= 2
        traj = simulate(params, init, T, seed)
    lam = continuum_match(params).gartner_lambda
    viol, inc, gap, flux = replay_consistency(traj, lam, check_every=int(cfg.get("check_every", 10_000)))
    tol = float(cfg.get("tol", 1e-9))
    return ExperimentResult(
        {"consistency": [{"events": int(traj.events.size), "T": T, "violations": viol,
                          "worst_increment": inc, "worst_logz_gap": gap, "flux": flux}]},
        {"events": int(traj.events.size), "violations": viol, "worst_logz_gap": gap},
        [Check("increment identity", viol == 0 and inc <= tol, f"{viol} violations"),
         Check("incremental log Z", gap <= tol, f"gap {gap:.3g}")],
    )


# ---------------------------------------------------------------- heat kernel

def run_kernel_bounds(cfg, seed):
    N = int(cfg.get("N", 64))
    alpha = tuple(cfg.get("alpha", [0.6, 0.4]))
    L_small = int(cfg.get("L", 64))
    small = KernelSpec(L_small, N, alpha)
    Gd = dense_generator(small)
    exact_err = 0.0
    for t in (1e-4, 1e-3, 1e-2):
        P = scipy.linalg.expm(t * Gd)
        exact_err = max(exact_err, float(np.max(np.abs(P[0] - kernel_row(small, 0.0, t)))))
    big = KernelSpec(int(cfg.get("L_large", 8192)), N, alpha)
    ab = big.diffusivity
    # pre-wrap window: the spread sqrt(abar N^2 t) stays far below L / 8
    t_hi = (big.L / 16) ** 2 / (ab * N * N)
    times = np.geomspace(t_hi * 1e-3, t_hi, int(cfg.get("points", 12)))
    rep = kernel_bounds_report(big, times)
    d = np.arange(big.L)
    d = np.where(d > big.L // 2, d - big.L, d).astype(float)
    m2 = [float(np.sum(d * d * kernel_row(big, 0.0, t)) / (ab * N * N * t)) for t in times]
    m2_err = max(abs(v - 1) for v in m2)
    rows = [dict(r, m2_ratio=m2[i]) for i, r in enumerate(rep.rows())]
    checks = [
        Check("spectral vs dense exponential", exact_err <= 1e-10, f"{exact_err:.3g}"),
        Check("mass", rep.mass_deviation <= 1e-12, f"{rep.mass_deviation:.3g}"),
        Check("second moment", m2_err <= 1e-6, f"{m2_err:.3g}"),
        Check("on-diagonal exponent", abs(rep.diag_exponent + 0.5) <= 0.05, f"{rep.diag_exponent:.4f}"),
    ]
    return ExperimentResult(
        {"kernel": rows},
        {"dense_error": exact_err, "mass_deviation": rep.mass_deviation, "m2_error": m2_err,
         "diag_exponent": rep.diag_exponent, "grad_exponent": rep.grad_exponent},
        checks,
    )


# ---------------------------------------------------------------- ensembles

def _functionals(cfg):
    names = cfg.get("functionals")
    gs = builtin_pseudo_gradients()
    if names:
        gs = [g for g in gs if g.name in names]
    return gs


def run_kv(cfg, seed):
    N = int(cfg.get("N", 8))
    alpha = tuple(cfg.get("alpha", [0.6, 0.4]))
    gamma = tuple(cfg.get("gamma", [1.0] * len(alpha)))
    sizes = cfg.get("sizes", [4, 6, 8])
    taus = N**-2.0 * np.logspace(-1, 1, int(cfg.get("taus", 9)))
    rows = kv_sweep(_functionals(cfg), sizes, taus, alpha, gamma, N)
    table = [{"functional": g, "n": n, "ups": u, "tau": t, "ratio": r} for g, n, u, t, r in rows]
    worst = max(r["ratio"] for r in table)
    bound = float(cfg.get("bound", 8.0))
    return ExperimentResult(
        {"kv": table},
        {"max_ratio": worst, "cases": len(table)},
        [Check("variance bound", worst <= bound, f"max ratio {worst:.4f} <= {bound:g}")],
    )


def run_disjoint(cfg, seed):
    n = int(cfg.get("n", 12))
    alpha = tuple(cfg.get("alpha", [0.6, 0.4]))
    gs = {g.name: g for g in builtin_pseudo_gradients()}
    g = gs[cfg.get("functional", "grad2")]
    rows = []
    for J in cfg.get("J", [2, 3, 4]):
        r = disjoint_average_bound_check([g] * J, [g.width * j for j in range(J)], n, alpha)
        rows.append({"J": J, "lhs": r["lhs"], "rhs": r["rhs"], "ratio": r["ratio"]})
    worst = max(r["ratio"] for r in rows)
    bound = float(cfg.get("bound", 4.0))
    return ExperimentResult({"disjoint": rows}, {"max_ratio": worst},
                            [Check("disjoint averaging", worst <= bound, f"max ratio {worst:.4f}")])


def run_azuma(cfg, seed):
    n = int(cfg.get("n", 14))
    rho = float(cfg.get("rho", 0.0))
    grid = np.linspace(*cfg.get("c_grid", [0.05, 2.0, 40]))
    rows, ok, rigorous = [], True, True
    for name in cfg.get("functionals", ["grad1", "grad2", "antisym"]):
        g = {f.name: f for f in builtin_pseudo_gradients()}[name]
        for J in cfg.get("J", [1, 2, 3, 4]):
            starts = [g.width * j for j in range(J)]
            if starts[-1] + g.width > n:
                continue
            r = azuma_tail_check([g] * J, starts, n, rho, grid)
            ok &= r["holds"]
            rigorous &= r["rigorous"]
            rows += [{"functional": name, "J": J, "C": c, "tail": t, "bound": b} for c, t, b in r["rows"]]
    return ExperimentResult({"tails": rows}, {"holds": ok, "rigorous": rigorous},
                            [Check("tail bound", ok, f"{len(rows)} grid points")])


def _random_densities(ens, count, rng):
    """Lognormal fields, smooth exponential tilts and point masses."""
    K = ens.size
    spins = ens.spins.astype(float)
    out = []
    for i in range(count):
        kind = i % 4
        if kind == 0:
            f = np.exp(rng.normal(0.0, rng.uniform(0.1, 3.0), K))
        elif kind == 1:
            theta = rng.normal(0.0, 1.5, ens.n)
            f = np.exp(spins @ theta)
        elif kind == 2:
            f = np.zeros(K)
            f[rng.integers(K)] = 1.0
        else:
            f = np.exp(rng.normal(0.0, 1.0, K)) + (rng.random(K) < 0.1) * rng.exponential(20.0, K)
        out.append(f / ens.expect(f))
    return out


def run_lsi(cfg, seed):
    alpha = tuple(cfg.get("alpha", [0.6, 0.4]))
    sizes = list(cfg.get("sizes", list(range(3, 11))))
    gaps = spectral_gap(sizes, alpha)
    gap_rows = [{"n": n, "ups": k, "gap": g, "gap_n2": s} for n, k, g, s in gaps]
    scaled = [r["gap_n2"] for r in gap_rows]
    band = max(scaled) / min(scaled)
    rng = np.random.default_rng(seed)
    count = int(cfg.get("densities", 1000))
    lsi_rows, max_by_n = [], {}
    for n in sizes:
        ens = EnsembleSpec.canonical(n, ups=n // 2)
        best = max(lsi_ratio(f, ens, alpha) for f in _random_densities(ens, count, rng))
        max_by_n[n] = best
        lsi_rows.append({"n": n, "max_lsi_ratio": best})
    # non-exploding: no size exceeds four times the largest ratio seen at smaller sizes
    growth = max(max_by_n[b] / max(max_by_n[a] for a in sizes if a < b) for b in sizes[1:]) if len(sizes) > 1 else 1.0
    return ExperimentResult(
        {"gap": gap_rows, "lsi": lsi_rows},
        {"gap_band": band, "lsi_growth": growth},
        [Check("gap band", band <= 4.0, f"max/min gap n^2 = {band:.3f}"),
         Check("log-Sobolev ratios", growth <= 4.0, f"max growth {growth:.3f}")],
    )


def run_entropy(cfg, seed):
    L = int(cfg.get("L", 8))
    alpha = tuple(cfg.get("alpha", [0.6, 0.4]))
    gamma = tuple(cfg.get("gamma", [1.0] * len(alpha)))
    Ns = cfg.get("Ns", [8, 16])
    T = float(cfg.get("T", 0.05))
    block = cfg.get("block", [0, 1, 2, 3])
    start = SpinConfig.alternating(L)
    code = int(sum(1 << i for i, s in enumerate(start.spins) if s == 1))
    point = np.zeros(1 << L)
    point[code] = float(1 << L)
    curves, integrals, zero_worst, positive = [], {}, 0.0, True
    for N in Ns:
        p = ModelParams(int(N), alpha, gamma, Torus(L))
        flat = entropy_production_trajectory(p, np.ones(1 << L), T, block, grid=16)
        zero_worst = max(zero_worst, float(np.max(np.abs(flat.values))))
        c = entropy_production_trajectory(p, point, T, block, tol=float(cfg.get("tol", 1e-4)))
        positive &= bool(np.all(c.values >= 0) and c.values[0] > 0 and np.isfinite(c.integral))
        integrals[int(N)] = c.integral
        curves += [{"N": int(N), "t": float(t), "dirichlet": float(v)} for t, v in zip(c.times, c.values)]
    ordered = [integrals[int(N)] for N in Ns]
    decreasing = all(b < a for a, b in zip(ordered, ordered[1:]))
    return ExperimentResult(
        {"curve": curves, "integrals": [{"N": N, "integral": v} for N, v in integrals.items()]},
        {"stationary_max": zero_worst, "integrals": {str(k): v for k, v in integrals.items()}},
        [Check("stationary start", zero_worst <= 1e-12, f"{zero_worst:.3g}"),
         Check("point mass positive and integrable", positive, ""),
         Check("decreasing in N", decreasing, str(ordered))],
    )


# ---------------------------------------------------------------- localization coupling

def window_length(N: int, tau: float, beta_x: float, log_factor: float = 10.0, t_extra: float = 0.0) -> int:
    s = 2 * tau + 2 * t_extra
    return int(math.ceil(N * math.sqrt(s) * log_factor + N**1.5 * s * log_factor + N**beta_x * log_factor))


def _coupling_replica(args):
    params, window, center, T, radius, s = args
    rng = np.random.default_rng(s)
    init = SpinConfig.bernoulli(params.geometry.n_sites, 0.0, rng)
    st = coupled_simulate(params, window, center, init, T, s, ball_radius=radius)
    return st.contamination_time, st.rings


def run_coupling(cfg, seed):
    N = int(cfg.get("N", 64))
    alpha = tuple(cfg.get("alpha", [0.6, 0.4]))
    gamma = tuple(cfg.get("gamma", [1.0] * len(alpha)))
    m = len(alpha)
    sched = make_schedule(cfg.get("schedule", "D1B1a"), N)
    tau = float(cfg.get("tau", sched.taus[-1]))
    l = window_length(N, tau, sched.beta_x, float(cfg.get("log_factor", 10.0)))
    margin = int(cfg.get("margin", l))
    half = l + margin
    params = ModelParams(N, alpha, gamma, Segment.centered(half))
    center = half
    window = (center - l, 2 * l + 1)
    radius = 3 * m * math.ceil(N**sched.beta_x) + m
    reps = _replicas(cfg, 1000)
    seeds = replica_seeds(seed, reps)
    out = parallel_map(_coupling_replica, [(params, window, center, tau, radius, s) for s in seeds], int(cfg.get("workers", 1)))
    hits = sum(1 for t, _ in out if math.isfinite(t))
    freq = hits / reps
    rows = [{"replica": i, "seed": s, "contamination_time": t, "rings": r} for i, (s, (t, r)) in enumerate(zip(seeds, out))]
    limit = float(cfg.get("max_frequency", 0.01))
    return ExperimentResult(
        {"coupling": rows},
        {"window_half_length": l, "segment_sites": 2 * half + 1, "ball_radius": radius, "tau": tau, "contamination_frequency": freq},
        [Check("contamination frequency", freq <= limit, f"{hits}/{reps}")],
    )


# ---------------------------------------------------------------- schedule decay

def _window_sites(L, P, J, g, m):
    """``(P, J, width)`` site indices of P well separated spatial-average windows."""
    span = 3 * J * m + g.width
    step = max(span + 1, L // P)
    sites = np.empty((P, J, g.width), dtype=np.int64)
    for p in range(P):
        x = (p * step + span) % L
        for l in range(1, J + 1):
            base = x - 3 * l * m + g.offset
            sites[p, l - 1] = (base + np.arange(g.width)) % L
    return sites


def _decay_replica(args):
    params, g, J, P, T, taus, cut, betas, s = args
    L = params.geometry.n_sites
    rng = np.random.default_rng(s)
    init = SpinConfig.bernoulli(L, 0.0, rng)
    traj = simulate(params, init, T, s, log_noops=False)
    sites = _window_sites(L, P, J, g, params.m)
    times, xs, ks, ex, _ = traj.index_columns()
    table = np.asarray(g.table, dtype=float)
    pt, pv, start = _kernels.functional_paths(
        np.array(init.spins, dtype=np.int8), True, np.ascontiguousarray(times), xs.astype(np.int64),
        ks.astype(np.int64), ex.astype(np.int8), sites, table, T)
    N = params.N
    sq = np.zeros(len(taus))
    trig = np.zeros(len(betas))
    for p in range(P):
        path = StepPath(pt[start[p]:start[p + 1]], cutoff_spatial(pv[start[p]:start[p + 1]], N, *cut), T)
        cum = path._cumulative(np.asarray(taus))
        first = path.values[0]
        avg = np.where(np.asarray(taus) > 0, cum / np.where(np.asarray(taus) > 0, taus, 1.0), first)
        sq += avg * avg
        for i, (tau, beta_plus) in enumerate(betas):
            trig[i] += running_integral_sup(path, 0.0, tau) >= N ** (-beta_plus)
    return sq / P, trig / P


def run_schedule_decay(cfg, seed):
    N = int(cfg.get("N", 256))
    params = _params(cfg, N=N, alpha=[0.6, 0.4], gamma=[1.0, 1.0])
    if not isinstance(params.geometry, Torus):
        raise ConfigError("schedule decay runs on a torus")
    kind = cfg.get("schedule", "D1B2a")
    eps = cfg.get("epsilons")
    sched = make_schedule(kind, N, eps)
    gs = {f.name: f for f in builtin_pseudo_gradients()}
    g = gs[cfg.get("functional", "grad1")]
    J = int(cfg.get("J", math.floor(N**sched.beta_x)))
    eps1 = sched.epsilons[0]
    cut = (eps1, sched.beta_x)
    taus = list(sched.taus)
    trig_sched = make_schedule("D1B1a" if kind.endswith("a") else "D1B1b", N, eps)
    betas = [(t, trig_sched.cutoffs(i)[0]) for i, t in enumerate(trig_sched.taus)]
    T = max(taus[-1], trig_sched.taus[-1])
    if float(cfg.get("T", T)) < T:
        raise ConfigError("horizon too short for the schedule")
    T = float(cfg.get("T", T))
    P = int(cfg.get("windows", 4))
    reps = _replicas(cfg, 200)
    seeds = replica_seeds(seed, reps)
    out = parallel_map(_decay_replica, [(params, g, J, P, T, taus, cut, betas, s) for s in seeds], int(cfg.get("workers", 1)))
    sq = np.array([o[0] for o in out])
    trig = np.array([o[1] for o in out])
    mean = sq.mean(axis=0)
    se = sq.std(axis=0, ddof=1) / math.sqrt(reps) if reps > 1 else np.full(len(taus), math.inf)
    rows = [{"m": i, "tau": t, "mean_square": float(mean[i]), "se": float(se[i])} for i, t in enumerate(taus)]
    trig_rows = [{"m": i + 1, "tau": t, "beta_plus": b, "trigger_fraction": float(trig[:, i].mean())} for i, (t, b) in enumerate(betas)]
    gap = mean[0] - mean[-1]
    sep = math.hypot(se[0], se[-1])
    return ExperimentResult(
        {"decay": rows, "triggers": trig_rows},
        {"schedule": kind, "J": J, "m_infinity": sched.m_infinity, "first": float(mean[0]), "last": float(mean[-1]),
         "separation_sigmas": float(gap / sep) if sep > 0 else math.inf},
        [Check("strictly decreasing", bool(np.all(np.diff(mean) < 0)), f"{len(taus)} scales"),
         Check("endpoint decay", gap > 3 * sep, f"{mean[0]:.4g} -> {mean[-1]:.4g}, {gap / sep if sep else math.inf:.1f} sigma")],
    )


# ---------------------------------------------------------------- time regularity

def _holder_replica(args):
    params, T, grid, lam, vN, s = args
    init = SpinConfig.alternating(params.geometry.n_sites, params.geometry.first_label)
    traj = simulate(params, init, T, s, log_noops=False)
    h = height_grid(traj, grid)
    return np.exp(-lam * h + vN * grid[:, None])


def run_holder(cfg, seed):
    N = int(cfg.get("N", 128))
    params = _params(cfg, N=N, alpha=[0.6, 0.4], gamma=[1.0, 1.0])
    lam = continuum_match(params).gartner_lambda
    vN = float(cfg.get("vN", calibrate_vN(params)))
    dt = float(cfg.get("dt", 0.5 * N**-2.0))
    T = float(cfg.get("T", 2.0 / N))
    grid = np.arange(int(round(T / dt)) + 1) * dt
    lo, hi = N**-2.0, 1.0 / N
    lags = sorted({int(round(v)) for v in np.geomspace(lo / dt, hi / dt, int(cfg.get("lags", 8)))})
    reps = _replicas(cfg, 200)
    seeds = replica_seeds(seed, reps)
    fields = parallel_map(_holder_replica, [(params, T, grid, lam, vN, s) for s in seeds], int(cfg.get("workers", 1)))
    slope, taus, inc = holder_time_exponent(np.stack(fields), dt, lags)
    lo_b, hi_b = cfg.get("band", [0.15, 0.40])
    return ExperimentResult(
        {"increments": [{"tau": float(t), "mean_sup_increment": float(v)} for t, v in zip(taus, inc)]},
        {"exponent": slope, "lambda": lam, "vN": vN},
        [Check("time regularity exponent", lo_b <= slope <= hi_b, f"{slope:.4f} in [{lo_b}, {hi_b}]")],
    )


# ---------------------------------------------------------------- SHE comparison

def matched_gamma(N: int, alpha, target: float) -> float:
    """Nearest-neighbour asymmetry whose continuum noise strength equals ``target``."""
    def f(g):
        return continuum_match(ModelParams(N, tuple(alpha), (g,), Torus(N))).she_lambda - target
    hi = 0.999 * math.sqrt(N)
    return brentq(f, 1e-9, hi, xtol=1e-14, rtol=1e-13) if target > 0 else 0.0


def _particle_z(args):
    params, T, vN, lam, s = args
    init = SpinConfig.alternating(params.geometry.n_sites, params.geometry.first_label)
    traj = simulate(params, init, T, s, log_noops=False)
    flux = origin_flux(traj)
    return math.exp(-lam * 2.0 * flux / math.sqrt(params.N) + vN * T)


def run_kpz_compare(cfg, seed):
    Ns = [int(n) for n in cfg.get("Ns", [32, 64, 128])]
    alpha = tuple(cfg.get("alpha", [1.0]))
    if len(alpha) != 1:
        raise ConfigError("the comparison uses nearest-neighbour jumps")
    target = float(cfg.get("she_lambda", 1.0))
    T = float(cfg.get("T", 0.5))
    reps = _replicas(cfg, 1000)
    she_reps = int(cfg.get("she_replicas", 2 * reps))
    dx = float(cfg.get("dx", 1.0 / 64))
    workers = int(cfg.get("workers", 1))
    rows, ks_seq = [], []
    moment_ok = True
    seq = np.random.SeedSequence(int(seed)).spawn(len(Ns))
    for N, ss in zip(Ns, seq):
        g = matched_gamma(N, alpha, target)
        params = ModelParams(N, alpha, (g,), Torus(N))
        match = continuum_match(params)
        vN = calibrate_vN(params)
        pseed, sseed = (int(v) for v in ss.generate_state(2, np.uint64) >> np.uint64(1))
        seeds = replica_seeds(pseed, reps)
        z = np.array(parallel_map(_particle_z, [(params, T, vN, match.gartner_lambda, s) for s in seeds], workers))
        grid = make_grid(1.0, dx, match.she_alpha, match.she_lambda)
        ref = she_solve(grid, T, she_reps, sseed).at(0.0)
        ks = ks_distance(z, ref)
        gaps = [pooled_moment_gap(z, ref, p) for p in (1, 2)]
        ok = all(gp <= 3 * se for gp, se in gaps)
        if N == Ns[-1]:
            moment_ok = ok
        ks_seq.append(ks)
        rows.append({"N": N, "gamma": g, "she_alpha": match.she_alpha, "she_lambda": match.she_lambda, "vN": vN,
                     "ks": ks, "mean_particle": float(z.mean()), "mean_she": float(ref.mean()),
                     "m1_gap": gaps[0][0], "m1_se": gaps[0][1], "m2_gap": gaps[1][0], "m2_se": gaps[1][1]})
    monotone = all(b <= a for a, b in zip(ks_seq, ks_seq[1:]))
    ks_cap = float(cfg.get("ks_max", 0.15))
    return ExperimentResult(
        {"compare": rows},
        {"ks": ks_seq},
        [Check("KS non-increasing in N", monotone, str([round(v, 4) for v in ks_seq])),
         Check("KS at largest N", ks_seq[-1] <= ks_cap, f"{ks_seq[-1]:.4f} <= {ks_cap}"),
         Check("first two moments", moment_ok, "within 3 pooled sigma at largest N")],
    )


def run_she(cfg, seed):
    alpha = float(cfg.get("alpha", 1.0))
    lam = float(cfg.get("lambda", 0.5))
    T = float(cfg.get("T", 0.25))
    dx = float(cfg.get("dx", 1.0 / 32))
    reps = _replicas(cfg, 2000)
    s1, s2, s3 = (int(v) for v in np.random.SeedSequence(int(seed)).generate_state(3, np.uint64) >> np.uint64(1))
    # the mean-field comparison stops early enough for the cosine mode to stay visible
    T_mean = float(cfg.get("T_mean", 0.05))
    grid = make_grid(1.0, dx, alpha, lam, Z0=1.0 + 0.5 * np.cos(2 * np.pi * np.arange(int(round(1 / dx))) * dx))
    ens = she_solve(grid, T_mean, reps, s1)
    # deterministic semigroup with the same step sequence
    Z = np.array(grid.Z, dtype=float)
    full = int(math.floor(T_mean / grid.dt + 1e-9))
    for _ in range(full):
        Z = heat_step(Z, grid)
    tail = T_mean - full * grid.dt
    if tail > 1e-15:
        Z = heat_step(Z, replace(grid, dt=tail))
    mean = ens.fields.mean(axis=0)
    dev = Z - Z.mean()
    slope = float(np.dot(dev, mean - mean.mean()) / np.dot(dev, dev))
    coarse = she_solve(make_grid(1.0, dx, alpha, lam), T, reps, s2)
    fine = she_solve(make_grid(1.0, dx / 2, alpha, lam), T, reps, s3)
    a, b = coarse.at(0.0), fine.at(0.0)
    va, vb = a.var(ddof=1), b.var(ddof=1)
    # standard error of a sample variance from the fourth central moment
    def var_se(x):
        c = x - x.mean()
        return math.sqrt(max(np.mean(c**4) - np.mean(c**2) ** 2, 0.0) / x.size)
    sep = math.hypot(var_se(a), var_se(b))
    clamps = ens.clamps + coarse.clamps + fine.clamps
    return ExperimentResult(
        {"mean_field": [{"x": float(x), "semigroup": float(s), "mean": float(m)} for x, s, m in zip(grid.x, Z, mean)],
         "refinement": [{"dx": dx, "variance": float(va)}, {"dx": dx / 2, "variance": float(vb)}]},
        {"slope": slope, "clamps": clamps, "variance_gap_sigmas": float(abs(va - vb) / sep) if sep else 0.0},
        [Check("mean follows the semigroup", abs(slope - 1) <= 0.02, f"slope {slope:.4f}"),
         Check("no positivity clamps", clamps == 0, str(clamps)),
         Check("refinement consistency", abs(va - vb) <= 3 * sep, f"{va:.4g} vs {vb:.4g}")],
    )


RUNNERS = {
    "identity": run_identity,
    "stationarity": run_stationarity,
    "height": run_height,
    "kernel-bounds": run_kernel_bounds,
    "kv": run_kv,
    "disjoint": run_disjoint,
    "lsi": run_lsi,
    "azuma": run_azuma,
    "coupling": run_coupling,
    "entropy-production": run_entropy,
    "schedule-decay": run_schedule_decay,
    "holder": run_holder,
    "kpz-compare": run_kpz_compare,
    "she": run_she,
}


def run_named(cfg: dict, seed: int) -> tuple:
    """``(ExperimentResult, wall seconds)`` for ``cfg["experiment"]``."""
    name = cfg.get("experiment")
    if name not in RUNNERS:
        raise ConfigError(f"unknown experiment {name!r}; choose from {sorted(RUNNERS)}")
    if "replicas" in cfg:
        _replicas(cfg, 1)
    start = time.perf_counter()
    result = RUNNERS[name](cfg, int(seed))
    return result, time.perf_counter() - start
