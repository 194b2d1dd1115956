"""Seeded, parallel Monte Carlo engine for the benchmark statistics.

Reproducibility contract: every replicate draws from its own counter-based
Philox stream keyed by ``(seed, replicate_index)`` through
``numpy.random.SeedSequence`` spawn keys, and every replicate is computed
entirely inside one process with BLAS pinned to a single thread.  Reports
are therefore bit-identical for a fixed ``(config, seed)`` at any worker
count, including 1.
"""

from __future__ import annotations

import math
import os
import time
from dataclasses import dataclass, field, replace
from functools import lru_cache
from multiprocessing import get_context

import numpy as np
from scipy.sparse.linalg import ArpackError, eigsh
from scipy.special import ndtr, ndtri
from threadpoolctl import threadpool_limits

from . import laws, mp_core
from .errors import ConfigError, DomainError
from .moments import GAUSSIAN, TWO_POINT, CumulantSet, atom_cumulants

QUANTILE_PROBS = (0.01, 0.05, 0.10, 0.30, 0.50, 0.70, 0.90, 0.95, 0.99)
DEFAULT_REPLICATES = 10_000
FAST_REPLICATES = 2_000
MIN_REPLICATES = 100

STATISTICS = (
    "R_g", "R_dt", "R_pt", "R_st",
    "T_1g", "T_1t", "S0", "S1", "S1d",
    "raw_overlap", "left_overlap",
)
# statistics whose value is already on the z scale
_NORMALIZED = {"R_g", "R_dt", "R_pt", "R_st", "T_1g", "T_1t", "raw_overlap"}
_SUBSPACE = {"T_1g", "T_1t", "S1", "S1d"}

TWO_POINT_ATOMS = (math.sqrt(2.0), -1.0 / math.sqrt(2.0))
TWO_POINT_WEIGHTS = (1.0 / 3.0, 2.0 / 3.0)

# below this size ARPACK brings no benefit; use the dense LAPACK SVD
_DENSE_CUTOFF = 32


# ---------------------------------------------------------------------------
# RNG streams

def replicate_rng(seed: int, *key: int) -> np.random.Generator:
    """Independent Philox stream for one replicate (or sub-experiment)."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=tuple(key))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, tag: int) -> int:
    """Stable 64-bit sub-seed for a child experiment."""
    ss = np.random.SeedSequence(entropy=seed, spawn_key=(0xD5, tag))
    return int(ss.generate_state(1, np.uint64)[0])


# ---------------------------------------------------------------------------
# Noise and vector constructors

def noise_cumulants(kind) -> CumulantSet:
    """Exact cumulants of a noise kind (no sampling)."""
    if kind == "gaussian":
        return GAUSSIAN
    if kind == "two_point":
        return TWO_POINT
    if isinstance(kind, tuple) and len(kind) == 3 and kind[0] == "custom":
        _, atoms, weights = kind
        cum = atom_cumulants(atoms, weights)
        if abs(cum.kappa2 - 1.0) > 1e-10 or abs(sum(w * x for x, w in zip(atoms, weights))) > 1e-10:
            raise ConfigError(
                "custom noise atoms must be pre-normalized to mean 0, variance 1"
            )
        return cum
    raise ConfigError(f"unknown noise kind: {kind!r}")


def sample_noise(kind, M: int, n: int, rng: np.random.Generator) -> np.ndarray:
    """Draw an M x n noise matrix with entry variance 1/n."""
    scale = 1.0 / math.sqrt(n)
    if kind == "gaussian":
        return rng.standard_normal((M, n)) * scale
    if kind == "two_point":
        hit = rng.random((M, n)) < TWO_POINT_WEIGHTS[0]
        return np.where(hit, TWO_POINT_ATOMS[0], TWO_POINT_ATOMS[1]) * scale
    if isinstance(kind, tuple) and kind[0] == "custom":
        noise_cumulants(kind)
        _, atoms, weights = kind
        idx = rng.choice(len(atoms), size=(M, n), p=np.asarray(weights, dtype=float))
        return np.asarray(atoms, dtype=float)[idx] * scale
    raise ConfigError(f"unknown noise kind: {kind!r}")


def build_vector(kind, dim: int) -> np.ndarray:
    """Construct a unit vector from its symbolic description."""
    if kind == "uniform":
        return np.full(dim, 1.0 / math.sqrt(dim))
    if kind == "alternating":
        if dim % 2:
            raise ConfigError(f"alternating vector needs an even dimension, got {dim}")
        w = np.empty(dim)
        w[: dim // 2] = 1.0
        w[dim // 2:] = -1.0
        return w / math.sqrt(dim)
    if isinstance(kind, str) and kind.startswith("basis"):
        k = int(kind[5:] or 1)
        if not 1 <= k <= dim:
            raise ConfigError(f"basis index {k} outside 1..{dim}")
        w = np.zeros(dim)
        w[k - 1] = 1.0
        return w
    if isinstance(kind, tuple) and len(kind) == 2 and kind[0] == "custom":
        w = np.asarray(kind[1], dtype=float)
        if w.size != dim:
            raise ConfigError(f"custom vector has dim {w.size}, expected {dim}")
        nrm = np.linalg.norm(w)
        if abs(nrm - 1.0) > 1e-8:
            raise ConfigError("custom vector must be unit-norm")
        return w / nrm
    raise ConfigError(f"unknown vector kind: {kind!r}")


# ---------------------------------------------------------------------------
# Configuration

@dataclass(frozen=True)
class ExperimentConfig:
    """Fully determined description of one simulation experiment."""

    n: int
    M: int
    d: tuple
    statistic: str
    seed: int
    u_kinds: tuple = ("basis1",)
    v_kinds: tuple = ("basis1",)
    noise: object = "gaussian"
    replicates: int = DEFAULT_REPLICATES
    alpha: float | None = None
    alt_delta: float | None = None
    zero_noise: bool = False  # debug hook: force X = 0

    def __post_init__(self):
        if self.n <= 0 or self.M <= 0:
            raise ConfigError("matrix dimensions must be positive")
        if self.seed is None:
            raise ConfigError("seed is mandatory")
        object.__setattr__(self, "d", tuple(float(x) for x in self.d))
        object.__setattr__(self, "u_kinds", tuple(self.u_kinds))
        object.__setattr__(self, "v_kinds", tuple(self.v_kinds))
        r = len(self.d)
        if len(self.u_kinds) != r or len(self.v_kinds) != r:
            raise ConfigError("need one u-kind and one v-kind per singular value")
        if self.statistic not in STATISTICS:
            raise ConfigError(f"unknown statistic {self.statistic!r}; choose from {STATISTICS}")
        if self.replicates < MIN_REPLICATES:
            raise ConfigError(f"replicates must be >= {MIN_REPLICATES} for reporting")
        if self.alpha is not None and not 0.0 < self.alpha <= 1.0:
            raise ConfigError(f"alpha must lie in (0, 1], got {self.alpha}")
        if self.alt_delta is not None:
            if not 0.0 <= self.alt_delta < 1.0:
                raise ConfigError("alternative delta must lie in [0, 1)")
            if r != 2:
                raise ConfigError("the alternative family is defined for rank 2")
        noise_cumulants(self.noise)
        y = self.M / self.n
        for i, di in enumerate(self.d):
            mp_core.require_supercritical(di, y)
            if i and not self.d[i - 1] > di:
                raise ConfigError("singular values must be strictly descending")

    @property
    def y(self) -> float:
        return self.M / self.n

    @property
    def r(self) -> int:
        return len(self.d)

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "M": self.M,
            "d": list(self.d),
            "statistic": self.statistic,
            "seed": self.seed,
            "u_kinds": [list(k) if isinstance(k, tuple) else k for k in self.u_kinds],
            "v_kinds": [list(k) if isinstance(k, tuple) else k for k in self.v_kinds],
            "noise": list(self.noise) if isinstance(self.noise, tuple) else self.noise,
            "replicates": self.replicates,
            "alpha": self.alpha,
            "alt_delta": self.alt_delta,
            "zero_noise": self.zero_noise,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        def _kind(k):
            if isinstance(k, list):
                if k and k[0] == "custom" and len(k) == 2:
                    return ("custom", tuple(float(x) for x in k[1]))
                if k and k[0] == "custom" and len(k) == 3:
                    return ("custom", tuple(float(x) for x in k[1]), tuple(float(x) for x in k[2]))
                raise ConfigError(f"malformed kind {k!r}")
            return k

        return cls(
            n=int(data["n"]),
            M=int(data["M"]),
            d=tuple(float(x) for x in data["d"]),
            statistic=data["statistic"],
            seed=int(data["seed"]),
            u_kinds=tuple(_kind(k) for k in data["u_kinds"]),
            v_kinds=tuple(_kind(k) for k in data["v_kinds"]),
            noise=_kind(data["noise"]),
            replicates=int(data["replicates"]),
            alpha=None if data.get("alpha") is None else float(data["alpha"]),
            alt_delta=None if data.get("alt_delta") is None else float(data["alt_delta"]),
            zero_noise=bool(data.get("zero_noise", False)),
        )


@dataclass(frozen=True)
class _Context:
    """Arrays and constants shared by every replicate of one experiment."""

    S: np.ndarray
    U: np.ndarray
    V0: np.ndarray
    u1: np.ndarray
    v1: np.ndarray
    centers: np.ndarray
    sigma: float
    shift: float
    k_pairs: int
    sqrt_n: float
    noise_cum: CumulantSet


@lru_cache(maxsize=64)
def _context(config: ExperimentConfig) -> _Context:
    M, n, y = config.M, config.n, config.y
    cum = noise_cumulants(config.noise)
    U = np.column_stack([build_vector(k, M) for k in config.u_kinds])
    V0 = np.column_stack([build_vector(k, n) for k in config.v_kinds])
    if config.alt_delta is not None:
        delta = config.alt_delta
        V_gen = V0.copy()
        f3 = build_vector("basis3", n)
        V_gen[:, 1] = math.sqrt(1.0 - delta**2) * V0[:, 1] + delta * f3
    else:
        V_gen = V0
    S = (U * np.asarray(config.d)) @ V_gen.T
    centers = np.array([mp_core.a(di, y) for di in config.d])

    stat = config.statistic
    d1 = config.d[0]
    sigma, shift = 1.0, 0.0
    if stat in ("R_g", "raw_overlap"):
        sigma = laws.sigma_gaussian_vector(d1, y)
    elif stat == "R_dt":
        sigma = laws.sigma_gaussian_vector(d1, y)
        shift = laws.delocalized_shift(d1, y, cum)
    elif stat == "R_pt":
        sigma = laws.sigma_mixed_vector(d1, y, cum)
    elif stat == "R_st":
        sigma = laws.sigma_sparse_vector(d1, y, cum)
    elif stat == "T_1g":
        sigma = laws.sigma_t1(config.d, y, GAUSSIAN)
    elif stat == "T_1t":
        sigma = laws.sigma_t1(config.d, y, cum)

    k_pairs = config.r if stat in _SUBSPACE else 1
    return _Context(
        S=S, U=U, V0=V0,
        u1=U[:, 0].copy(), v1=V0[:, 0].copy(),
        centers=centers, sigma=sigma, shift=shift,
        k_pairs=k_pairs, sqrt_n=math.sqrt(n), noise_cum=cum,
    )


# ---------------------------------------------------------------------------
# Linear algebra kernel

def top_singular_pairs(Y: np.ndarray, k: int, rng: np.random.Generator | None = None):
    """Top-k singular triplets (mu, Uhat, Vhat) with mu the squared
    singular values in descending order.

    Uses a Lanczos solve on the smaller Gram matrix when profitable; the
    start vector comes from the replicate stream so the whole computation
    stays deterministic for a fixed stream.
    """
    M, n = Y.shape
    small = min(M, n)
    if small < _DENSE_CUTOFF or k > small // 4:
        Uh, s, Vt = np.linalg.svd(Y, full_matrices=False)
        return (s[:k] ** 2, Uh[:, :k], Vt[:k].T)
    if M <= n:
        G = Y @ Y.T
    else:
        G = Y.T @ Y
    v0 = rng.standard_normal(G.shape[0]) if rng is not None else np.ones(G.shape[0])
    w, W = eigsh(G, k=k, which="LA", v0=v0, tol=0)
    order = np.argsort(w)[::-1]
    mu = w[order]
    W = W[:, order]
    if M <= n:
        Uh = W
        Vh = Y.T @ W / np.sqrt(mu)
    else:
        Vh = W
        Uh = Y @ W / np.sqrt(mu)
    return mu, Uh, Vh


# ---------------------------------------------------------------------------
# Replicates

def _evaluate(config: ExperimentConfig, ctx: _Context, X: np.ndarray,
              rng: np.random.Generator) -> float:
    Y = ctx.S + X
    mu, Uh, Vh = top_singular_pairs(Y, ctx.k_pairs, rng)
    stat = config.statistic
    sn = ctx.sqrt_n
    if stat == "left_overlap":
        return float(Uh[:, 0] @ ctx.u1) ** 2
    if stat in _SUBSPACE:
        overlaps = (Vh.T @ ctx.V0) ** 2
        total = float(np.trace(overlaps)) if stat == "S1d" else float(overlaps.sum())
        raw = sn * (total - ctx.centers.sum())
        if stat == "S1d" or stat == "S1":
            return raw
        return raw / ctx.sigma
    ov = float(Vh[:, 0] @ ctx.v1) ** 2
    raw = sn * (ov - ctx.centers[0])
    if stat == "S0":
        return raw
    if stat == "R_dt":
        return (raw + ctx.shift) / ctx.sigma
    if stat == "R_st":
        aligned = float(ctx.u1 @ X @ ctx.v1)
        return (raw - (2.0 * sn / config.d[0] ** 3) * aligned) / ctx.sigma
    # R_g, R_pt, raw_overlap
    return raw / ctx.sigma


def run_replicate(config: ExperimentConfig, replicate_index: int) -> float:
    """Statistic value of one replicate; retries once on solver failure."""
    ctx = _context(config)
    for attempt in (0, 1):
        rng = (replicate_rng(config.seed, replicate_index) if attempt == 0
               else replicate_rng(config.seed, replicate_index, 1))
        X = (np.zeros((config.M, config.n)) if config.zero_noise
             else sample_noise(config.noise, config.M, config.n, rng))
        try:
            return _evaluate(config, ctx, X, rng)
        except (ArpackError, np.linalg.LinAlgError):
            if attempt:
                raise
    raise AssertionError("unreachable")


def _run_range(args) -> list:
    config, start, stop = args
    out = []
    with threadpool_limits(limits=1):
        for i in range(start, stop):
            try:
                out.append(run_replicate(config, i))
            except Exception as exc:
                raise RuntimeError(f"replicate {i} failed: {exc}") from exc
    return out


def _run_all(config: ExperimentConfig, workers: int) -> np.ndarray:
    reps = config.replicates
    if workers <= 1:
        values = _run_range((config, 0, reps))
        return np.asarray(values)
    chunk = max(1, math.ceil(reps / (workers * 4)))
    spans = [(config, s, min(s + chunk, reps)) for s in range(0, reps, chunk)]
    out = np.empty(reps)
    ctx = get_context("fork")
    with ctx.Pool(processes=workers) as pool:
        for (cfg, s, e), vals in zip(spans, pool.map(_run_range, spans)):
            out[s:e] = vals
    return out


# ---------------------------------------------------------------------------
# Reports

@dataclass(frozen=True)
class McReport:
    """Aggregated outcome of one experiment (or one power sweep)."""

    config: ExperimentConfig
    seed: int
    replicates: int
    ecdf: np.ndarray | None
    quantile_table: dict | None
    ks_distance: float | None
    rejection_rate: float | None
    power_points: tuple | None
    monotone_trend: bool | None
    runtime_seconds: float
    workers: int

    def report_key(self) -> bytes:
        """Deterministic fingerprint; excludes runtime and worker count."""
        parts = [repr(self.config.to_dict()).encode(), str(self.seed).encode()]
        if self.ecdf is not None:
            parts.append(self.ecdf.tobytes())
            parts.append(repr(sorted(self.quantile_table.items())).encode())
            parts.append(repr(self.ks_distance).encode())
        parts.append(repr(self.rejection_rate).encode())
        parts.append(repr(self.power_points).encode())
        return b"|".join(parts)

    def to_dict(self) -> dict:
        return {
            "config": self.config.to_dict(),
            "seed": self.seed,
            "replicates": self.replicates,
            "quantile_table": self.quantile_table,
            "ks_distance": self.ks_distance,
            "rejection_rate": self.rejection_rate,
            "power_points": self.power_points,
            "monotone_trend": self.monotone_trend,
            "runtime_seconds": self.runtime_seconds,
            "workers": self.workers,
        }


def ks_distance_to_normal(sorted_values: np.ndarray) -> float:
    """Sup distance between the sample ECDF and the standard normal CDF."""
    N = sorted_values.size
    cdf = ndtr(sorted_values)
    upper = np.max(np.arange(1, N + 1) / N - cdf)
    lower = np.max(cdf - np.arange(0, N) / N)
    return float(max(upper, lower))


def quantile_probability_table(sorted_values: np.ndarray, probs=QUANTILE_PROBS) -> dict:
    """Fraction of values <= the standard-normal q-quantile, per q.

    Ties are counted with a closed right end (<=).
    """
    N = sorted_values.size
    return {
        q: float(np.searchsorted(sorted_values, ndtri(q), side="right") / N)
        for q in probs
    }


def run_experiment(config: ExperimentConfig, workers: int | None = None) -> McReport:
    """Execute all replicates and aggregate the distributional report."""
    workers = resolve_workers(workers)
    t0 = time.perf_counter()
    values = _run_all(config, workers)
    ecdf = np.sort(values)
    table = quantile_probability_table(ecdf)
    ks = ks_distance_to_normal(ecdf)
    rate = None
    if config.alpha is not None:
        crit = float(ndtri(1.0 - config.alpha / 2.0))
        rate = float(np.mean(np.abs(values) > crit))
    return McReport(
        config=config, seed=config.seed, replicates=config.replicates,
        ecdf=ecdf, quantile_table=table, ks_distance=ks,
        rejection_rate=rate, power_points=None, monotone_trend=None,
        runtime_seconds=time.perf_counter() - t0, workers=workers,
    )


def power_curve(config: ExperimentConfig, delta_grid, workers: int | None = None) -> McReport:
    """Rejection rate along the rank-2 alternative family V_a(delta)."""
    if config.alpha is None:
        raise ConfigError("power_curve requires alpha")
    deltas = [float(x) for x in delta_grid]
    if any(not 0.0 <= x < 1.0 for x in deltas):
        raise ConfigError("delta grid must lie in [0, 1)")
    workers = resolve_workers(workers)
    t0 = time.perf_counter()
    points = []
    for k, delta in enumerate(deltas):
        sub = replace(config, alt_delta=delta, seed=derive_seed(config.seed, k))
        rep = run_experiment(sub, workers=workers)
        points.append((delta, rep.rejection_rate))
    monotone = all(points[i + 1][1] >= points[i][1] - 1e-12
                   for i in range(len(points) - 1))
    return McReport(
        config=config, seed=config.seed, replicates=config.replicates,
        ecdf=None, quantile_table=None, ks_distance=None,
        rejection_rate=None, power_points=tuple(points), monotone_trend=monotone,
        runtime_seconds=time.perf_counter() - t0, workers=workers,
    )


def meanvar_curve(y_list, d_grid, noise="gaussian") -> list:
    """Deterministic (y, d, center, sd) table for plotting; no sampling."""
    cum = noise_cumulants(noise)
    rows = []
    for y in y_list:
        for d in d_grid:
            mp_core.require_supercritical(d, y)
            if cum.is_gaussian:
                sd = laws.sigma_gaussian_vector(d, y)
            else:
                sd = laws.sigma_mixed_vector(d, y, cum)
            rows.append((float(y), float(d), mp_core.a(d, y), sd))
    return rows


def resolve_workers(workers: int | None) -> int:
    """Explicit value, else RMT_WORKERS, else 1."""
    if workers is not None:
        if workers < 1:
            raise ConfigError("workers must be >= 1")
        return int(workers)
    env = os.environ.get("RMT_WORKERS")
    if env:
        try:
            val = int(env)
        except ValueError as exc:
            raise ConfigError(f"RMT_WORKERS must be an integer, got {env!r}") from exc
        if val < 1:
            raise ConfigError("RMT_WORKERS must be >= 1")
        return val
    return 1
