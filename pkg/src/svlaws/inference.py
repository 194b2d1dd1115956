"""z-score hypothesis tests for singular vectors and subspaces.

Implements the two tests surfaced by the CLI: a single-vector test
(H0: v_i equals a given unit vector) and a subspace test (H0: the right
frame equals a given orthonormal matrix), both decided against the
Gaussian null laws assembled in :mod:`svlaws.laws`.  Nuisance parameters
(signal strengths, noise cumulants) are either supplied or plugged in
from the data, and every outcome records where each one came from.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import ndtr, ndtri

from . import mp_core
from .errors import (
    DimensionMismatchError,
    DomainError,
    NoOutlierError,
    NonGaussianLimitError,
)
from .laws import AsymptoticLaw, SignalModel, subspace_law, vector_law
from .moments import CumulantSet, check_unit_vector, residual_cumulants

# refuse to test when an outlier sits within 2% of the bulk edge;
# near-critical laws are outside the validated regime
OUTLIER_GATE_BUFFER = 0.02


@dataclass(frozen=True)
class Observation:
    """One observed matrix plus whatever nuisance information is known."""

    Y: np.ndarray
    known_U: np.ndarray | None = None
    known_d: tuple | None = None
    noise: CumulantSet | None = None

    def __post_init__(self):
        Y = np.asarray(self.Y, dtype=float)
        if Y.ndim != 2:
            raise DimensionMismatchError("Y must be a matrix")
        if not np.all(np.isfinite(Y)):
            raise DomainError("Y contains non-finite entries")
        object.__setattr__(self, "Y", Y)
        if self.known_d is not None:
            object.__setattr__(self, "known_d", tuple(float(x) for x in self.known_d))

    @property
    def y(self) -> float:
        return self.Y.shape[0] / self.Y.shape[1]


@dataclass(frozen=True)
class TestOutcome:
    """Statistic, z-score, two-sided p-value and decision at level alpha."""

    statistic: float
    z: float
    p_value: float
    reject: bool
    alpha: float
    law: AsymptoticLaw
    nuisance: dict = field(default_factory=dict)


def normal_cdf(x: float) -> float:
    return float(ndtr(x))


def normal_quantile(q: float) -> float:
    return float(ndtri(q))


def svd_decompose(Y: np.ndarray, reference: np.ndarray | None = None):
    """Thin SVD with descending singular values.

    When ``reference`` columns are supplied, each right vector is flipped
    (together with its left partner) so its inner product with the
    matching reference column is nonnegative.  Only diagnostics care; all
    statistics use squared inner products.
    """
    Y = np.asarray(Y, dtype=float)
    if not np.all(np.isfinite(Y)):
        raise DomainError("Y contains non-finite entries")
    Uh, s, Vt = np.linalg.svd(Y, full_matrices=False)
    Vh = Vt.T
    if reference is not None:
        ref = np.asarray(reference, dtype=float)
        if ref.ndim == 1:
            ref = ref[:, None]
        for j in range(min(ref.shape[1], Vh.shape[1])):
            if Vh[:, j] @ ref[:, j] < 0:
                Vh[:, j] = -Vh[:, j]
                Uh[:, j] = -Uh[:, j]
    return s, Uh, Vh


def _gate_outliers(mu: np.ndarray, r: int, y: float, buffer: float) -> None:
    edge = mp_core.lambda_plus(y) * (1.0 + buffer)
    for i in range(r):
        if not mu[i] > edge:
            raise NoOutlierError(i + 1, float(mu[i]), edge)


def estimate_strengths(Y: np.ndarray, r: int, buffer: float = 0.0) -> tuple:
    """Plug-in strengths from the top-r squared singular values.

    Inverts the outlier-location map on each mu_i; raises NoOutlierError
    for the first index whose mu_i fails the (optionally buffered) edge
    check.
    """
    Y = np.asarray(Y, dtype=float)
    y = Y.shape[0] / Y.shape[1]
    s = np.linalg.svd(Y, compute_uv=False)
    if r < 1 or r > s.size:
        raise DimensionMismatchError(f"rank {r} outside 1..{s.size}")
    mu = s[:r] ** 2
    _gate_outliers(mu, r, y, buffer)
    return tuple(mp_core.p_inv(float(m), y) for m in mu)


def _resolve_strengths(obs: Observation, mu: np.ndarray, r: int, nuisance: dict) -> tuple:
    y = obs.y
    _gate_outliers(mu, r, y, OUTLIER_GATE_BUFFER)
    if obs.known_d is not None:
        if len(obs.known_d) < r:
            raise DimensionMismatchError(
                f"need {r} known strengths, got {len(obs.known_d)}"
            )
        nuisance["d"] = "given"
        return obs.known_d[:r]
    nuisance["d"] = "estimated"
    return tuple(mp_core.p_inv(float(m), y) for m in mu[:r])


def _resolve_left_frame(obs: Observation, r: int, M: int,
                        gaussian_ok: bool, nuisance: dict) -> np.ndarray:
    if obs.known_U is not None:
        U = np.asarray(obs.known_U, dtype=float)
        if U.shape[0] != M or U.shape[1] < r:
            raise DimensionMismatchError(
                f"known_U must be {M} x >= {r}, got {U.shape}"
            )
        nuisance["U"] = "given"
        return U[:, :r]
    if gaussian_ok:
        # with vanishing cumulants the law is structure-free; any
        # orthonormal placeholder yields the same numbers
        nuisance["U"] = "placeholder (gaussian noise)"
        return np.eye(M, r)
    raise NonGaussianLimitError(
        "left singular vectors are required to evaluate the non-Gaussian "
        "cumulant terms; supply known_U or Gaussian cumulants"
    )


def _resolve_cumulants(obs: Observation, U: np.ndarray, d: tuple,
                       V0: np.ndarray, nuisance: dict) -> CumulantSet:
    if obs.noise is not None:
        nuisance["cumulants"] = "given"
        return obs.noise
    S_hat = (U * np.asarray(d)) @ V0.T
    nuisance["cumulants"] = "estimated-from-residual"
    return residual_cumulants(obs.Y, S_hat)


def _decide(statistic: float, law: AsymptoticLaw, alpha: float,
            nuisance: dict) -> TestOutcome:
    if not law.clt_applies:
        raise NonGaussianLimitError(
            "both singular vectors are localized and the noise is "
            "non-Gaussian; the null law is not Gaussian (no realized-noise "
            "correction path is available for observed data)"
        )
    z = (statistic - law.mean_shift) / law.sd
    p = 2.0 * (1.0 - normal_cdf(abs(z)))
    reject = abs(z) > normal_quantile(1.0 - alpha / 2.0)
    return TestOutcome(
        statistic=float(statistic), z=float(z), p_value=float(p),
        reject=bool(reject), alpha=float(alpha), law=law, nuisance=nuisance,
    )


def test_vector(obs: Observation, i: int, v0: np.ndarray,
                alpha: float = 0.05, r: int | None = None) -> TestOutcome:
    """Two-sided z-test of H0: the i-th right singular vector equals v0.

    ``r`` is the signal rank used for nuisance estimation; it defaults to
    ``i`` (the spikes above the tested one must be outliers as well).
    """
    v0 = check_unit_vector(v0, "v0")
    M, n = obs.Y.shape
    if v0.size != n:
        raise DimensionMismatchError(f"v0 has dim {v0.size}, expected {n}")
    if i < 1:
        raise IndexError(f"spike index must be >= 1, got {i}")
    r = i if r is None else r
    if r < i:
        raise IndexError(f"rank r={r} must cover the tested index i={i}")
    nuisance: dict = {}
    s, _, Vh = svd_decompose(obs.Y)
    mu = s[:r] ** 2
    d = _resolve_strengths(obs, mu, r, nuisance)
    noise = obs.noise
    gaussian_ok = noise is not None and noise.is_gaussian
    U = _resolve_left_frame(obs, r, M, gaussian_ok, nuisance)
    if noise is None:
        # hypothesized column for the tested index, fitted ones elsewhere
        V_plug = np.column_stack(
            [v0 if j == i - 1 else Vh[:, j] for j in range(r)]
        )
        noise = _resolve_cumulants(obs, U, d, V_plug, nuisance)
    else:
        nuisance["cumulants"] = "given"
    model = SignalModel(
        U=U[:, i - 1:i], V=v0[:, None], d=(d[i - 1],),
        margin=mp_core.SUPERCRITICAL_MARGIN_EVAL,
    )
    law = vector_law(model, 1, noise)
    statistic = math.sqrt(n) * (float(Vh[:, i - 1] @ v0) ** 2 - law.center)
    return _decide(statistic, law, alpha, nuisance)


def test_subspace(obs: Observation, V0: np.ndarray, alpha: float = 0.05,
                  variant: str = "S1") -> TestOutcome:
    """Two-sided z-test of H0: the top right singular frame equals V0.

    ``variant`` selects the statistic: "S1" sums every squared overlap
    between the estimated and hypothesized frames (rotation-invariant in
    V0), "S1d" keeps only the matched diagonal overlaps (sensitive to
    rotations of V0).  Both share the same null law.
    """
    if variant not in ("S1", "S1d"):
        raise ValueError(f"variant must be 'S1' or 'S1d', got {variant!r}")
    V0 = np.asarray(V0, dtype=float)
    if V0.ndim == 1:
        V0 = V0[:, None]
    M, n = obs.Y.shape
    r = V0.shape[1]
    if V0.shape[0] != n:
        raise DimensionMismatchError(f"V0 must have {n} rows, got {V0.shape[0]}")
    if not np.allclose(V0.T @ V0, np.eye(r), atol=1e-8):
        raise ValueError("V0 does not have orthonormal columns")
    nuisance: dict = {"variant": variant}
    s, _, Vh = svd_decompose(obs.Y)
    mu = s[:r] ** 2
    d = _resolve_strengths(obs, mu, r, nuisance)
    noise = obs.noise
    gaussian_ok = noise is not None and noise.is_gaussian
    U = _resolve_left_frame(obs, r, M, gaussian_ok, nuisance)
    if noise is None:
        noise = _resolve_cumulants(obs, U, d, V0, nuisance)
    else:
        nuisance["cumulants"] = "given"
    model = SignalModel(U=U, V=V0, d=d)
    law = subspace_law(model, noise)
    overlaps = (Vh[:, :r].T @ V0) ** 2
    total = float(np.trace(overlaps)) if variant == "S1d" else float(overlaps.sum())
    statistic = math.sqrt(n) * (total - law.center)
    return _decide(statistic, law, alpha, nuisance)
