"""Limiting fluctuation laws for outlier singular vectors and subspaces.

A law is stored in decomposed form: a deterministic centering, a mean
shift driven by the third noise cumulant, the coefficients of the linear
noise functionals sqrt(n) * u_i' X v_i, and the variance of an independent
Gaussian remainder.  Because the u_i (and v_i) are orthonormal, the linear
functionals are uncorrelated with unit variance, so the total asymptotic
variance is simply sum(coeff**2) + gaussian_var.

The module also provides the closed-form normalizers used by the Monte
Carlo statistics: the general-ratio expressions and, for the y = 1/2
Two-Point benchmark configurations, the equivalent single-variable
polynomial forms (kept as an independent arithmetic path for testing).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import mp_core
from .errors import DimensionMismatchError, DomainError, NegativeVarianceError
from .moments import GAUSSIAN, TWO_POINT, CumulantSet, s_kl, s_l

ORTHONORMAL_TOL = 1e-8
# Vectors with sup-norm below dim**(-DELOC_EXPONENT) are treated as
# delocalized: their entrywise power sums are asymptotically negligible
# and the linear noise functional obeys the CLT.
DELOC_EXPONENT = 0.2


def is_delocalized(w, nu0: float = DELOC_EXPONENT) -> bool:
    """Sup-norm delocalization test against dim**(-nu0)."""
    w = np.asarray(w, dtype=float).reshape(-1)
    return float(np.max(np.abs(w))) < w.size ** (-nu0)


@dataclass(frozen=True)
class SignalModel:
    """Rank-r deterministic signal S = sum_i d_i u_i v_i' at finite (M, n).

    U is M x r, V is n x r, both with orthonormal columns; d is strictly
    descending and supercritical for y = M/n.
    """

    U: np.ndarray
    V: np.ndarray
    d: tuple
    gap: float = 1e-6
    margin: float = mp_core.SUPERCRITICAL_MARGIN_EVAL

    def __post_init__(self):
        U = np.asarray(self.U, dtype=float)
        V = np.asarray(self.V, dtype=float)
        if U.ndim != 2 or V.ndim != 2:
            raise DimensionMismatchError("U and V must be 2-d arrays")
        d = tuple(float(x) for x in self.d)
        if U.shape[1] != len(d) or V.shape[1] != len(d):
            raise DimensionMismatchError(
                f"U ({U.shape}), V ({V.shape}) must have r={len(d)} columns"
            )
        object.__setattr__(self, "U", U)
        object.__setattr__(self, "V", V)
        object.__setattr__(self, "d", d)
        r = len(d)
        for name, W in (("U", U), ("V", V)):
            gram = W.T @ W
            if not np.allclose(gram, np.eye(r), atol=ORTHONORMAL_TOL):
                raise ValueError(f"{name} does not have orthonormal columns")
        for i in range(r - 1):
            if not d[i] - d[i + 1] >= self.gap:
                raise DomainError(
                    f"singular values must descend with gap >= {self.gap}: {d}"
                )
        for di in d:
            mp_core.require_supercritical(di, self.y, self.margin)

    @property
    def M(self) -> int:
        return self.U.shape[0]

    @property
    def n(self) -> int:
        return self.V.shape[0]

    @property
    def r(self) -> int:
        return len(self.d)

    @property
    def y(self) -> float:
        return self.U.shape[0] / self.V.shape[0]

    def signal_matrix(self) -> np.ndarray:
        return (self.U * np.asarray(self.d)) @ self.V.T


@dataclass(frozen=True)
class AsymptoticLaw:
    """Decomposed limiting law of a centered, sqrt(n)-scaled statistic.

    The statistic converges to
        mean_shift + sum_i linear_coeffs[i] * (sqrt(n) u_i' X v_i) + Z,
    with Z an independent centered Gaussian of variance gaussian_var.
    ``clt_applies`` records whether the linear part may itself be treated
    as Gaussian (Gaussian noise, or delocalization of every vector pair).
    """

    center: float
    mean_shift: float
    linear_coeffs: tuple
    gaussian_var: float
    clt_applies: bool

    @property
    def total_variance(self) -> float:
        return sum(c * c for c in self.linear_coeffs) + self.gaussian_var

    @property
    def sd(self) -> float:
        return math.sqrt(self.total_variance)


def _clt_applies(noise: CumulantSet, pairs) -> bool:
    if noise.is_gaussian:
        return True
    return all(is_delocalized(u) or is_delocalized(v) for u, v in pairs)


def _vector_terms(u, v, d: float, y: float, n: int, noise: CumulantSet):
    """Shared mean/variance pieces for one (u_i, v_i, d_i) triple."""
    th = mp_core.theta(d, y)
    ps = mp_core.psi(d, y)
    mean_shift = -(2.0 * ps / d**2) * (noise.kappa3 / n) * s_l(u, 1) * s_l(v, 1)
    var = mp_core.v_E(d, y)
    var += -(4.0 / d) * th * ps * (noise.kappa3 / math.sqrt(n)) * s_l(u, 3) * s_l(v, 1)
    var += (4.0 / d) * th * th * (noise.kappa3 / math.sqrt(n)) * s_l(u, 1) * s_l(v, 3)
    var += (ps * ps / d**2) * noise.kappa4 * s_l(u, 4)
    var += (y * th * th / d**2) * noise.kappa4 * s_l(v, 4)
    return th, mean_shift, var


def vector_law(model: SignalModel, i: int, noise: CumulantSet) -> AsymptoticLaw:
    """Law of sqrt(n) * (|<v_i, vhat_i>|**2 - a(d_i)) for the i-th spike.

    ``i`` is 1-based, matching the descending order of ``model.d``.
    """
    if not 1 <= i <= model.r:
        raise IndexError(f"spike index {i} outside 1..{model.r}")
    d = model.d[i - 1]
    y = model.y
    u = model.U[:, i - 1]
    v = model.V[:, i - 1]
    th, mean_shift, var = _vector_terms(u, v, d, y, model.n, noise)
    if var < 0.0:
        raise NegativeVarianceError(
            f"gaussian variance {var:.6g} < 0 for d={d}, y={y}, "
            f"kappa3={noise.kappa3}, kappa4={noise.kappa4}"
        )
    return AsymptoticLaw(
        center=mp_core.a(d, y),
        mean_shift=mean_shift,
        linear_coeffs=(-2.0 * th,),
        gaussian_var=var,
        clt_applies=_clt_applies(noise, [(u, v)]),
    )


def subspace_law(model: SignalModel, noise: CumulantSet) -> AsymptoticLaw:
    """Law of sqrt(n) * (R - sum_i a(d_i)) for the squared-overlap distance R."""
    y = model.y
    n = model.n
    r = model.r
    ds = model.d
    th = [mp_core.theta(d, y) for d in ds]
    ps = [mp_core.psi(d, y) for d in ds]
    center = sum(mp_core.a(d, y) for d in ds)
    mean_shift = 0.0
    var = 0.0
    for i in range(r):
        u = model.U[:, i]
        v = model.V[:, i]
        mean_shift += -(2.0 * ps[i] / ds[i] ** 2) * (noise.kappa3 / n) * s_l(u, 1) * s_l(v, 1)
        var += mp_core.v_E(ds[i], y)
    for i in range(r):
        for j in range(r):
            ui, uj = model.U[:, i], model.U[:, j]
            vi, vj = model.V[:, i], model.V[:, j]
            var += noise.kappa4 * (
                ps[i] * ps[j] / (ds[i] * ds[j]) * s_kl(ui, uj, 2, 2)
                + y * th[i] * th[j] / (ds[i] * ds[j]) * s_kl(vi, vj, 2, 2)
            )
            var += (noise.kappa3 / math.sqrt(n)) * (4.0 / ds[i]) * th[j] * (
                th[i] * s_kl(vi, vj, 2, 1) * s_l(uj, 1)
                - ps[i] * s_kl(ui, uj, 2, 1) * s_l(vj, 1)
            )
    if var < 0.0:
        raise NegativeVarianceError(
            f"gaussian variance {var:.6g} < 0 for d={ds}, y={y}, "
            f"kappa3={noise.kappa3}, kappa4={noise.kappa4}"
        )
    pairs = [(model.U[:, i], model.V[:, i]) for i in range(r)]
    return AsymptoticLaw(
        center=center,
        mean_shift=mean_shift,
        linear_coeffs=tuple(-2.0 * t for t in th),
        gaussian_var=var,
        clt_applies=_clt_applies(noise, pairs),
    )


def left_law(model: SignalModel, i: int, noise: CumulantSet) -> AsymptoticLaw:
    """Law of sqrt(n) * (|<u_i, uhat_i>|**2 - a_left(d_i)) via transposition.

    Transposing Y and rescaling by 1/sqrt(y) maps the model onto one with
    strengths d/sqrt(y), ratio 1/y and the vector roles swapped, while the
    standardized noise entries (hence the cumulants) are unchanged.  The
    dual law is normalized by sqrt(M); re-expressing in sqrt(n) units
    scales the fluctuation by 1/sqrt(y).
    """
    sy = math.sqrt(model.y)
    dual = SignalModel(
        U=model.V,
        V=model.U,
        d=tuple(di / sy for di in model.d),
        gap=model.gap / sy,
        margin=0.0,
    )
    dl = vector_law(dual, i, noise)
    return AsymptoticLaw(
        center=dl.center,
        mean_shift=dl.mean_shift / sy,
        linear_coeffs=tuple(c / sy for c in dl.linear_coeffs),
        gaussian_var=dl.gaussian_var / model.y,
        clt_applies=dl.clt_applies,
    )


# ---------------------------------------------------------------------------
# Asymptotic normalizers for the benchmark vector structures.  These drop
# the power sums that vanish as M, n grow (uniform vectors have
# s_3 = O(M**-1/2), s_4 = O(1/M)) and keep the ones that survive
# (s_1(uniform) = sqrt(M), so kappa3 * s_1 / sqrt(n) tends to
# kappa3 * sqrt(y)).

def sigma_gaussian_vector(d: float, y: float) -> float:
    """Limiting sd of the overlap fluctuation under Gaussian noise."""
    return math.sqrt(4.0 * mp_core.theta(d, y) ** 2 + mp_core.v_E(d, y))


def delocalized_shift(d: float, y: float, noise: CumulantSet) -> float:
    """Magnitude of the downward mean shift when both vectors are uniform."""
    return (2.0 * mp_core.psi(d, y) / d**2) * noise.kappa3 * math.sqrt(y)


def sigma_mixed_vector(d: float, y: float, noise: CumulantSet) -> float:
    """Limiting sd for a uniform left vector and a sparse right vector."""
    th = mp_core.theta(d, y)
    var = (
        4.0 * th**2
        + mp_core.v_E(d, y)
        + (4.0 / d) * th**2 * noise.kappa3 * math.sqrt(y)
        + (y * th**2 / d**2) * noise.kappa4
    )
    return math.sqrt(var)


def sigma_sparse_vector(d: float, y: float, noise: CumulantSet) -> float:
    """Limiting sd of the Gaussian remainder when both vectors are sparse
    and the realized linear noise term is subtracted from the statistic."""
    th = mp_core.theta(d, y)
    ps = mp_core.psi(d, y)
    var = mp_core.v_E(d, y) + noise.kappa4 * (ps**2 + y * th**2) / d**2
    return math.sqrt(var)


def sigma_t1(ds, y: float, noise: CumulantSet = GAUSSIAN) -> float:
    """Limiting sd of the subspace statistic for the benchmark frame
    (first left vector uniform, remaining left vectors mean-zero,
    hypothesized right frame canonical)."""
    ds = tuple(float(d) for d in ds)
    th = [mp_core.theta(d, y) for d in ds]
    var = sum(4.0 * t**2 + mp_core.v_E(d, y) for d, t in zip(ds, th))
    var += y * noise.kappa4 * sum(t**2 / d**2 for d, t in zip(ds, th))
    var += 4.0 * noise.kappa3 * math.sqrt(y) * th[0] ** 2 / ds[0]
    return math.sqrt(var)


# ---------------------------------------------------------------------------
# Closed single-variable forms for the y = 1/2 benchmark with Two-Point
# noise.  They duplicate the general expressions above through independent
# arithmetic and are cross-checked in the tests.

def _require_half_supercritical(d: float) -> float:
    d = float(d)
    if d**4 <= 0.5:
        raise DomainError(f"d={d} is subcritical at y = 1/2")
    return d


def special_sigma_g(d: float) -> float:
    """Gaussian-noise overlap sd at y = 1/2, polynomial form."""
    d = _require_half_supercritical(d)
    num = 8 * d**12 + 24 * d**10 + 26 * d**8 + 20 * d**6 + 15 * d**4 + 8 * d**2 + 2
    den = 2 * d**4 * (2 * d**4 - 1) * (d**2 + 1) ** 4
    return math.sqrt(num / den)


def special_shift_dt(d: float) -> float:
    """Two-Point mean-shift correction at y = 1/2 for uniform vectors."""
    d = _require_half_supercritical(d)
    return (d**6 - 1.5 * d**2 - 1.0) / (d**5 * (d**2 + 1) ** 2)


def special_sigma_t(d: float) -> float:
    """Two-Point sd at y = 1/2, uniform left / sparse right vectors."""
    d = _require_half_supercritical(d)
    q = (d**4 + d**2 + 0.5) ** 2
    var = (
        special_sigma_g(d) ** 2
        + 2.0 * q / (d**7 * (d**2 + 1) ** 4)
        - 0.75 * q / (d**8 * (d**2 + 1) ** 4)
    )
    return math.sqrt(var)


def special_sigma_s(d: float) -> float:
    """Two-Point remainder sd at y = 1/2 when both vectors are sparse."""
    d = _require_half_supercritical(d)
    num = (
        d**16 + 4 * d**14 + 6 * d**12 + d**10 - 6 * d**8 - 2 * d**6
        + 6.5 * d**4 + 6.25 * d**2 + 1.6875
    )
    den = d**8 * (d**2 + 1) ** 4 * (2 * d**4 - 1)
    return math.sqrt(num / den)
