"""Vector moment sums and noise-cumulant estimation.

The limiting laws depend on the noise only through the cumulants
(kappa2, kappa3, kappa4) of the standardized entries sqrt(n)*x_ij, and on
the singular vectors only through entrywise power sums.  Both live here.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateSampleError, DimensionMismatchError

UNIT_NORM_TOL = 1e-10
MIN_CUMULANT_SAMPLES = 10


def check_unit_vector(w: np.ndarray, name: str = "w") -> np.ndarray:
    """Validate l2 normalization to 1e-10 and return a flat float array."""
    w = np.asarray(w, dtype=float).reshape(-1)
    nrm = np.linalg.norm(w)
    if abs(nrm - 1.0) > UNIT_NORM_TOL:
        raise ValueError(f"{name} is not unit-norm: ||{name}|| = {nrm!r}")
    return w


def s_l(w: np.ndarray, l: int) -> float:
    """Entrywise power sum sum_i w(i)**l."""
    if l < 1:
        raise ValueError(f"power must be >= 1, got {l}")
    w = np.asarray(w, dtype=float).reshape(-1)
    return float(np.sum(w**l))


def s_kl(w1: np.ndarray, w2: np.ndarray, k: int, l: int) -> float:
    """Mixed power sum sum_i w1(i)**k * w2(i)**l over a shared index."""
    w1 = np.asarray(w1, dtype=float).reshape(-1)
    w2 = np.asarray(w2, dtype=float).reshape(-1)
    if w1.shape != w2.shape:
        raise DimensionMismatchError(
            f"vectors must share a dimension, got {w1.shape} vs {w2.shape}"
        )
    return float(np.sum(w1**k * w2**l))


@dataclass(frozen=True)
class CumulantSet:
    """Cumulants of the standardized noise entries.

    kappa2 must be 1 for the normalized model; estimated sets carry the
    measured value so callers can check the normalization.  kappa4 >= -2
    is required of any genuine distribution with unit variance; violations
    from sampling noise only warrant a warning.
    """

    kappa2: float
    kappa3: float
    kappa4: float

    def __post_init__(self):
        if self.kappa4 < -2.0 - 1e-9:
            warnings.warn(
                f"kappa4={self.kappa4} violates the moment feasibility bound "
                "kappa4 >= -2 for unit variance",
                RuntimeWarning,
                stacklevel=2,
            )

    @property
    def is_gaussian(self) -> bool:
        return self.kappa3 == 0.0 and self.kappa4 == 0.0


GAUSSIAN = CumulantSet(1.0, 0.0, 0.0)
# Two-atom distribution: sqrt(2) w.p. 1/3, -1/sqrt(2) w.p. 2/3.
TWO_POINT = CumulantSet(1.0, 1.0 / np.sqrt(2.0), -1.5)


def atom_cumulants(atoms, weights) -> CumulantSet:
    """Exact cumulants of a finite atom distribution (no sampling)."""
    atoms = np.asarray(atoms, dtype=float)
    weights = np.asarray(weights, dtype=float)
    if atoms.shape != weights.shape:
        raise DimensionMismatchError("atoms and weights must align")
    if abs(weights.sum() - 1.0) > 1e-12 or np.any(weights < 0):
        raise ValueError("weights must be a probability vector")
    mean = float(np.sum(weights * atoms))
    c = atoms - mean
    mu2 = float(np.sum(weights * c**2))
    mu3 = float(np.sum(weights * c**3))
    mu4 = float(np.sum(weights * c**4))
    return CumulantSet(mu2, mu3, mu4 - 3.0 * mu2**2)


def sample_cumulants(samples) -> CumulantSet:
    """Unbiased k-statistic estimates of (kappa2, kappa3, kappa4)."""
    x = np.asarray(samples, dtype=float).reshape(-1)
    n = x.size
    if n < MIN_CUMULANT_SAMPLES:
        raise DegenerateSampleError(
            f"need at least {MIN_CUMULANT_SAMPLES} samples, got {n}"
        )
    c = x - x.mean()
    m2 = float(np.mean(c**2))
    if m2 == 0.0:
        raise DegenerateSampleError("samples have zero variance")
    m3 = float(np.mean(c**3))
    m4 = float(np.mean(c**4))
    k2 = n / (n - 1.0) * m2
    k3 = n * n / ((n - 1.0) * (n - 2.0)) * m3
    k4 = (
        n * n * ((n + 1.0) * m4 - 3.0 * (n - 1.0) * m2 * m2)
        / ((n - 1.0) * (n - 2.0) * (n - 3.0))
    )
    return CumulantSet(k2, k3, k4)


def residual_cumulants(Y: np.ndarray, S_hat: np.ndarray) -> CumulantSet:
    """Estimate noise cumulants from the residual of a fitted signal.

    The residual Y - S_hat is treated as a noise realization whose entries
    have variance 1/n; they are rescaled by sqrt(n) before the k-statistics
    are formed.  numpy's pairwise reductions keep the result bit-stable.
    """
    Y = np.asarray(Y, dtype=float)
    S_hat = np.asarray(S_hat, dtype=float)
    if Y.shape != S_hat.shape or Y.ndim != 2:
        raise DimensionMismatchError(
            f"Y and S_hat must be matrices of equal shape, got {Y.shape} vs {S_hat.shape}"
        )
    n = Y.shape[1]
    resid = (Y - S_hat).reshape(-1) * np.sqrt(n)
    if np.allclose(resid, 0.0):
        raise DegenerateSampleError("residual is identically zero")
    return sample_cumulants(resid)
