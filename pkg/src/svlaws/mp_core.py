"""Marchenko-Pastur spectral functionals and outlier maps.

Everything here is a pure scalar function of the signal strength ``d`` and
the dimension ratio ``y = M/n``.  The two Stieltjes transforms ``m1`` (for
``XX*``) and ``m2`` (for ``X*X``) are evaluated on the real axis to the
right of the bulk edge ``lambda_plus``, on the branch fixed by the closed
forms at the outlier location ``p(d)`` (see the identity suite in the
tests).  All downstream mean/variance formulas are built from these.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import DomainError

DEFAULT_TAU = 0.05
EDGE_GUARD = 1e-9

# Margin above the y**(1/4) threshold below which a signal is treated as
# subcritical.  Pure evaluation only needs to dodge the exact edge;
# inference stays clear of the near-critical regime.
SUPERCRITICAL_MARGIN_EVAL = 1e-6
SUPERCRITICAL_MARGIN_INFERENCE = 0.05


@dataclass(frozen=True)
class AspectRatio:
    """Dimension ratio ``y = M/n`` with its bulk support edges.

    The edges are derived properties, never stored, so they cannot drift
    out of sync with ``y``.
    """

    y: float
    tau: float = DEFAULT_TAU

    def __post_init__(self):
        if not (0.0 < self.tau < 1.0):
            raise DomainError(f"tau must lie in (0, 1), got {self.tau}")
        if not (self.tau <= self.y <= 1.0 / self.tau):
            raise DomainError(
                f"aspect ratio y={self.y} outside [{self.tau}, {1.0 / self.tau}]"
            )

    @property
    def lambda_plus(self) -> float:
        return (1.0 + math.sqrt(self.y)) ** 2

    @property
    def lambda_minus(self) -> float:
        return (1.0 - math.sqrt(self.y)) ** 2


def _ratio(y) -> float:
    """Accept a plain float or an AspectRatio; validate and return y."""
    if isinstance(y, AspectRatio):
        return y.y
    y = float(y)
    if y <= 0.0:
        raise DomainError(f"aspect ratio must be positive, got {y}")
    return y


def lambda_plus(y) -> float:
    y = _ratio(y)
    return (1.0 + math.sqrt(y)) ** 2


def lambda_minus(y) -> float:
    y = _ratio(y)
    return (1.0 - math.sqrt(y)) ** 2


def bbp_threshold(y) -> float:
    """Signal strength below which the outlier merges into the bulk."""
    return _ratio(y) ** 0.25


def require_supercritical(d: float, y, margin: float = SUPERCRITICAL_MARGIN_EVAL) -> float:
    """Validate ``d > y**(1/4) + margin`` and return d as a float."""
    d = float(d)
    thr = bbp_threshold(y) + margin
    if not d > thr:
        raise DomainError(
            f"signal strength d={d} is not supercritical for y={_ratio(y)} "
            f"(needs d > {thr:.6g})"
        )
    return d


def _check_outside_bulk(z: float, y: float) -> None:
    edge = (1.0 + math.sqrt(y)) ** 2
    if not z > edge + EDGE_GUARD:
        raise DomainError(
            f"z={z} must exceed the bulk edge {edge:.12g} by more than "
            f"{EDGE_GUARD}; edge/bulk evaluation is unsupported"
        )


def _edge_sqrt(z: float, y: float) -> float:
    """sqrt((z - lambda_plus)(z - lambda_minus)) for real z right of the bulk."""
    return math.sqrt((z - lambda_plus(y)) * (z - lambda_minus(y)))


def m1(z: float, y) -> float:
    """Stieltjes transform of the bulk spectral law of XX* at real z > lambda_plus.

    Real branch: the one on which the outlier-location identities hold
    (e.g. ``m1(p(x)) = -1/(x**2 + y)``); it is negative right of the bulk.
    """
    y = _ratio(y)
    z = float(z)
    _check_outside_bulk(z, y)
    return (1.0 - y - z + _edge_sqrt(z, y)) / (2.0 * z * y)


def m2(z: float, y) -> float:
    """Stieltjes transform of the bulk spectral law of X*X at real z > lambda_plus."""
    y = _ratio(y)
    z = float(z)
    _check_outside_bulk(z, y)
    return (y - 1.0 - z + _edge_sqrt(z, y)) / (2.0 * z)


def m1_prime(z: float, y) -> float:
    """Derivative of m1 on the real branch."""
    y = _ratio(y)
    z = float(z)
    _check_outside_bulk(z, y)
    s = _edge_sqrt(z, y)
    s_prime = (z - (1.0 + y)) / s
    # quotient rule on (1 - y - z + s) / (2 z y)
    return ((s_prime - 1.0) * z - (1.0 - y - z + s)) / (2.0 * z * z * y)


def m2_prime(z: float, y) -> float:
    """Derivative of m2 on the real branch."""
    y = _ratio(y)
    z = float(z)
    _check_outside_bulk(z, y)
    s = _edge_sqrt(z, y)
    s_prime = (z - (1.0 + y)) / s
    return ((s_prime - 1.0) * z - (y - 1.0 - z + s)) / (2.0 * z * z)


def p(d: float, y) -> float:
    """Location of the outlier squared singular value produced by strength d."""
    y = _ratio(y)
    d = float(d)
    if d <= 0.0:
        raise DomainError(f"signal strength must be positive, got {d}")
    d2 = d * d
    return (d2 + 1.0) * (d2 + y) / d2


def p_inv(x: float, y) -> float:
    """Unique supercritical strength d with p(d) = x, for x > lambda_plus.

    Solves the quadratic in d**2 and keeps the root with d > y**(1/4).
    """
    y = _ratio(y)
    x = float(x)
    if not x > lambda_plus(y):
        raise DomainError(
            f"x={x} is at or below the bulk edge {lambda_plus(y):.12g}; "
            "no supercritical preimage exists"
        )
    b = x - 1.0 - y
    disc = b * b - 4.0 * y
    # x > lambda_plus guarantees b > 2*sqrt(y) > 0 and disc > 0
    t = 0.5 * (b + math.sqrt(disc))
    return math.sqrt(t)


def a(d: float, y) -> float:
    """Limit of the squared right-vector overlap for a supercritical spike."""
    y = _ratio(y)
    d = float(d)
    d2 = d * d
    return (d2 * d2 - y) / (d2 * (d2 + 1.0))


def a_left(d: float, y) -> float:
    """Limit of the squared left-vector overlap (transpose-dual of ``a``)."""
    y = _ratio(y)
    d = float(d)
    d2 = d * d
    return (d2 * d2 - y) / (d2 * (d2 + y))


def theta(d: float, y) -> float:
    """Linear response of the overlap to signal-aligned noise; equals a'(d)/2."""
    y = _ratio(y)
    d = float(d)
    d2 = d * d
    return (d2 * d2 + 2.0 * y * d2 + y) / (d2 * d * (d2 + 1.0) ** 2)


def psi(d: float, y) -> float:
    """Companion coefficient entering the third-cumulant mean shift."""
    y = _ratio(y)
    d = float(d)
    d2 = d * d
    return (d2 * d2 * d2 - 3.0 * y * d2 - 2.0 * y) / (d2 * d * (d2 + 1.0) ** 2)


def v_E(d: float, y) -> float:
    """Distribution-free part of the limiting overlap variance.

    Defined only on the supercritical range (d**4 > y).
    """
    y = _ratio(y)
    d = float(d)
    d2 = d * d
    d4 = d2 * d2
    if d4 <= y:
        raise DomainError(f"v_E requires d**4 > y, got d={d}, y={y}")
    th = theta(d, y)
    ps = psi(d, y)
    c2 = (d2 + 1.0) ** 2
    term1 = 2.0 * y * (y + 1.0) * th * th
    term2 = -y * (y - 1.0) * (5.0 * y + 1.0) / (d * c2) * th
    term3 = (d4 + y) * (d2 + y) ** 2 / (d2 * d * c2) * ps
    term4 = 2.0 * y * y * (y - 1.0) ** 2 / (d2 * c2 * c2)
    return 2.0 / (d4 - y) * (term1 + term2 + term3 + term4)


def calT(t: float, y) -> float:
    """Product t * m1(t) * m2(t); equals x**-2 at t = p(x)."""
    return t * m1(t, y) * m2(t, y)


def calT_prime(t: float, y) -> float:
    """Derivative of calT; equals (y - x**4)**-1 at t = p(x)."""
    m1v, m2v = m1(t, y), m2(t, y)
    return m1v * m2v + t * (m1_prime(t, y) * m2v + m1v * m2_prime(t, y))
