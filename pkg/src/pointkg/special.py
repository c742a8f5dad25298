"""Bessel function J1 and the light-cone kernel of the Klein-Gordon propagator.

The kernel ``K(t, r) = theta(t - r) J1(m sqrt(t^2 - r^2)) / sqrt(t^2 - r^2)`` is
written as ``m * J1(x)/x`` with ``x = m sqrt(t^2 - r^2)``. ``J1(x)/x`` is an entire
function of ``x^2``, so it is evaluated directly rather than by division.

Three regions are used for double precision accuracy better than 1e-13:

* ``x <= 8``: power series of ``J1(x)/x`` in ``-x^2/4`` (Horner form);
* ``8 < x < 20``: Miller backward recurrence normalised by
  ``J0 + 2 (J2 + J4 + ...) = 1``;
* ``x >= 20``: Hankel asymptotic expansion with 12 terms in each of P and Q.

Within ``ZERO_WINDOW`` of each of the first zeros of J1 a Taylor expansion about the
zero replaces the above, which keeps the relative error small where J1 changes sign.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DomainError

SERIES_LIMIT = 8.0
ASYMPTOTIC_LIMIT = 20.0
NEAR_CONE = 1e-4

# J1(x)/x = sum_k c_k q^k with q = -x^2/4, c_k = 1 / (2 k! (k+1)!)
_SERIES_TERMS = 34
_SERIES_COEF = [0.5]
for _k in range(1, _SERIES_TERMS):
    _SERIES_COEF.append(_SERIES_COEF[-1] / (_k * (_k + 1)))
_SERIES_COEF = tuple(reversed(_SERIES_COEF))

_MILLER_START = 64

# Hankel coefficients a_k(1) = prod_{i=1..k} (4 - (2i-1)^2) / (k! 8^k)
_HANKEL_TERMS = 24
_HANKEL = [1.0]
for _k in range(1, _HANKEL_TERMS):
    _HANKEL.append(_HANKEL[-1] * (4.0 - (2 * _k - 1) ** 2) / (_k * 8.0))
_HANKEL_P = tuple(((-1) ** (k // 2)) * _HANKEL[k] for k in range(0, _HANKEL_TERMS, 2))
_HANKEL_Q = tuple(((-1) ** ((k - 1) // 2)) * _HANKEL[k] for k in range(1, _HANKEL_TERMS, 2))


# zeros j of J1 up to 60 as (high, low) double-double pairs, with J0(j) = J1'(j)
_J1_ZEROS = (
    (3.8317059702075125, -1.5269184090088067e-16, -0.402759395702553),
    (7.015586669815619, -9.414165653410389e-17, 0.30011575252613254),
    (10.173468135062722, 4.482162274768888e-16, -0.2497048770578432),
    (13.323691936314223, 2.600408064718813e-16, 0.21835940724787295),
    (16.470630050877634, -1.619019544798128e-15, -0.1964653714686572),
    (19.615858510468243, -1.004445634526616e-15, 0.18006337534431555),
    (22.760084380592772, -4.925749373614922e-16, -0.16718460047381806),
    (25.903672087618382, 4.894530726419825e-16, 0.15672498625285222),
    (29.046828534916855, -2.799892014010185e-16, -0.14801110997277755),
    (32.189679910974405, -1.5481609125503839e-15, 0.14060579818398225),
    (35.33230755008387, -3.2611649318496424e-15, -0.1342112403100007),
    (38.474766234771614, 7.193676286738655e-16, 0.12861662207206995),
    (41.61709421281445, 5.700452680227534e-16, -0.12366796076983713),
    (44.75931899765282, 2.3276041019911167e-15, 0.11924981201068947),
    (47.90146088718545, -3.46654782460118e-15, -0.11527369412016795),
    (51.04353518357151, 2.7050774005019414e-15, 0.1116704968592113),
    (54.18555364106132, 2.2014149402021727e-15, -0.10838534894368256),
    (57.32752543790101, 1.4475427878291946e-15, 0.10537405539523521),
)
ZERO_WINDOW = 0.25
_ZERO_TERMS = 22


def _zero_taylor_coefficients(root: float, slope: float) -> tuple[float, ...]:
    """Taylor coefficients of J1 about a zero, from ``x^2 y'' + x y' + (x^2 - 1) y = 0``."""
    a = [0.0, slope]
    j2 = root * root
    for n in range(0, _ZERO_TERMS - 2):
        acc = (2 * root * n * (n + 1) + root * (n + 1)) * a[n + 1] + (n * n + j2 - 1.0) * a[n]
        if n >= 1:
            acc += 2 * root * a[n - 1]
        if n >= 2:
            acc += a[n - 2]
        a.append(-acc / (j2 * (n + 2) * (n + 1)))
    return tuple(a)


_ZERO_SERIES = tuple((hi, lo, _zero_taylor_coefficients(hi, slope)) for hi, lo, slope in _J1_ZEROS)
_ZERO_HI = np.array([hi for hi, _, _ in _J1_ZEROS])


@dataclass(frozen=True)
class KernelParams:
    mass: float

    def __post_init__(self):
        if not (self.mass > 0 and math.isfinite(self.mass)):
            raise DomainError(f"kernel mass must be positive, got {self.mass}")


def _check_domain(x: np.ndarray) -> None:
    if not np.all(np.isfinite(x)):
        raise DomainError("J1 argument must be finite")
    if np.any(x < 0):
        raise DomainError("J1 argument must be nonnegative")


def _series_j1x(x: np.ndarray) -> np.ndarray:
    q = -0.25 * x * x
    s = np.full_like(x, _SERIES_COEF[0])
    for c in _SERIES_COEF[1:]:
        s = s * q + c
    return s


def _miller_j1(x: np.ndarray) -> np.ndarray:
    # downward recurrence J_{k-1} = (2k/x) J_k - J_{k+1}; start far above x
    j_next = np.zeros_like(x)
    j = np.full_like(x, 1e-30)
    norm = np.zeros_like(x)
    j1 = np.zeros_like(x)
    two_over_x = 2.0 / x
    for k in range(_MILLER_START, 0, -1):
        j_prev = k * two_over_x * j - j_next
        j_next, j = j, j_prev
        order = k - 1
        if order == 1:
            j1 = j.copy()
        elif order > 0 and order % 2 == 0:
            norm += 2.0 * j
    norm += j
    return j1 / norm


def _hankel_j1(x: np.ndarray) -> np.ndarray:
    z = 1.0 / (x * x)
    p = np.full_like(x, _HANKEL_P[-1])
    for c in reversed(_HANKEL_P[:-1]):
        p = p * z + c
    q = np.full_like(x, _HANKEL_Q[-1])
    for c in reversed(_HANKEL_Q[:-1]):
        q = q * z + c
    q = q / x
    # chi = x - 3 pi / 4, expanded to avoid rounding the shifted argument
    c, s = np.cos(x), np.sin(x)
    cos_chi = (s - c) * math.sqrt(0.5)
    sin_chi = -(s + c) * math.sqrt(0.5)
    return np.sqrt(2.0 / (math.pi * x)) * (p * cos_chi - q * sin_chi)


def j1_over_x(x):
    """Return ``J1(x)/x`` for ``x >= 0`` (value 1/2 at the origin)."""
    arr = np.asarray(x, dtype=float)
    _check_domain(arr)
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    tiny = flat < NEAR_CONE
    small = (~tiny) & (flat <= SERIES_LIMIT)
    mid = (flat > SERIES_LIMIT) & (flat < ASYMPTOTIC_LIMIT)
    large = flat >= ASYMPTOTIC_LIMIT
    if tiny.any():
        x2 = flat[tiny] ** 2
        out[tiny] = 0.5 - x2 / 16.0 + x2 * x2 / 384.0
    if small.any():
        out[small] = _series_j1x(flat[small])
    if mid.any():
        xm = flat[mid]
        out[mid] = _miller_j1(xm) / xm
    if large.any():
        xl = flat[large]
        out[large] = _hankel_j1(xl) / xl
    # nearest tabulated zero of each argument
    pos = np.clip(np.searchsorted(_ZERO_HI, flat), 1, _ZERO_HI.size - 1)
    nearest = np.where(flat - _ZERO_HI[pos - 1] < _ZERO_HI[pos] - flat, pos - 1, pos)
    hit = np.abs(flat - _ZERO_HI[nearest]) < ZERO_WINDOW
    for idx in np.unique(nearest[hit]):
        hi, lo, coef = _ZERO_SERIES[idx]
        near = hit & (nearest == idx)
        if near.any():
            xz = flat[near]
            delta = (xz - hi) - lo
            acc = np.full_like(xz, coef[-1])
            for c in reversed(coef[:-1]):
                acc = acc * delta + c
            out[near] = acc / xz
    out = out.reshape(arr.shape)
    return float(out) if out.ndim == 0 else out


def bessel_j1(x):
    """Bessel function of the first kind of order one for ``x >= 0``."""
    arr = np.asarray(x, dtype=float)
    _check_domain(arr)
    out = np.asarray(j1_over_x(arr)) * arr
    return float(out) if out.ndim == 0 else out


def tail_kernel(t, r, params: KernelParams | float):
    """Light-cone kernel ``theta(t-r) J1(m sqrt(t^2-r^2)) / sqrt(t^2-r^2)``.

    Equals ``m/2`` on the cone ``t = r`` and zero outside it. ``t`` and ``r``
    broadcast against each other.
    """
    mass = params.mass if isinstance(params, KernelParams) else float(params)
    t_arr = np.asarray(t, dtype=float)
    r_arr = np.asarray(r, dtype=float)
    if np.any(r_arr < 0):
        raise DomainError("kernel radius must be nonnegative")
    if not (np.all(np.isfinite(t_arr)) and np.all(np.isfinite(r_arr))):
        raise DomainError("kernel arguments must be finite")
    t_b, r_b = np.broadcast_arrays(t_arr, r_arr)
    inside = t_b >= r_b
    # (t - r)(t + r) keeps accuracy next to the cone
    u2 = np.where(inside, (t_b - r_b) * (t_b + r_b), 0.0)
    x = mass * np.sqrt(u2)
    out = np.where(inside, mass * np.asarray(j1_over_x(x)), 0.0)
    return float(out) if out.ndim == 0 else out
