"""Free Klein-Gordon evolution of Gaussian-sum initial data, evaluated pointwise.

A Gaussian ``A exp(-|x-c|^2/(2 s^2))`` has the spectrum ``A (2 pi s^2)^{3/2} exp(-s^2 k^2/2)``.
After angular integration the free solution at distance ``R = |x - c|`` is

    A sqrt(2/pi) s^3 int_0^inf k^2 exp(-s^2 k^2 / 2) T(k, t) sinc(k R) dk

with ``T = cos(t w)`` for displacement data and ``T = sin(t w)/w`` for velocity data,
``w = sqrt(k^2 + m^2)``. The radial integral is computed with Gauss-Legendre panels;
the panel count is doubled until two successive levels agree to the tolerance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Sequence

import numpy as np

from .errors import AccuracyError, ConfigurationError
from .model import Gaussian

_GL_ORDER = 16
_MAX_CHUNK = 4_000_000


@lru_cache(maxsize=None)
def _panel_rule(k_max: float, panels: int, order: int = _GL_ORDER):
    xi, wi = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(0.0, k_max, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    k = (mid[:, None] + half[:, None] * xi[None, :]).reshape(-1)
    w = (half[:, None] * wi[None, :]).reshape(-1)
    k.setflags(write=False)
    w.setflags(write=False)
    return k, w


def _sinc(u):
    return np.sinc(u / math.pi)


def _dsinc(u):
    """Derivative of sin(u)/u."""
    out = np.empty_like(u)
    small = np.abs(u) < 1e-3
    us = u[small]
    out[small] = -us / 3.0 + us ** 3 / 30.0
    ub = u[~small]
    out[~small] = (ub * np.cos(ub) - np.sin(ub)) / (ub * ub)
    return out


@dataclass(frozen=True)
class _Component:
    amplitude: complex
    center: np.ndarray
    width: float
    velocity: bool  # True for pi0 data (sin(t w)/w weight)
    k_max: float


@dataclass(frozen=True, eq=False)
class FreeFieldEvaluator:
    """Pointwise evaluator of the free field generated by the regular initial data."""

    psi0_reg: tuple[Gaussian, ...]
    pi0_reg: tuple[Gaussian, ...]
    mass: float
    tol: float = 1e-11
    panel_budget: int = 16384
    _components: tuple = field(init=False, repr=False)

    def __post_init__(self):
        if not self.mass > 0:
            raise ConfigurationError("free field mass must be positive")
        object.__setattr__(self, "psi0_reg", tuple(self.psi0_reg))
        object.__setattr__(self, "pi0_reg", tuple(self.pi0_reg))
        comps = []
        n_comp = max(1, len(self.psi0_reg) + len(self.pi0_reg))
        for velocity, group in ((False, self.psi0_reg), (True, self.pi0_reg)):
            for g in group:
                # Gaussian spectral decay: exp(-s^2 k^2 / 2) below tol / amplitude
                ratio = max(abs(g.amplitude) * n_comp / self.tol, math.e)
                k_max = max(8.0, math.sqrt(2.0 * math.log(ratio))) / g.width
                comps.append(_Component(g.amplitude, np.asarray(g.center, dtype=float),
                                        g.width, velocity, k_max))
        object.__setattr__(self, "_components", tuple(comps))

    @property
    def is_zero(self) -> bool:
        return not self._components

    # -- core -------------------------------------------------------------
    def _tail_bound(self, comp: _Component, which: str) -> float:
        """Bound on the neglected spectral tail beyond k_max."""
        a = 0.5 * comp.width ** 2
        K = comp.k_max
        # int_K^inf k^2 e^{-a k^2} dk and int_K^inf k^3 e^{-a k^2} dk
        i2 = K * math.exp(-a * K * K) / (2 * a) + math.sqrt(math.pi) * math.erfc(math.sqrt(a) * K) / (4 * a ** 1.5)
        i3 = (a * K * K + 1) * math.exp(-a * K * K) / (2 * a * a)
        pref = abs(comp.amplitude) * math.sqrt(2.0 / math.pi) * comp.width ** 3
        if which == "value":
            return pref * (i2 / self.mass if comp.velocity else i2)
        # time derivative (weight w) or radial derivative (weight k)
        return pref * (i3 + self.mass * i2)

    def _base_panels(self, comp: _Component, R: np.ndarray, t: np.ndarray) -> np.ndarray:
        # roughly one panel per half oscillation of the combined phase
        need = comp.k_max * (R + t + comp.width) / math.pi
        p = np.maximum(need, 8.0)
        return (2.0 ** np.ceil(np.log2(p))).astype(np.int64)

    def _integrate(self, comp: _Component, R: np.ndarray, t: np.ndarray, panels: int, which: str):
        k, w = _panel_rule(comp.k_max, int(panels))
        out = np.empty(R.shape, dtype=float)
        rows = max(1, _MAX_CHUNK // k.size)
        omega = np.sqrt(k * k + self.mass ** 2)
        spec = k * k * np.exp(-0.5 * (comp.width * k) ** 2) * w
        for start in range(0, R.size, rows):
            Rc = R[start:start + rows, None]
            tc = t[start:start + rows, None]
            ph = tc * omega[None, :]
            if which == "dt":
                T = np.cos(ph) if comp.velocity else -omega * np.sin(ph)
            elif comp.velocity:
                T = np.sin(ph) / omega
            else:
                T = np.cos(ph)
            if which == "dr":
                S = k * _dsinc(k * Rc)
            else:
                S = _sinc(k * Rc)
            out[start:start + rows] = (T * S * spec).sum(axis=1)
        return out * (math.sqrt(2.0 / math.pi) * comp.width ** 3)

    def _component_values(self, comp: _Component, R: np.ndarray, t: np.ndarray, which: str):
        """Real radial integral for one component; returns (values, error estimates)."""
        result = np.empty(R.shape, dtype=float)
        errs = np.empty(R.shape, dtype=float)
        base = self._base_panels(comp, R, t)
        tail = self._tail_bound(comp, which)
        tol = self.tol / max(1, len(self._components))
        for p0 in np.unique(base):
            idx = np.nonzero(base == p0)[0]
            p = int(p0)
            coarse = self._integrate(comp, R[idx], t[idx], p, which)
            while True:
                fine = self._integrate(comp, R[idx], t[idx], 2 * p, which)
                est = np.abs(fine - coarse) * abs(comp.amplitude) + tail
                ok = est <= tol
                result[idx[ok]] = fine[ok]
                errs[idx[ok]] = est[ok]
                if ok.all():
                    break
                idx, coarse, p = idx[~ok], fine[~ok], 2 * p
                if 2 * p > self.panel_budget:
                    raise AccuracyError("free-field quadrature missed tolerance within panel budget",
                                        float(np.max(est[~ok])))
        return result * 1.0, errs

    def _evaluate(self, points: np.ndarray, t: np.ndarray, which: str):
        """Sum over components; ``which`` in {'value', 'dt'}."""
        out = np.zeros(points.shape[0], dtype=complex)
        err = np.zeros(points.shape[0])
        for comp in self._components:
            R = np.sqrt(np.sum((points - comp.center) ** 2, axis=-1))
            vals, e = self._component_values(comp, R, t, which)
            out += comp.amplitude * vals
            err += e
        return out, err

    # -- public -----------------------------------------------------------
    def evaluate(self, points, t, with_time_derivative: bool = False):
        """Vector evaluation at ``points`` (shape (N, 3)); ``t`` scalar or (N,)."""
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        ts = np.broadcast_to(np.asarray(t, dtype=float), (pts.shape[0],)).copy()
        if np.any(ts < 0):
            raise ConfigurationError("free field is evaluated for t >= 0 only")
        val, _ = self._evaluate(pts, ts, "value")
        if not with_time_derivative:
            return val
        dval, _ = self._evaluate(pts, ts, "dt")
        return val, dval

    def evaluate_with_error(self, points, t, which: str = "value"):
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        ts = np.broadcast_to(np.asarray(t, dtype=float), (pts.shape[0],)).copy()
        return self._evaluate(pts, ts, which)

    def value(self, point, t: float, with_time_derivative: bool = False):
        res = self.evaluate(np.asarray(point, dtype=float).reshape(1, 3), t, with_time_derivative)
        if with_time_derivative:
            return complex(res[0][0]), complex(res[1][0])
        return complex(res[0])

    def at_times(self, point, times, with_time_derivative: bool = False):
        """Values at one point for many times."""
        ts = np.asarray(times, dtype=float).reshape(-1)
        pts = np.broadcast_to(np.asarray(point, dtype=float).reshape(1, 3), (ts.size, 3))
        return self.evaluate(pts, ts, with_time_derivative)

    def radial_component(self, index: int, R, t: float):
        """(value, d/dR, d/dt) of component ``index`` as functions of ``R = |x - c|``.

        Values include the complex amplitude.
        """
        comp = self._components[index]
        R = np.asarray(R, dtype=float).reshape(-1)
        ts = np.full(R.shape, float(t))
        v, _ = self._component_values(comp, R, ts, "value")
        dr, _ = self._component_values(comp, R, ts, "dr")
        dt, _ = self._component_values(comp, R, ts, "dt")
        a = comp.amplitude
        return a * v, a * dr, a * dt

    @property
    def component_centers(self) -> list[np.ndarray]:
        return [c.center for c in self._components]

    @property
    def component_widths(self) -> list[float]:
        return [c.width for c in self._components]


def make_free_field(psi0_reg: Sequence[Gaussian], pi0_reg: Sequence[Gaussian], mass: float,
                    tol: float = 1e-11) -> FreeFieldEvaluator:
    return FreeFieldEvaluator(tuple(psi0_reg), tuple(pi0_reg), float(mass), tol)


def eval_regular_free_field(evaluator: FreeFieldEvaluator, point, t: float,
                            with_time_derivative: bool = False):
    return evaluator.value(point, t, with_time_derivative)


def eval_regular_free_field_many(evaluator: FreeFieldEvaluator, points, t: float,
                                 with_time_derivative: bool = False):
    pts = np.asarray(points, dtype=float)
    if pts.size == 0:
        return (np.zeros(0, dtype=complex), np.zeros(0, dtype=complex)) if with_time_derivative \
            else np.zeros(0, dtype=complex)
    return evaluator.evaluate(pts.reshape(-1, 3), t, with_time_derivative)
