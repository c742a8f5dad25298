"""Driving terms of the charge equations.

The free evolution of the initial field evaluated at the interaction points splits into
the regular free field at ``y_j`` and the closed-form evolution of each singular piece
``(zeta0_k + t zeta0dot_k) g_k``. Only the tail integrals need quadrature; they are
computed by the composite trapezoid rule on nodes supplied by the caller (the solver
grid) or on a uniform grid of spacing ``quad_dt`` ending exactly on the light cone.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import IndexContractError
from .freefield import FreeFieldEvaluator
from .model import FOUR_PI, InitialData, SystemConfig
from .special import tail_kernel


def cone_trapezoid(t: float, r: float, mass: float, nodes: np.ndarray, samples: np.ndarray,
                   upper_sample) -> complex | np.ndarray:
    """Trapezoid rule for ``int_0^{t-r} K(t-s, r) f(s) ds``.

    ``nodes`` is increasing and starts at 0; ``samples[..., l] = f(nodes[l])``. The
    interval is cut at the cone ``s = t - r``; ``upper_sample`` is ``f(t - r)`` and is
    used only when ``t - r`` is not itself a node. Returns zero when ``t <= r``.
    """
    upper = t - r
    samples = np.asarray(samples)
    lead = samples.shape[:-1]
    if upper <= 0.0:
        return np.zeros(lead, dtype=complex) if lead else 0j
    p = int(np.searchsorted(nodes, upper, side="right"))  # nodes[:p] <= upper
    s = nodes[:p]
    # nodes satisfy s <= t - r; the clamp stops rounding from pushing the last one off the cone
    kern = tail_kernel(np.maximum(t - s, r), r, mass)
    wts = np.empty(p)
    if p == 1:
        wts[0] = 0.0
    else:
        gaps = np.diff(s)
        wts[0] = 0.5 * gaps[0]
        wts[-1] = 0.5 * gaps[-1]
        wts[1:-1] = 0.5 * (gaps[:-1] + gaps[1:])
    total = (samples[..., :p] * (kern * wts)).sum(axis=-1)
    tail = upper - s[-1]
    if tail > 0.0:
        k_last = kern[-1]
        k_cone = 0.5 * mass
        total = total + 0.5 * tail * (k_last * samples[..., p - 1] + k_cone * np.asarray(upper_sample))
    return total


def uniform_nodes(upper: float, spacing: float) -> np.ndarray:
    """Nodes on ``[0, upper]`` with step at most ``spacing``, last node at ``upper``."""
    if upper <= 0:
        return np.zeros(1)
    count = max(1, int(math.ceil(upper / spacing - 1e-9)))
    return np.linspace(0.0, upper, count + 1)


@dataclass(eq=False)
class SourceSet:
    """Source terms ``lambda_j(t)`` for a system and its initial data."""

    system: SystemConfig
    data: InitialData
    free: FreeFieldEvaluator
    quad_dt: float = 1e-3
    _reg_cache: dict = field(default_factory=dict, init=False, repr=False)

    @property
    def mass(self) -> float:
        return self.system.mass

    def linear_charge(self, k: int, s):
        """``zeta0_k + s zeta0dot_k``: the charge the singular initial data would keep."""
        return self.data.zeta0[k] + np.asarray(s) * self.data.zeta0_dot[k]

    # -- regular part -------------------------------------------------------
    def lambda_reg(self, j: int, t: float) -> complex:
        key = (j, float(t))
        if key not in self._reg_cache:
            if self.free.is_zero:
                self._reg_cache[key] = 0j
            else:
                self._reg_cache[key] = self.free.value(self.system.points[j], t)
        return self._reg_cache[key]

    def lambda_reg_many(self, times) -> np.ndarray:
        """``(n, len(times))`` array of regular free-field values at the sites."""
        times = np.asarray(times, dtype=float)
        n = self.system.n
        out = np.zeros((n, times.size), dtype=complex)
        if self.free.is_zero or times.size == 0:
            return out
        for j in range(n):
            out[j] = self.free.at_times(self.system.points[j], times)
            for t, v in zip(times, out[j]):
                self._reg_cache[(j, float(t))] = complex(v)
        return out

    # -- singular parts -----------------------------------------------------
    def _tail(self, k: int, t: float, r: float, nodes) -> complex:
        if t <= r:
            return 0j
        if nodes is None:
            nodes = uniform_nodes(t - r, self.quad_dt)
        nodes = np.asarray(nodes, dtype=float)
        return complex(cone_trapezoid(t, r, self.mass, nodes, self.linear_charge(k, nodes),
                                      self.linear_charge(k, t - r)))

    def lambda_diag(self, j: int, t: float, nodes=None) -> complex:
        m = self.mass
        z0, z1 = self.data.zeta0[j], self.data.zeta0_dot[j]
        local = -(m * (z0 + t * z1) - z1) / FOUR_PI
        if t == 0.0:
            return complex(local)
        return complex(local + m / FOUR_PI * self._tail(j, t, 0.0, nodes))

    def lambda_cross(self, j: int, k: int, t: float, nodes=None) -> complex:
        """Field of the singular initial piece at site ``k`` evaluated at ``y_j``."""
        if j == k:
            raise IndexContractError("lambda_cross needs distinct sites; use lambda_diag for j == k")
        d = float(self.system.distances[j, k])
        m = self.mass
        z0, z1 = self.data.zeta0[k], self.data.zeta0_dot[k]
        value = (z0 + t * z1) * self.system.green.entries[j, k]
        if t >= d:
            value = value - (z0 + (t - d) * z1) / (FOUR_PI * d)
            value = value + m / FOUR_PI * self._tail(k, t, d, nodes)
        return complex(value)

    def lambda_total(self, j: int, t: float, nodes=None) -> complex:
        total = self.lambda_reg(j, t) + self.lambda_diag(j, t, nodes)
        for k in range(self.system.n):
            if k != j:
                total += self.lambda_cross(j, k, t, nodes)
        return complex(total)


def cone_trapezoid_many(t: float, radii: np.ndarray, mass: float, nodes: np.ndarray,
                        samples: np.ndarray, upper_samples: np.ndarray, chunk: int = 256) -> np.ndarray:
    """:func:`cone_trapezoid` for one sampled function and many radii at once.

    ``samples`` has shape ``(N,)`` and ``upper_samples[i] = f(t - radii[i])``. The weights
    are the same as in the scalar routine, so results agree with it to rounding.
    """
    radii = np.asarray(radii, dtype=float)
    out = np.zeros(radii.shape, dtype=complex)
    uppers = t - radii
    counts = np.searchsorted(nodes, uppers, side="right")
    gaps = np.diff(nodes)
    left_gap = np.concatenate([[0.0], gaps])
    right_gap = np.concatenate([gaps, [0.0]])
    idx = np.arange(nodes.size)
    active = np.nonzero(uppers > 0.0)[0]
    for start in range(0, active.size, chunk):
        rows = active[start:start + chunk]
        p = counts[rows]
        width = int(p.max())
        l = idx[None, :width]
        last = (p - 1)[:, None]
        tail = uppers[rows] - nodes[p - 1]
        wts = (0.5 * left_gap[None, :width] * (l <= last) + 0.5 * right_gap[None, :width] * (l < last)
               + 0.5 * tail[:, None] * (l == last))
        kern = tail_kernel(np.maximum(t - nodes[None, :width], radii[rows, None]), radii[rows, None], mass)
        out[rows] = (samples[None, :width] * kern * wts).sum(axis=1) + 0.5 * tail * (0.5 * mass) * upper_samples[rows]
    return out
