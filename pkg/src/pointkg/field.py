"""Field reconstruction from a solved charge history.

The full field is the free evolution of the initial data plus the retarded fields of the
charges. Subtracting ``zeta_k(t) g_k`` leaves the regular part, which in terms of the
deviation ``w_k = zeta_k - zeta0_k - t zeta0dot_k`` is

    psi_reg(x, t) = psi_free_reg(x, t) + sum_k P[w_k](|x - y_k|, t),
    P[f](r, t) = (theta(t - r) f(t - r) - f(t) exp(-m r)) / (4 pi r)
                 - m/(4 pi) int_0^{t-r} K(t - s, r) f(s) ds,

finite at ``r = 0`` with limit ``(m f(t) - f'(t))/(4 pi) - m/(4 pi) int_0^t K(t - s, 0) f(s) ds``.
``psi_reg_t`` is the same expression with ``f = dw/dt`` (``dw/dt(0) = 0`` for initial data in
the domain, so no surface terms appear).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .charges import ChargeHistory
from .errors import HistoryRangeError, SingularPointError
from .model import FOUR_PI, PotentialSpec, SystemConfig, eval_potential, yukawa
from .sources import SourceSet, cone_trapezoid, cone_trapezoid_many
from .special import tail_kernel

# below this radius the profile is interpolated between r = 0 and r = SMALL_RADIUS
SMALL_RADIUS = 1e-5


def _check_time(history: ChargeHistory, t: float):
    if t < 0 or t > history.horizon:
        raise HistoryRangeError(f"t={t} outside solved range [0, {history.horizon}]")


def _endpoint_derivatives(history: ChargeHistory, k: int, t: float):
    """``(w, dw/dt, d2w/dt2)`` of site ``k`` at ``t``, left-sided at nodes."""
    times = history.times
    if t == 0.0:
        w, dw, d2 = history.deviation_many(np.array([0.0]), second=True)
        return complex(w[k, 0]), complex(dw[k, 0]), complex(d2[k, 0])
    l = int(np.searchsorted(times, t, side="left"))
    l = min(max(l, 1), times.size - 1)
    h = times[l] - times[l - 1]
    th = (t - times[l - 1]) / h
    z0, z1 = history.values[k, l - 1], history.values[k, l]
    d0, d1 = history.dright[k, l - 1], history.dleft[k, l]
    om = 1 - th
    z = (1 + 2 * th) * om * om * z0 + th * om * om * h * d0 + th * th * (3 - 2 * th) * z1 + th * th * (th - 1) * h * d1
    dz = (6 * th * th - 6 * th) / h * (z0 - z1) + (3 * th * th - 4 * th + 1) * d0 + (3 * th * th - 2 * th) * d1
    d2 = (12 * th - 6) / (h * h) * (z0 - z1) + (6 * th - 4) / h * d0 + (6 * th - 2) / h * d1
    if th == 1.0:
        z, dz = z1, d1
    return (complex(z - history.zeta0[k] - t * history.zeta0_dot[k]),
            complex(dz - history.zeta0_dot[k]), complex(d2))


def site_profile(history: ChargeHistory, k: int, t: float, radii, mass: float,
                 time_derivative: bool = False) -> np.ndarray:
    """Radial profile ``P[w_k](r, t)`` (or ``P[dw_k/dt]``) about ``y_k`` at the given radii."""
    _check_time(history, t)
    radii = np.asarray(radii, dtype=float)
    flat = radii.reshape(-1)
    w_t, dw_t, d2w_t = _endpoint_derivatives(history, k, t)
    if time_derivative:
        f_t, fd_t = dw_t, d2w_t
        samples = history.dright[k] - history.zeta0_dot[k]
    else:
        f_t, fd_t = w_t, dw_t
        samples = history.deviation_samples()[k]
    nodes = history.times
    # avoid a separate branch for tiny radii: evaluate at max(r, SMALL_RADIUS)
    r_eval = np.where(flat < SMALL_RADIUS, SMALL_RADIUS, flat)
    inside = r_eval < t
    upper = np.zeros(flat.size, dtype=complex)
    if inside.any():
        s = t - r_eval[inside]
        w, dw = history.deviation_many(s)
        upper[inside] = (dw if time_derivative else w)[k]
    memory = cone_trapezoid_many(t, r_eval, mass, nodes, samples, upper)
    direct = (np.where(inside, upper, 0.0) - f_t * np.exp(-mass * r_eval)) / (FOUR_PI * r_eval) \
        - mass / FOUR_PI * memory
    small = flat < SMALL_RADIUS
    if small.any():
        mem0 = complex(cone_trapezoid(t, 0.0, mass, nodes, samples, f_t)) if t > 0 else 0j
        limit = (mass * f_t - fd_t) / FOUR_PI - mass / FOUR_PI * mem0
        frac = flat[small] / SMALL_RADIUS
        direct[small] = (1 - frac) * limit + frac * direct[small]
    return direct.reshape(radii.shape)


def _distances(points: np.ndarray, center) -> np.ndarray:
    d = points - np.asarray(center, dtype=float)
    return np.sqrt(np.sum(d * d, axis=-1))


def regular_part_many(points, t: float, history: ChargeHistory, sources: SourceSet,
                      time_derivative: bool = False) -> np.ndarray:
    """``psi_reg`` (or its time derivative) at many points; finite at the sites too."""
    system = sources.system
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    _check_time(history, t)
    if sources.free.is_zero:
        out = np.zeros(pts.shape[0], dtype=complex)
    else:
        vals = sources.free.evaluate(pts, t, with_time_derivative=time_derivative)
        out = (vals[1] if time_derivative else vals).astype(complex)
    for k in range(system.n):
        out = out + site_profile(history, k, t, _distances(pts, system.points[k]), system.mass, time_derivative)
    return out


def eval_regular_part(x, t: float, history: ChargeHistory, sources: SourceSet) -> complex:
    return complex(regular_part_many(np.asarray(x, dtype=float).reshape(1, 3), t, history, sources)[0])


def eval_field(x, t: float, history: ChargeHistory, sources: SourceSet) -> complex:
    """Full field from its defining pieces: free regular field, free singular parts, retarded charges."""
    system = sources.system
    m = system.mass
    x = np.asarray(x, dtype=float).reshape(3)
    _check_time(history, t)
    total = complex(sources.free.value(x, t)) if not sources.free.is_zero else 0j
    nodes = history.times
    for k in range(system.n):
        r = float(np.linalg.norm(x - system.points[k]))
        if r < system.eps_sep:
            raise SingularPointError(f"field requested within eps_sep of site {k}; use eval_regular_part")
        lin_nodes = sources.linear_charge(k, nodes)
        # free evolution of (zeta0_k + t zeta0dot_k) g_k
        free_k = sources.linear_charge(k, t) * float(yukawa(r, m))
        retarded = 0j
        mem = 0j
        if t >= r:
            z_ret = history.eval(t - r)[0][k]
            retarded = (z_ret - sources.linear_charge(k, t - r)) / (FOUR_PI * r)
            mem = complex(cone_trapezoid(t, r, m, nodes, history.values[k], z_ret)) \
                - complex(cone_trapezoid(t, r, m, nodes, lin_nodes, sources.linear_charge(k, t - r)))
        total += free_k + retarded - m / FOUR_PI * mem
    return total


def eval_field_many(points, t: float, history: ChargeHistory, sources: SourceSet,
                    time_derivative: bool = False) -> np.ndarray:
    """``psi`` (or ``psi_t``) as regular part plus singular parts; raises near the sites."""
    system = sources.system
    pts = np.asarray(points, dtype=float).reshape(-1, 3)
    out = regular_part_many(pts, t, history, sources, time_derivative)
    z, dz = history.eval(t, side="left")
    coef = dz if time_derivative else z
    for k in range(system.n):
        r = _distances(pts, system.points[k])
        if np.any(r < system.eps_sep):
            raise SingularPointError(f"field requested within eps_sep of site {k}")
        out = out + coef[k] * yukawa(r, system.mass)
    return out


# ---------------------------------------------------------------------------
# boundary condition
# ---------------------------------------------------------------------------


def _refined_memory(history: ChargeHistory, k: int, t: float, r: float, mass: float, order: int) -> complex:
    """``int_0^{t-r} K(t-s, r) w_k(s) ds`` by Gauss-Legendre on each step of the history."""
    upper = t - r
    if upper <= 0:
        return 0j
    times = history.times
    p = int(np.searchsorted(times, upper, side="right"))
    edges = np.append(times[:p], upper) if times[p - 1] < upper else times[:p]
    lo, hi = edges[:-1], edges[1:]
    xi, wi = np.polynomial.legendre.leggauss(order)
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)
    s = (mid[:, None] + half[:, None] * xi[None, :]).reshape(-1)
    w, _ = history.deviation_many(s)
    kern = tail_kernel(t - s, r, mass)
    wts = (half[:, None] * wi[None, :]).reshape(-1)
    return complex((w[k] * kern * wts).sum())


def boundary_residual(j: int, t: float, history: ChargeHistory, sources: SourceSet, spec: PotentialSpec,
                      order: int = 8, force=None) -> complex:
    """``psi_reg(y_j, t) + sum_k g_kj zeta_k(t) - F_j(zeta(t))``.

    The memory integrals use Gauss-Legendre quadrature on the dense history instead of the
    solver's trapezoid rule, so the result measures the defect of the discrete solution.
    """
    system = sources.system
    m = system.mass
    _check_time(history, t)
    z, dz = history.eval(t, side="left")
    w = z - history.zeta0 - t * history.zeta0_dot
    dw = dz - history.zeta0_dot
    reg = sources.lambda_reg(j, t)
    # own site: limit r -> 0
    reg += (m * w[j] - dw[j]) / FOUR_PI - m / FOUR_PI * _refined_memory(history, j, t, 0.0, m, order)
    for k in range(system.n):
        if k == j:
            continue
        d = float(system.distances[j, k])
        delayed = history.deviation(t - d)[0][k] if t >= d else 0j
        reg += (delayed - w[k] * math.exp(-m * d)) / (FOUR_PI * d) \
            - m / FOUR_PI * _refined_memory(history, k, t, d, m, order)
    f = force(z) if force is not None else eval_potential(spec, z)[1]
    return complex(reg + system.green.entries[:, j] @ z - f[j])


def residual_series(history: ChargeHistory, sources: SourceSet, spec: PotentialSpec, times,
                    order: int = 8, force=None) -> np.ndarray:
    """``|R_j(t)|`` for each requested time; shape ``(len(times), n)``."""
    times = np.asarray(times, dtype=float)
    out = np.zeros((times.size, sources.system.n))
    for i, t in enumerate(times):
        for j in range(sources.system.n):
            out[i, j] = abs(boundary_residual(j, float(t), history, sources, spec, order, force))
    return out


# ---------------------------------------------------------------------------
# snapshots
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class FieldSnapshot:
    points: np.ndarray
    time: float
    values: np.ndarray
    grid: dict = field(default_factory=dict)
    cone_exclusion: float = 0.0
    near_cone: np.ndarray | None = None
    time_derivative: np.ndarray | None = None

    def __post_init__(self):
        if self.values.shape[0] != self.points.shape[0]:
            raise ValueError("snapshot value count does not match point count")


def cell_centered_axis(half_width: float, resolution: int) -> np.ndarray:
    h = 2.0 * half_width / resolution
    return -half_width + h * (np.arange(resolution) + 0.5)


def snapshot(t: float, history: ChargeHistory, sources: SourceSet, half_width: float, resolution: int,
             center=(0.0, 0.0, 0.0), with_time_derivative: bool = False,
             cone_exclusion: float | None = None) -> FieldSnapshot:
    """Field on a cell-centred cubic grid.

    Points within ``cone_exclusion`` of a light-cone sphere ``|x - y_k| = t`` are flagged;
    their values are the one-sided limits given by the representation formula.
    """
    axis = cell_centered_axis(half_width, resolution)
    X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1) + np.asarray(center, dtype=float)
    h = axis[1] - axis[0] if axis.size > 1 else 2 * half_width
    if cone_exclusion is None:
        cone_exclusion = 0.5 * h
    near = np.zeros(pts.shape[0], dtype=bool)
    for y in sources.system.points:
        near |= np.abs(_distances(pts, y) - t) < cone_exclusion
    values = eval_field_many(pts, t, history, sources)
    dvals = eval_field_many(pts, t, history, sources, time_derivative=True) if with_time_derivative else None
    grid = {"half_width": half_width, "resolution": resolution, "center": list(map(float, center)),
            "spacing": float(h)}
    return FieldSnapshot(pts, float(t), values, grid, float(cone_exclusion), near, dvals)
