"""Time stepping of the charges ``zeta_j(t)``.

The right-hand side is assembled in terms of the deviation
``w_k(s) = zeta_k(s) - zeta0_k - s zeta0dot_k`` from the linear motion fixed by the initial
data. Written this way the closed-form singular sources and the memory integrals of the
linear motion cancel identically, the delayed terms start from ``w(0) = 0`` and the
right-hand side stays continuous across every light-cone arrival time ``t = d_jk``.
``rhs_literal`` assembles the same quantity term by term from the source module and is
kept as an independent cross-check.

Stepping is the implicit trapezoid rule with an explicit Euler predictor and a fixed-point
corrector. The grid contains every propagated breakpoint so that no step straddles a kink.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

import numpy as np

from .errors import HistoryRangeError, SolverError
from .model import FOUR_PI, InitialData, PotentialSpec, SystemConfig, eval_potential, force_lipschitz_bound
from .sources import SourceSet, cone_trapezoid
from .special import tail_kernel

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SolverParams:
    dt: float = 1e-3
    fixed_point_tol: float = 1e-12
    max_fixed_point_iters: int = 50
    breakpoint_generations: int = 3
    truncation_enabled: bool = True
    max_halvings: int = 10
    bound_slack: float = 1e-3
    insert_breakpoints: bool = True

    def __post_init__(self):
        from .errors import ConfigurationError

        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if not self.fixed_point_tol > 0:
            raise ConfigurationError("fixed_point_tol must be positive")
        if self.max_fixed_point_iters < 1 or self.breakpoint_generations < 0 or self.max_halvings < 0:
            raise ConfigurationError("iteration caps must be nonnegative (at least one fixed-point iteration)")


# ---------------------------------------------------------------------------
# truncation
# ---------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class TruncatedForce:
    """``F(phi(|z|) z/|z|)`` with a C^1 radial profile ``phi`` equal to the identity up to ``radius``.

    ``phi`` bends over ``[radius, radius + blend]`` and is constant ``radius + blend/2`` beyond,
    so ``F`` is only ever sampled inside the ball of radius ``radius + blend/2``.
    """

    spec: PotentialSpec
    radius: float
    blend: float
    lipschitz: float

    def radial_profile(self, rho: float) -> float:
        excess = rho - self.radius
        if excess <= 0:
            return rho
        if excess >= self.blend:
            return self.radius + 0.5 * self.blend
        return self.radius + excess - excess * excess / (2.0 * self.blend)

    def retract(self, zeta: np.ndarray) -> np.ndarray:
        rho = float(np.linalg.norm(zeta))
        if rho <= self.radius:
            return zeta
        return zeta * (self.radial_profile(rho) / rho)

    def __call__(self, zeta) -> np.ndarray:
        z = np.asarray(zeta, dtype=complex)
        return eval_potential(self.spec, self.retract(z))[1]

    def is_active(self, zeta) -> bool:
        return float(np.linalg.norm(zeta)) > self.radius


def truncate_nonlinearity(spec: PotentialSpec, radius: float, blend_fraction: float = 0.05) -> TruncatedForce:
    blend = blend_fraction * radius
    lip = force_lipschitz_bound(spec, radius + 0.5 * blend)
    return TruncatedForce(spec, float(radius), float(blend), float(lip))


def plain_force(spec: PotentialSpec) -> Callable[[np.ndarray], np.ndarray]:
    def force(zeta):
        return eval_potential(spec, zeta)[1]

    return force


# ---------------------------------------------------------------------------
# dense history
# ---------------------------------------------------------------------------


def hermite_eval(times: np.ndarray, values: np.ndarray, dleft: np.ndarray, dright: np.ndarray,
                 t: float, side: str = "right"):
    """Piecewise cubic Hermite value and derivative at ``t`` (arrays of shape ``(n, N)``).

    On each step the right derivative of the left node and the left derivative of the right
    node are used, so kinks at nodes are reproduced. Nodes return stored samples.
    """
    l = int(np.searchsorted(times, t, side="right")) - 1
    if l < 0 or t > times[-1]:
        raise HistoryRangeError(f"t={t!r} outside history [{times[0]}, {times[-1]}]")
    if times[l] == t:
        if side == "left" and l > 0:
            return values[:, l], dleft[:, l]
        return values[:, l], dright[:, l]
    h = times[l + 1] - times[l]
    th = (t - times[l]) / h
    om = 1.0 - th
    h00 = (1 + 2 * th) * om * om
    h10 = th * om * om
    h01 = th * th * (3 - 2 * th)
    h11 = th * th * (th - 1)
    z0, z1 = values[:, l], values[:, l + 1]
    d0, d1 = dright[:, l], dleft[:, l + 1]
    z = h00 * z0 + h10 * h * d0 + h01 * z1 + h11 * h * d1
    dz = ((6 * th * th - 6 * th) * (z0 - z1) / h + (3 * th * th - 4 * th + 1) * d0
          + (3 * th * th - 2 * th) * d1)
    return z, dz


def hermite_many(times: np.ndarray, values: np.ndarray, dleft: np.ndarray, dright: np.ndarray,
                 s: np.ndarray, second: bool = False):
    """Vectorised :func:`hermite_eval` at many times ``s`` (right-sided at nodes).

    Returns ``(z, dz)`` or ``(z, dz, d2z)`` with shape ``(n, len(s))``.
    """
    s = np.asarray(s, dtype=float)
    if s.size and (s.min() < times[0] or s.max() > times[-1]):
        raise HistoryRangeError("requested times outside history")
    l = np.clip(np.searchsorted(times, s, side="right") - 1, 0, times.size - 2)
    h = times[l + 1] - times[l]
    th = (s - times[l]) / h
    om = 1.0 - th
    z0, z1 = values[:, l], values[:, l + 1]
    d0, d1 = dright[:, l], dleft[:, l + 1]
    z = ((1 + 2 * th) * om * om) * z0 + (th * om * om * h) * d0 + (th * th * (3 - 2 * th)) * z1 \
        + (th * th * (th - 1) * h) * d1
    dz = ((6 * th * th - 6 * th) / h) * (z0 - z1) + (3 * th * th - 4 * th + 1) * d0 + (3 * th * th - 2 * th) * d1
    # exact samples on nodes
    on_node = times[l] == s
    if on_node.any():
        z[:, on_node] = values[:, l[on_node]]
        dz[:, on_node] = dright[:, l[on_node]]
    at_end = s == times[-1]
    if at_end.any():
        z[:, at_end] = values[:, -1:]
        dz[:, at_end] = dleft[:, -1:]
    if not second:
        return z, dz
    d2z = ((12 * th - 6) / (h * h)) * (z0 - z1) + ((6 * th - 4) / h) * d0 + ((6 * th - 2) / h) * d1
    return z, dz, d2z


@dataclass(frozen=True, eq=False)
class ChargeHistory:
    """Committed charges on a strictly increasing grid with one-sided derivatives."""

    times: np.ndarray
    values: np.ndarray  # (n, N)
    dleft: np.ndarray
    dright: np.ndarray
    breakpoints: np.ndarray
    zeta0: np.ndarray
    zeta0_dot: np.ndarray
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        for arr in (self.times, self.values, self.dleft, self.dright, self.breakpoints):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def horizon(self) -> float:
        return float(self.times[-1])

    @property
    def derivatives(self) -> np.ndarray:
        return self.dright

    def eval(self, t: float, side: str = "right"):
        return hermite_eval(self.times, self.values, self.dleft, self.dright, float(t), side)

    def linear_part(self, t):
        t = np.asarray(t, dtype=float)
        return self.zeta0[:, None] + self.zeta0_dot[:, None] * t

    def deviation_samples(self) -> np.ndarray:
        """``w`` at the nodes."""
        return self.values - (self.zeta0[:, None] + self.zeta0_dot[:, None] * self.times[None, :])

    def deviation(self, t: float, side: str = "right"):
        """``(w(t), dw/dt(t))``."""
        z, dz = self.eval(t, side)
        return z - self.zeta0 - t * self.zeta0_dot, dz - self.zeta0_dot

    def eval_many(self, s, second: bool = False):
        return hermite_many(self.times, self.values, self.dleft, self.dright, s, second)

    def deviation_many(self, s, second: bool = False):
        """``w``, ``dw/dt`` (and optionally ``d2w/dt2``) at many times."""
        s = np.asarray(s, dtype=float)
        out = list(self.eval_many(s, second))
        out[0] = out[0] - self.zeta0[:, None] - self.zeta0_dot[:, None] * s[None, :]
        out[1] = out[1] - self.zeta0_dot[:, None]
        return tuple(out)

    def max_abs(self) -> float:
        """Largest C^n norm of the charge vector over the nodes."""
        return float(np.max(np.linalg.norm(self.values, axis=0)))


def history_eval(history: ChargeHistory, t: float, side: str = "right"):
    return history.eval(t, side)


# ---------------------------------------------------------------------------
# breakpoints
# ---------------------------------------------------------------------------


def breakpoint_set(system: SystemConfig, horizon: float, generations: int,
                   extra: Sequence[float] = ()) -> np.ndarray:
    """Kink times propagated through the delays, up to ``generations`` hops.

    Every site starts with the seeds ``{0} | extra``; a kink of ``zeta_k`` at ``b`` produces a
    kink of ``zeta_j`` at ``b + d_jk``.
    """
    n = system.n
    seeds = {0.0} | {float(e) for e in extra if 0.0 <= e <= horizon}
    current = [set(seeds) for _ in range(n)]
    found = set(seeds)
    for _ in range(generations):
        nxt = [set() for _ in range(n)]
        for j in range(n):
            for k in range(n):
                if k == j:
                    continue
                d = float(system.distances[j, k])
                nxt[j].update(b + d for b in current[k] if b + d <= horizon)
        current = nxt
        for s in current:
            found.update(s)
        if not any(current):
            break
    out = np.array(sorted(found))
    if out.size > 1:
        keep = np.concatenate([[True], np.diff(out) > 1e-12 * max(1.0, horizon)])
        out = out[keep]
    return out


def build_grid(dt: float, horizon: float, breakpoints: np.ndarray) -> np.ndarray:
    count = int(math.ceil(horizon / dt - 1e-9))
    base = np.minimum(np.arange(count + 1) * dt, horizon)
    base[-1] = horizon
    if breakpoints.size == 0:
        return base
    # drop base nodes that nearly coincide with a breakpoint, then merge
    idx = np.searchsorted(breakpoints, base)
    lo = np.abs(base - breakpoints[np.clip(idx - 1, 0, breakpoints.size - 1)])
    hi = np.abs(base - breakpoints[np.clip(idx, 0, breakpoints.size - 1)])
    near = np.minimum(lo, hi) < 1e-3 * dt
    near[-1] = False
    grid = np.union1d(base[~near], breakpoints[breakpoints <= horizon])
    return grid


# ---------------------------------------------------------------------------
# right-hand side
# ---------------------------------------------------------------------------


class Forcing(Protocol):
    kinks: tuple

    def __call__(self, t: float, side: str = "left") -> np.ndarray: ...


@dataclass(eq=False)
class ChargeProblem:
    """Everything the right-hand side depends on apart from the history."""

    system: SystemConfig
    data: InitialData
    spec: PotentialSpec
    sources: SourceSet
    force: Callable[[np.ndarray], np.ndarray]
    forcing: Forcing | None = None

    def __post_init__(self):
        sys_ = self.system
        n = sys_.n
        self.mass = sys_.mass
        self.zeta0 = np.asarray(self.data.zeta0, dtype=complex)
        self.zeta0_dot = np.asarray(self.data.zeta0_dot, dtype=complex)
        # group off-diagonal pairs by distance so each kernel row is computed once
        groups: dict[float, list[tuple[int, int]]] = {}
        for j in range(n):
            for k in range(n):
                if j != k:
                    groups.setdefault(float(sys_.distances[j, k]), []).append((j, k))
        self.pair_groups = sorted(groups.items())
        self.green = np.asarray(sys_.green.entries)

    def linear(self, t: float) -> np.ndarray:
        return self.zeta0 + t * self.zeta0_dot

    def static_part(self, t: float, side: str) -> np.ndarray:
        """Terms that depend on neither the trial value nor the history."""
        n = self.system.n
        lam = np.array([self.sources.lambda_reg(j, t) for j in range(n)], dtype=complex)
        out = self.zeta0_dot + FOUR_PI * lam + FOUR_PI * (self.green @ self.linear(t))
        if self.forcing is not None:
            out = out + self.forcing(t, side)
        return out

    def forcing_jump(self, t: float) -> np.ndarray:
        if self.forcing is None:
            return np.zeros(self.system.n, dtype=complex)
        return self.forcing(t, "right") - self.forcing(t, "left")


def _memory_terms(problem: ChargeProblem, t: float, nodes: np.ndarray, w_nodes: np.ndarray,
                  delayed: Callable[[float], np.ndarray]) -> np.ndarray:
    """Delay and memory contributions over committed nodes strictly before ``t``.

    ``nodes[-1] < t``; the diagonal memory integral over ``[0, t]`` is returned without the
    contribution of the endpoint ``t`` itself (weight ``h/2``), which the caller adds.
    ``delayed(s)`` returns ``w(s)`` for ``s <= t``.
    """
    m = problem.mass
    n = w_nodes.shape[0]
    out = np.zeros(n, dtype=complex)
    # diagonal: trapezoid on nodes + [t], with the endpoint sample zeroed
    ext_nodes = np.append(nodes, t)
    ext_w = np.concatenate([w_nodes, np.zeros((n, 1), dtype=complex)], axis=1)
    out -= m * cone_trapezoid(t, 0.0, m, ext_nodes, ext_w, np.zeros(n, dtype=complex))
    for d, pairs in problem.pair_groups:
        if t <= d:
            continue
        w_tau = delayed(t - d)
        mem = cone_trapezoid(t, d, m, nodes, w_nodes, w_tau)
        for j, k in pairs:
            out[j] += w_tau[k] / d - m * mem[k]
    return out


def _trial_terms(problem: ChargeProblem, t: float, h: float, zeta: np.ndarray) -> np.ndarray:
    m = problem.mass
    w = zeta - problem.linear(t)
    k0 = 0.5 * m  # kernel on the cone at r = 0
    return m * w - m * (0.5 * h * k0) * w - FOUR_PI * problem.force(zeta)


def rhs(t: float, zeta_now, history: ChargeHistory, problem: ChargeProblem, side: str = "left") -> np.ndarray:
    """``d zeta/dt`` at ``t`` given the history on ``[0, t)`` and the trial value at ``t``.

    Nodes of ``history`` at or beyond ``t`` are ignored; history values at ``t - d_jk`` are
    taken from its dense interpolation.
    """
    zeta_now = np.asarray(zeta_now, dtype=complex)
    if t == 0.0:
        return problem.static_part(0.0, side) + _trial_terms(problem, 0.0, 0.0, zeta_now)
    p = int(np.searchsorted(history.times, t, side="left"))
    if p == 0:
        raise HistoryRangeError("history must start at t = 0")
    nodes = history.times[:p]
    w_nodes = history.deviation_samples()[:, :p]
    h = t - nodes[-1]

    def delayed(s):
        if s > nodes[-1]:
            # inside the current step: linear between the last node and the trial value
            frac = (s - nodes[-1]) / h
            return (1 - frac) * w_nodes[:, -1] + frac * (zeta_now - problem.linear(t))
        return history.deviation(s)[0]

    return (problem.static_part(t, side) + _memory_terms(problem, t, nodes, w_nodes, delayed)
            + _trial_terms(problem, t, h, zeta_now))


def rhs_literal(t: float, zeta_now, history: ChargeHistory, problem: ChargeProblem,
                side: str = "left") -> np.ndarray:
    """Term-by-term assembly from the full sources ``lambda_j`` and the charges themselves.

    Uses the same nodes as :func:`rhs`; the two agree up to rounding.
    """
    zeta_now = np.asarray(zeta_now, dtype=complex)
    m = problem.mass
    n = problem.system.n
    dist = problem.system.distances
    src = problem.sources
    p = int(np.searchsorted(history.times, t, side="left"))
    nodes = np.append(history.times[:p], t) if t > 0 else np.zeros(1)
    z_nodes = np.concatenate([history.values[:, :p], zeta_now[:, None]], axis=1) if t > 0 else zeta_now[:, None]

    def delayed_charge(s):
        if p and s > history.times[p - 1]:
            frac = (s - history.times[p - 1]) / (t - history.times[p - 1])
            return (1 - frac) * history.values[:, p - 1] + frac * zeta_now
        return history.eval(s)[0]

    out = m * zeta_now - FOUR_PI * problem.force(zeta_now)
    if problem.forcing is not None:
        out = out + problem.forcing(t, side)
    for j in range(n):
        lam = src.lambda_reg(j, t) + src.lambda_diag(j, t, nodes)
        mem = complex(cone_trapezoid(t, 0.0, m, nodes, z_nodes[j], zeta_now[j]))
        for k in range(n):
            if k == j:
                continue
            d = float(dist[j, k])
            lam += src.lambda_cross(j, k, t, nodes)
            if t >= d:
                tau = t - d
                z_tau = delayed_charge(tau)
                out[j] += z_tau[k] / d
                # memory of zeta_k up to the cone, same cut as the source integrals
                mem += complex(cone_trapezoid(t, d, m, nodes, z_nodes[k], z_tau[k]))
        out[j] += FOUR_PI * lam - m * mem
    return out


# ---------------------------------------------------------------------------
# solver
# ---------------------------------------------------------------------------


@dataclass
class _Store:
    n: int
    cap: int

    def __post_init__(self):
        self.times = np.zeros(self.cap)
        self.values = np.zeros((self.n, self.cap), dtype=complex)
        self.dleft = np.zeros((self.n, self.cap), dtype=complex)
        self.dright = np.zeros((self.n, self.cap), dtype=complex)
        self.w = np.zeros((self.n, self.cap), dtype=complex)
        self.count = 0

    def grow(self):
        self.cap *= 2
        for name in ("values", "dleft", "dright", "w"):
            old = getattr(self, name)
            new = np.zeros((self.n, self.cap), dtype=complex)
            new[:, : self.count] = old[:, : self.count]
            setattr(self, name, new)
        t = np.zeros(self.cap)
        t[: self.count] = self.times[: self.count]
        self.times = t

    def push(self, t, z, dl, dr, w):
        if self.count == self.cap:
            self.grow()
        i = self.count
        self.times[i] = t
        self.values[:, i] = z
        self.dleft[:, i] = dl
        self.dright[:, i] = dr
        self.w[:, i] = w
        self.count += 1


def solve_charges(system: SystemConfig, data: InitialData, spec: PotentialSpec, sources: SourceSet,
                  params: SolverParams, horizon: float, forcing: Forcing | None = None,
                  truncation_radius: float | None = None) -> ChargeHistory:
    """Integrate the charges on ``[0, horizon]``."""
    from .errors import ConfigurationError

    if not horizon > 0:
        raise ConfigurationError("horizon must be positive")
    radius = truncation_radius if truncation_radius is not None else spec.truncation_radius
    if params.truncation_enabled and radius is not None:
        trunc = truncate_nonlinearity(spec, radius)
        force = trunc
    else:
        trunc = None
        force = plain_force(spec)
    problem = ChargeProblem(system, data, spec, sources, force, forcing)
    n = system.n
    kinks = tuple(forcing.kinks) if forcing is not None else ()
    if params.insert_breakpoints:
        bps = breakpoint_set(system, horizon, params.breakpoint_generations, kinks)
    else:
        bps = np.zeros(1)
    grid = build_grid(params.dt, horizon, bps)
    bp_lookup = set(bps.tolist())
    sources.lambda_reg_many(grid)

    store = _Store(n, grid.size + 16)
    z0 = problem.zeta0.copy()
    f_start = problem.static_part(0.0, "right") + _trial_terms(problem, 0.0, 0.0, z0)
    store.push(0.0, z0, f_start, f_start, np.zeros(n, dtype=complex))

    tol = params.fixed_point_tol
    max_iter_seen = 0
    halvings_total = 0
    bound_warnings = []
    truncation_hits = 0
    targets = list(grid[1:][::-1])  # stack, next target on top
    halvings_here = 0

    while targets:
        t_new = float(targets[-1])
        i = store.count - 1
        t_old = store.times[i]
        h = t_new - t_old
        nodes = store.times[: store.count]
        w_nodes = store.w[:, : store.count]
        z_old = store.values[:, i]
        f_old = store.dright[:, i]
        side = "left"
        base = problem.static_part(t_new, side)
        needs_trial_delay = any(t_new - d > t_old for d, _ in problem.pair_groups if t_new > d)

        def delayed_hist(s):
            z, _ = hermite_eval(nodes, store.values[:, : store.count], store.dleft[:, : store.count],
                                store.dright[:, : store.count], s)
            return z - problem.linear(s)

        if not needs_trial_delay:
            frozen = base + _memory_terms(problem, t_new, nodes, w_nodes, delayed_hist)

        def evaluate(zeta):
            if needs_trial_delay:
                w_trial = zeta - problem.linear(t_new)

                def delayed(s):
                    if s > t_old:
                        frac = (s - t_old) / h
                        return (1 - frac) * w_nodes[:, -1] + frac * w_trial
                    return delayed_hist(s)

                fr = base + _memory_terms(problem, t_new, nodes, w_nodes, delayed)
            else:
                fr = frozen
            return fr + _trial_terms(problem, t_new, h, zeta)

        zeta = z_old + h * f_old
        converged = False
        it = 0
        try:
            for it in range(1, params.max_fixed_point_iters + 1):
                f_new = evaluate(zeta)
                nxt = z_old + 0.5 * h * (f_old + f_new)
                if not np.all(np.isfinite(nxt)):
                    break
                delta = float(np.max(np.abs(nxt - zeta)))
                scale = float(np.max(np.abs(nxt)))
                zeta = nxt
                if delta <= tol * scale or delta == 0.0:
                    converged = True
                    break
        except ArithmeticError:
            converged = False
        if not converged:
            if halvings_here >= params.max_halvings:
                raise SolverError(
                    f"fixed-point corrector failed at t={t_old:.6g} after {halvings_here} step halvings",
                    {"t": t_old, "h": h, "iterations": it, "last_value": zeta.tolist()},
                )
            halvings_here += 1
            halvings_total += 1
            targets.append(t_old + 0.5 * h)
            continue
        max_iter_seen = max(max_iter_seen, it)
        f_left = evaluate(zeta)
        f_right = f_left
        if t_new in bp_lookup and forcing is not None:
            f_right = f_left + problem.forcing_jump(t_new)
        store.push(t_new, zeta, f_left, f_right, zeta - problem.linear(t_new))
        targets.pop()
        halvings_here = 0
        if trunc is not None and trunc.is_active(zeta):
            truncation_hits += 1
        if radius is not None and trunc is None:
            norm = float(np.linalg.norm(zeta))
            if norm > radius * (1 + params.bound_slack):
                bound_warnings.append((t_new, norm))
    if bound_warnings:
        log.warning("a priori charge bound exceeded at %d steps (first at t=%.4g)",
                    len(bound_warnings), bound_warnings[0][0])
    c = store.count
    info = {
        "steps": c - 1,
        "halvings": halvings_total,
        "max_fixed_point_iterations": max_iter_seen,
        "truncation_radius": radius,
        "truncation_enabled": trunc is not None,
        "truncation_active_steps": truncation_hits,
        "bound_warnings": len(bound_warnings),
    }
    return ChargeHistory(
        store.times[:c].copy(), store.values[:, :c].copy(), store.dleft[:, :c].copy(),
        store.dright[:, :c].copy(), bps.copy(), problem.zeta0.copy(), problem.zeta0_dot.copy(), info,
    )
