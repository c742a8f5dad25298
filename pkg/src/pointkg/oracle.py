"""Reference solvers that share no stepping or quadrature code with the main pipeline.

* :func:`brute_force_charges`: forward Euler with a left-rectangle memory sum on a uniform
  grid; Bessel functions from :mod:`scipy.special`, sources from closed-form antiderivatives
  and adaptive quadrature.
* :func:`manufactured_scenario`: injects the residual of a prescribed charge trajectory as
  an additive forcing so the trajectory becomes the exact solution.
* :func:`lattice_free_field` / :func:`regularized_fd_solver`: leapfrog Klein-Gordon on a
  periodic box, optionally driven by mollified point sources.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, interpolate, special

from .charges import ChargeHistory, SolverParams
from .errors import ConfigurationError, OracleFailure
from .model import (
    FOUR_PI,
    Gaussian,
    InitialData,
    PotentialSpec,
    build_system,
    eval_potential,
    polynomial_potential,
    power_potential,
)
from .scenarios import Scenario


def _kernel(u, r, mass):
    """``J1(m sqrt(u^2 - r^2)) / sqrt(u^2 - r^2)`` for ``u > r``, ``m/2`` on the cone, else 0."""
    u = np.asarray(u, dtype=float)
    q = np.sqrt(np.clip(u * u - r * r, 0.0, None))
    with np.errstate(invalid="ignore", divide="ignore"):
        val = np.where(q > 1e-7, special.j1(mass * q) / np.where(q > 0, q, 1.0),
                       0.5 * mass - mass ** 3 * q * q / 16.0)
    return np.where(u >= r, val, 0.0)


# ---------------------------------------------------------------------------
# sources, computed independently
# ---------------------------------------------------------------------------


def _gaussian_free_value(g: Gaussian, radius: float, t: float, mass: float, velocity: bool) -> complex:
    s = g.width

    def integrand(k):
        om = math.sqrt(k * k + mass * mass)
        # np.sinc(x) = sin(pi x) / (pi x)
        weight = math.sin(t * om) / om if velocity else math.cos(t * om)
        return k * k * math.exp(-0.5 * s * s * k * k) * weight * np.sinc(k * radius / math.pi)

    kmax = 12.0 / s
    val, _ = integrate.quad(integrand, 0.0, kmax, limit=400, epsabs=1e-14, epsrel=1e-12)
    return g.amplitude * math.sqrt(2.0 / math.pi) * s ** 3 * val


def _regular_source(data: InitialData, point, mass: float, times: np.ndarray) -> np.ndarray:
    """Regular free field at ``point`` on ``times`` via a spline through adaptive-quadrature samples."""
    if not data.psi0_reg and not data.pi0_reg:
        return np.zeros(times.size, dtype=complex)
    T = float(times[-1])
    coarse = np.linspace(0.0, T, max(8, int(math.ceil(T / 2e-3)) + 1))
    vals = np.zeros(coarse.size, dtype=complex)
    for velocity, group in ((False, data.psi0_reg), (True, data.pi0_reg)):
        for g in group:
            radius = float(np.linalg.norm(np.asarray(point) - np.asarray(g.center)))
            vals += np.array([_gaussian_free_value(g, radius, t, mass, velocity) for t in coarse])
    re = interpolate.CubicSpline(coarse, vals.real)(times)
    im = interpolate.CubicSpline(coarse, vals.imag)(times)
    return re + 1j * im


def _cumulative_kernel(times: np.ndarray, r: float, mass: float) -> np.ndarray:
    """``A(t) = int_r^t K(u, r) du`` on ``times`` (zero for t <= r), Gauss-Legendre per cell."""
    xi, wi = np.polynomial.legendre.leggauss(6)
    lo = np.maximum(times[:-1], r)
    hi = np.maximum(times[1:], r)
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    u = mid[:, None] + half[:, None] * xi[None, :]
    cell = (half[:, None] * wi[None, :] * _kernel(u, r, mass)).sum(axis=1)
    return np.concatenate([[0.0], np.cumsum(cell)])


def _singular_sources(j: int, system, data: InitialData, times: np.ndarray) -> np.ndarray:
    m = system.mass
    out = np.zeros(times.size, dtype=complex)
    for k in range(system.n):
        z0, z1 = data.zeta0[k], data.zeta0_dot[k]
        lin = z0 + times * z1
        d = 0.0 if k == j else float(system.distances[j, k])
        a_cum = _cumulative_kernel(times, d, m)
        q = np.sqrt(np.clip(times * times - d * d, 0.0, None))
        b_cum = np.where(times >= d, (1.0 - special.j0(m * q)) / m, 0.0)
        tail = lin * a_cum - z1 * b_cum
        if k == j:
            out += -(m * lin - z1) / FOUR_PI + m / FOUR_PI * tail
        else:
            gk = math.exp(-m * d) / (FOUR_PI * d)
            retarded = np.where(times >= d, (z0 + (times - d) * z1) / (FOUR_PI * d), 0.0)
            out += lin * gk - retarded + m / FOUR_PI * tail
    return out


# ---------------------------------------------------------------------------
# brute-force charges
# ---------------------------------------------------------------------------


def brute_force_charges(scenario: Scenario, fine_dt: float, horizon: float | None = None,
                        blowup: float = 1e8) -> ChargeHistory:
    """Forward Euler plus left-rectangle memory sums on a uniform grid of step ``fine_dt``."""
    system, data, spec = scenario.system, scenario.data, scenario.potential
    T = float(horizon if horizon is not None else scenario.horizon)
    steps = int(round(T / fine_dt))
    if steps < 1 or abs(steps * fine_dt - T) > 1e-9 * T:
        raise ConfigurationError("fine_dt must divide the horizon")
    dt = T / steps
    times = np.arange(steps + 1) * dt
    n, m = system.n, system.mass
    lam = np.zeros((n, steps + 1), dtype=complex)
    for j in range(n):
        lam[j] = _regular_source(data, system.points[j], m, times) + _singular_sources(j, system, data, times)
    # kernel by lag, stored reversed so that the sum over past nodes is a contiguous slice
    dists = sorted({0.0} | {float(system.distances[j, k]) for j in range(n) for k in range(n) if j != k})
    lags = np.arange(steps + 1) * dt
    rev = {d: _kernel(lags, d, m)[::-1].copy() for d in dists}
    zeta = np.zeros((n, steps + 1), dtype=complex)
    deriv = np.zeros((n, steps + 1), dtype=complex)
    zeta[:, 0] = data.zeta0
    for i in range(steps + 1):
        z = zeta[:, i]
        t = times[i]
        _, f = eval_potential(spec, z)
        out = m * z + FOUR_PI * lam[:, i] - FOUR_PI * f
        if scenario.forcing is not None:
            out = out + scenario.forcing(t, "left")
        for j in range(n):
            for k in range(n):
                d = 0.0 if j == k else float(system.distances[j, k])
                if k != j and t >= d:
                    pos = (t - d) / dt
                    l0 = min(int(math.floor(pos)), i)
                    frac = pos - l0
                    zk = zeta[k, l0] if frac == 0.0 or l0 + 1 > i else (1 - frac) * zeta[k, l0] + frac * zeta[k, l0 + 1]
                    out[j] += zk / d
                if i > 0:
                    mem = dt * np.dot(rev[d][steps - i: steps], zeta[k, :i])
                    out[j] -= m * mem
        deriv[:, i] = out
        if i == steps:
            break
        zeta[:, i + 1] = z + dt * out
        if not np.all(np.isfinite(zeta[:, i + 1])) or np.max(np.abs(zeta[:, i + 1])) > blowup:
            raise OracleFailure(f"brute-force solver unstable at t={times[i + 1]:.4g}")
    return ChargeHistory(times, zeta, deriv.copy(), deriv, np.zeros(0), np.asarray(data.zeta0).copy(),
                         np.asarray(data.zeta0_dot).copy(), {"method": "forward-euler", "dt": dt})


# ---------------------------------------------------------------------------
# manufactured solutions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Target:
    """Prescribed single-site trajectory with its one-sided derivative."""

    value: Callable[[float], complex]
    derivative: Callable[[float, str], complex]
    kinks: tuple[float, ...] = ()
    name: str = "target"


def exponential_target(amplitude: complex = 1 + 1j, rate: float = 1.0) -> Target:
    return Target(lambda t: amplitude * math.exp(-rate * t),
                  lambda t, side="left": -rate * amplitude * math.exp(-rate * t), (), "exponential")


def constant_target(value: complex) -> Target:
    return Target(lambda t: complex(value), lambda t, side="left": 0j, (), "constant")


# kink placed off every grid of the 4e-3 / 2e-3 / 1e-3 ladder, at a third of a coarse step
KINK_TIME = 4e-3 * (250 + 1.0 / 3.0)


def kinked_target(kink: float = KINK_TIME, slope: complex = 0.5 - 0.25j,
                  amplitude: complex = 1 + 1j) -> Target:
    def value(t):
        return amplitude * math.exp(-t) + slope * max(0.0, t - kink)

    def derivative(t, side="left"):
        after = t > kink or (t == kink and side == "right")
        return -amplitude * math.exp(-t) + (slope if after else 0.0)

    return Target(value, derivative, (kink,), "kinked")


@dataclass(eq=False)
class ManufacturedForcing:
    """Residual of the charge equation along ``target`` for one site, no regular data."""

    target: Target
    mass: float
    spec: PotentialSpec
    zeta0: complex
    zeta0_dot: complex
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def kinks(self) -> tuple:
        return self.target.kinks

    def deviation(self, s: float) -> complex:
        return self.target.value(s) - self.zeta0 - s * self.zeta0_dot

    def memory(self, t: float) -> complex:
        """``int_0^t K(t - s, 0) w(s) ds`` by adaptive quadrature, split at the kinks."""
        if t <= 0:
            return 0j
        pts = [p for p in self.target.kinks if 0 < p < t]

        def part(fn):
            v, _ = integrate.quad(lambda s: float(_kernel(t - s, 0.0, self.mass)) * fn(self.deviation(s)),
                                  0.0, t, points=pts or None, limit=200, epsabs=1e-14, epsrel=1e-13)
            return v

        return part(lambda z: z.real) + 1j * part(lambda z: z.imag)

    def __call__(self, t: float, side: str = "left") -> np.ndarray:
        key = (float(t), side)
        if key not in self._cache:
            m = self.mass
            z = self.target.value(t)
            _, f = eval_potential(self.spec, np.array([z]))
            model = self.zeta0_dot + m * self.deviation(t) - m * self.memory(t) - FOUR_PI * f[0]
            self._cache[key] = np.array([self.target.derivative(t, side) - model])
        return self._cache[key]


def manufactured_scenario(target: Target | str = "exponential", horizon: float = 2.0, dt: float = 1e-3,
                          mass: float = 1.0, spec: PotentialSpec | None = None) -> Scenario:
    """Single-site scenario whose exact charge is ``target``."""
    if isinstance(target, str):
        target = {"exponential": exponential_target, "kinked": kinked_target}[target]()
    if spec is None:
        spec = power_potential([1.0], [1.0], a=0.5, b=1.0)
    system = build_system(mass, [(0.0, 0.0, 0.0)])
    z0 = target.value(0.0)
    z1 = target.derivative(0.0, "right")
    data = InitialData([z0], [z1])
    forcing = ManufacturedForcing(target, mass, spec, z0, z1)
    return Scenario(f"manufactured_{target.name}", system, spec, data, horizon,
                    SolverParams(dt=dt, truncation_enabled=False), forcing=forcing)


def zero_force_potential(n: int = 1) -> PotentialSpec:
    """``U = 0``; used with constant targets."""
    return polynomial_potential([[0.0]] * n, a=0.0, b=1.0)


# ---------------------------------------------------------------------------
# lattice Klein-Gordon
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LatticeResult:
    axis: np.ndarray
    time: float
    psi: np.ndarray
    charges: np.ndarray | None = None

    def sample(self, points) -> np.ndarray:
        """Periodic tricubic interpolation of the lattice field at ``points``."""
        from scipy.ndimage import map_coordinates

        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        h = self.axis[1] - self.axis[0]
        coords = ((pts - self.axis[0]) / h).T
        re = map_coordinates(self.psi.real, coords, order=3, mode="grid-wrap")
        im = map_coordinates(self.psi.imag, coords, order=3, mode="grid-wrap")
        return re + 1j * im


def _laplacian(u: np.ndarray, h: float) -> np.ndarray:
    """Fourth-order periodic Laplacian."""
    out = -3 * (5.0 / 2.0) * u
    for ax in range(3):
        out = out + (4.0 / 3.0) * (np.roll(u, 1, ax) + np.roll(u, -1, ax))
        out = out - (1.0 / 12.0) * (np.roll(u, 2, ax) + np.roll(u, -2, ax))
    return out / (h * h)


def _lattice_axis(half_width: float, spacing: float) -> np.ndarray:
    cells = int(round(2 * half_width / spacing))
    if cells > 128:
        raise ConfigurationError("lattice oracle limited to 128 points per axis")
    return -half_width + spacing * np.arange(cells)


def lattice_free_field(psi0: Sequence[Gaussian], pi0: Sequence[Gaussian], mass: float, t: float,
                       spacing: float = 0.1, half_width: float = 6.4, dt: float | None = None) -> LatticeResult:
    """Free field by leapfrog on a periodic box (``dt <= h/sqrt(3)`` enforced)."""
    return regularized_fd_solver(None, spacing, 0.0, t, psi0=psi0, pi0=pi0, mass=mass,
                                 half_width=half_width, dt=dt)


def mollifier(r: np.ndarray, eps: float) -> np.ndarray:
    """Normalised bump ``C exp(-1/(1 - (r/eps)^2))`` supported in ``r < eps``."""
    x = np.asarray(r) / eps
    out = np.zeros_like(x)
    inside = x < 1
    out[inside] = np.exp(-1.0 / (1.0 - x[inside] ** 2))
    # normalisation: int_0^1 4 pi x^2 exp(-1/(1-x^2)) dx
    c, _ = integrate.quad(lambda y: 4 * math.pi * y * y * math.exp(-1.0 / (1.0 - y * y)), 0, 1)
    return out / (c * eps ** 3)


def regularized_fd_solver(charges: ChargeHistory | None, spacing: float, eps: float, t_final: float, *,
                          system=None, psi0: Sequence[Gaussian] = (), pi0: Sequence[Gaussian] = (),
                          mass: float | None = None, half_width: float = 6.4,
                          dt: float | None = None) -> LatticeResult:
    """Leapfrog ``psi_tt = Lap psi - m^2 psi + sum_j zeta_j(t) rho_eps(x - y_j)`` on a periodic box.

    With ``charges`` given, the sources are fed from that history and the initial field
    contains the lattice-regularised singular parts ``zeta0_j g_eps(x - y_j)`` whose
    velocity is ``zeta0dot_j g_eps``. ``g_eps`` solves ``(-Lap_h + m^2) g_eps = rho_eps``.
    """
    if mass is None:
        if system is None:
            raise ConfigurationError("mass or system required")
        mass = system.mass
    h = spacing
    if dt is None:
        dt = 0.25 * h
    if dt > h / math.sqrt(3.0) + 1e-15:
        raise ConfigurationError(f"CFL violated: dt={dt} > h/sqrt(3)={h / math.sqrt(3):.4g}")
    axis = _lattice_axis(half_width, h)
    X, Y, Z = np.meshgrid(axis, axis, axis, indexing="ij")
    pts = np.stack([X, Y, Z], axis=-1)
    psi = np.zeros(X.shape, dtype=complex)
    vel = np.zeros(X.shape, dtype=complex)
    for g in psi0:
        psi += g(pts)
    for g in pi0:
        vel += g(pts)
    profiles = []
    if charges is not None:
        if system is None:
            raise ConfigurationError("system required with charges")
        kx = 2 * np.pi * np.fft.fftfreq(axis.size, d=h)
        KX, KY, KZ = np.meshgrid(kx, kx, kx, indexing="ij")
        symbol = sum((1.0 / (6 * h * h)) * (15 - 16 * np.cos(K * h) + np.cos(2 * K * h)) for K in (KX, KY, KZ))
        for j, y in enumerate(system.points):
            d = pts - y
            d -= 2 * half_width * np.round(d / (2 * half_width))
            rho = mollifier(np.sqrt(np.sum(d * d, axis=-1)), eps)
            g_eps = np.real(np.fft.ifftn(np.fft.fftn(rho) / (symbol + mass * mass)))
            profiles.append(rho)
            psi += charges.values[j, 0] * g_eps
            vel += charges.zeta0_dot[j] * g_eps
    steps = int(math.ceil(t_final / dt - 1e-12))
    dt = t_final / steps if steps else 0.0

    def accel(u, t):
        a = _laplacian(u, h) - mass * mass * u
        if profiles:
            z, _ = charges.eval(min(t, charges.horizon))
            for j, rho in enumerate(profiles):
                a = a + z[j] * rho
        return a

    # velocity Verlet (leapfrog in kick-drift-kick form)
    acc = accel(psi, 0.0)
    for s in range(steps):
        vel = vel + 0.5 * dt * acc
        psi = psi + dt * vel
        acc = accel(psi, (s + 1) * dt)
        vel = vel + 0.5 * dt * acc
        if not np.all(np.isfinite(psi[::8, ::8, ::8])):
            raise OracleFailure("lattice solver produced non-finite values")
    return LatticeResult(axis, t_final, psi, None if charges is None else charges.values)
