"""Physical system: mass, interaction points, Green matrix, potentials, initial data."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import CoercivityError, ConfigurationError, NumericOverflowError

DEFAULT_EPS_SEP = 1e-9
FOUR_PI = 4.0 * math.pi


def yukawa(r, mass: float):
    """Green's function ``exp(-m r) / (4 pi r)`` of ``-Laplace + m^2``."""
    r = np.asarray(r, dtype=float)
    return np.exp(-mass * r) / (FOUR_PI * r)


@dataclass(frozen=True)
class GreenMatrix:
    entries: np.ndarray

    def quadratic_form(self, zeta) -> complex:
        """``sum_{j,k} g_jk zeta_j conj(zeta_k)``; real up to rounding."""
        z = np.asarray(zeta, dtype=complex)
        return complex(z @ self.entries @ z.conj())

    def __len__(self):
        return self.entries.shape[0]


@dataclass(frozen=True, eq=False)
class SystemConfig:
    mass: float
    points: np.ndarray
    green: GreenMatrix
    distances: np.ndarray
    eps_sep: float = DEFAULT_EPS_SEP

    @property
    def n(self) -> int:
        return self.points.shape[0]

    def pair_distances(self) -> list[float]:
        """Sorted distinct off-diagonal distances."""
        n = self.n
        ds = sorted({float(self.distances[j, k]) for j in range(n) for k in range(j + 1, n)})
        return ds


def build_system(mass: float, points, eps_sep: float = DEFAULT_EPS_SEP) -> SystemConfig:
    """Validate mass and points and assemble the Green matrix ``g_jk``."""
    mass = float(mass)
    if not (mass > 0 and math.isfinite(mass)):
        raise ConfigurationError(f"mass must be positive and finite, got {mass}")
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1 and pts.size == 3:
        pts = pts.reshape(1, 3)
    if pts.ndim != 2 or pts.shape[1] != 3 or pts.shape[0] < 1:
        raise ConfigurationError("points must be a nonempty list of 3-vectors")
    if not np.all(np.isfinite(pts)):
        raise ConfigurationError("points must be finite")
    if eps_sep <= 0:
        raise ConfigurationError("eps_sep must be positive")
    diff = pts[:, None, :] - pts[None, :, :]
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    n = pts.shape[0]
    g = np.zeros((n, n))
    for j in range(n):
        for k in range(j + 1, n):
            d = dist[j, k]
            if d < eps_sep:
                raise ConfigurationError(
                    f"points {j} and {k} are closer than eps_sep={eps_sep:g} (distance {d:g})"
                )
            g[j, k] = g[k, j] = math.exp(-mass * d) / (FOUR_PI * d)
    pts.setflags(write=False)
    dist.setflags(write=False)
    g.setflags(write=False)
    return SystemConfig(mass, pts, GreenMatrix(g), dist, eps_sep)


# ---------------------------------------------------------------------------
# potentials
# ---------------------------------------------------------------------------

POWER = "power"
POLYNOMIAL = "polynomial"
USER = "user"


@dataclass(frozen=True, eq=False)
class PotentialSpec:
    """Potential ``U`` on C^n with its Wirtinger gradient ``F = dU/d(conj zeta)``.

    ``power``: ``U = sum_j gamma_j/(sigma_j+1) |zeta_j|^(2 sigma_j + 2)``.
    ``polynomial``: ``U = sum_j P_j(|zeta_j|^2)``, ``coefficients[j][p]`` multiplies ``s^p``.
    ``user``: ``potential`` and ``force`` callables supplied directly.
    """

    family: str
    coefficients: dict
    coercivity_a: float
    coercivity_b: float
    truncation_radius: float | None = None
    potential: Callable | None = field(default=None, repr=False)
    force: Callable | None = field(default=None, repr=False)

    def __post_init__(self):
        if self.family not in (POWER, POLYNOMIAL, USER):
            raise ConfigurationError(f"unknown potential family {self.family!r}")
        if not self.coercivity_b > 0:
            raise ConfigurationError("coercivity constant b must be positive")
        if self.truncation_radius is not None and not self.truncation_radius > 0:
            raise ConfigurationError("truncation radius must be positive")
        if self.family == USER and (self.potential is None or self.force is None):
            raise ConfigurationError("user potential needs both potential and force callables")

    @property
    def n_sites(self) -> int | None:
        if self.family == POWER:
            return len(self.coefficients["gamma"])
        if self.family == POLYNOMIAL:
            return len(self.coefficients["coefficients"])
        return None

    def with_truncation_radius(self, radius: float) -> "PotentialSpec":
        return PotentialSpec(self.family, self.coefficients, self.coercivity_a,
                             self.coercivity_b, float(radius), self.potential, self.force)


def power_potential(gamma: Sequence[float], sigma: Sequence[float], a: float, b: float) -> PotentialSpec:
    gamma = tuple(float(g) for g in gamma)
    sigma = tuple(float(s) for s in sigma)
    if len(gamma) != len(sigma):
        raise ConfigurationError("gamma and sigma must have one entry per site")
    if any(s < 0 for s in sigma):
        raise ConfigurationError("power-law exponents must be nonnegative")
    return PotentialSpec(POWER, {"gamma": gamma, "sigma": sigma}, float(a), float(b))


def polynomial_potential(coefficients: Sequence[Sequence[float]], a: float, b: float) -> PotentialSpec:
    coefs = tuple(tuple(float(c) for c in row) for row in coefficients)
    if not coefs or any(len(row) == 0 for row in coefs):
        raise ConfigurationError("polynomial potential needs at least one coefficient per site")
    return PotentialSpec(POLYNOMIAL, {"coefficients": coefs}, float(a), float(b))


def user_potential(potential: Callable, force: Callable, a: float, b: float) -> PotentialSpec:
    return PotentialSpec(USER, {}, float(a), float(b), None, potential, force)


def _radial_parts(spec: PotentialSpec, s: np.ndarray):
    """Per-site ``P_j(s_j)`` and ``P_j'(s_j)`` with ``s_j = |zeta_j|^2``."""
    if spec.family == POWER:
        gamma = np.asarray(spec.coefficients["gamma"])
        sigma = np.asarray(spec.coefficients["sigma"])
        p = gamma / (sigma + 1.0) * s ** (sigma + 1.0)
        with np.errstate(divide="ignore", invalid="ignore"):
            dp = np.where(sigma == 0, gamma, gamma * s ** sigma)
        return p, dp
    p = np.zeros_like(s)
    dp = np.zeros_like(s)
    for j, row in enumerate(spec.coefficients["coefficients"]):
        pj = 0.0
        dpj = 0.0
        for c in reversed(row):
            pj = pj * s[j] + c
        for power in range(len(row) - 1, 0, -1):
            dpj = dpj * s[j] + power * row[power]
        p[j] = pj
        dp[j] = dpj
    return p, dp


def eval_potential(spec: PotentialSpec, zeta) -> tuple[float, np.ndarray]:
    """Return ``(U(zeta), F(zeta))``."""
    z = np.atleast_1d(np.asarray(zeta, dtype=complex))
    if spec.n_sites is not None and spec.n_sites != z.size:
        raise ConfigurationError(f"potential defined for {spec.n_sites} sites, got {z.size}")
    if spec.family == USER:
        u = float(spec.potential(z))
        f = np.asarray(spec.force(z), dtype=complex)
    else:
        s = (z * z.conj()).real
        p, dp = _radial_parts(spec, s)
        u = float(np.sum(p))
        f = dp * z
    if not (math.isfinite(u) and np.all(np.isfinite(f))):
        raise NumericOverflowError(f"potential evaluation overflowed at |zeta|={np.linalg.norm(z):.3e}")
    return u, f


def force_lipschitz_bound(spec: PotentialSpec, radius: float, samples: int = 2001) -> float:
    """Upper bound on the real Jacobian norm of ``F`` over the ball of given radius.

    For ``F_j = P_j'(s) zeta_j`` the per-site Jacobian norm is at most
    ``|P_j'(s)| + 2 s |P_j''(s)|``, maximised over ``s in [0, radius^2]``.
    """
    s = np.linspace(0.0, radius * radius, samples)
    if spec.family == POWER:
        best = 0.0
        for g, sg in zip(spec.coefficients["gamma"], spec.coefficients["sigma"]):
            best = max(best, abs(g) * (2 * sg + 1) * radius ** (2 * sg))
        return best
    if spec.family == POLYNOMIAL:
        best = 0.0
        for row in spec.coefficients["coefficients"]:
            d1 = np.zeros_like(s)
            d2 = np.zeros_like(s)
            for power in range(len(row) - 1, 0, -1):
                d1 = d1 * s + power * row[power]
            for power in range(len(row) - 1, 1, -1):
                d2 = d2 * s + power * (power - 1) * row[power]
            best = max(best, float(np.max(np.abs(d1) + 2 * s * np.abs(d2))))
        return best
    # user family: sampled finite-difference Jacobian
    n = None
    rng = np.random.default_rng(7)
    best = 0.0
    for _ in range(200):
        if n is None:
            n = np.asarray(spec.force(np.zeros(1, dtype=complex))).size
        z = rng.normal(size=n) + 1j * rng.normal(size=n)
        z *= radius * rng.uniform() / max(np.linalg.norm(z), 1e-300)
        dz = rng.normal(size=n) + 1j * rng.normal(size=n)
        dz *= 1e-6 * max(radius, 1.0) / np.linalg.norm(dz)
        df = np.asarray(spec.force(z + dz)) - np.asarray(spec.force(z))
        best = max(best, np.linalg.norm(df) / np.linalg.norm(dz))
    return 1.05 * best


def wirtinger_gradient_fd(potential_fn: Callable, zeta, h: float = 1e-6) -> np.ndarray:
    """Central-difference ``(dU/dRe + i dU/dIm)/2`` per component."""
    z = np.asarray(zeta, dtype=complex)
    out = np.empty_like(z)
    for j in range(z.size):
        step = h * max(1.0, abs(z[j]))
        e = np.zeros_like(z)
        e[j] = step
        d_re = (potential_fn(z + e) - potential_fn(z - e)) / (2 * step)
        d_im = (potential_fn(z + 1j * e) - potential_fn(z - 1j * e)) / (2 * step)
        out[j] = 0.5 * (d_re + 1j * d_im)
    return out


def coercivity_radius(spec: PotentialSpec, initial_energy: float) -> float:
    """``sqrt((H + a) / b)``: the ball the charges cannot leave."""
    num = initial_energy + spec.coercivity_a
    if num < 0:
        raise CoercivityError(
            f"initial energy {initial_energy:.6g} + a = {num:.6g} < 0; declared (a, b) cannot hold"
        )
    return math.sqrt(num / spec.coercivity_b)


def coercivity_margin(spec: PotentialSpec, green: GreenMatrix, radius: float,
                      samples: int = 4000, seed: int = 0) -> float:
    """Minimum of ``U - G - b|zeta|^2 + a`` over deterministic samples of a ball.

    Sampling is a heuristic check only; it cannot certify the global bound.
    """
    n = green.entries.shape[0]
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(samples, n)) + 1j * rng.normal(size=(samples, n))
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    radii = radius * np.sqrt(rng.uniform(size=samples))
    radii[: samples // 10] = radius * np.linspace(0, 1, samples // 10)
    zs = dirs * radii[:, None]
    # per-site axes and the in-phase / anti-phase diagonals, where G is extremal
    extra = []
    for rr in np.linspace(0, radius, 101):
        for j in range(n):
            e = np.zeros(n, dtype=complex)
            e[j] = rr
            extra.append(e)
        extra.append(np.full(n, rr / math.sqrt(n), dtype=complex))
        alt = np.array([(-1) ** j for j in range(n)], dtype=complex) * rr / math.sqrt(n)
        extra.append(alt)
    zs = np.vstack([zs, np.array(extra)])
    worst = math.inf
    for z in zs:
        u, _ = eval_potential(spec, z)
        val = u - green.quadratic_form(z).real - spec.coercivity_b * np.vdot(z, z).real + spec.coercivity_a
        worst = min(worst, val)
    return float(worst)


def verify_coercivity(spec: PotentialSpec, green: GreenMatrix, radius: float,
                      tol: float = 1e-9, samples: int = 4000) -> float:
    margin = coercivity_margin(spec, green, radius, samples=samples)
    if margin < -tol:
        raise CoercivityError(
            f"U - G >= b|zeta|^2 - a violated on sampled ball of radius {radius:.4g} (margin {margin:.3e})"
        )
    return margin


# ---------------------------------------------------------------------------
# initial data
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gaussian:
    """``amplitude * exp(-|x - center|^2 / (2 width^2))``."""

    amplitude: complex
    center: tuple[float, float, float]
    width: float

    def __post_init__(self):
        if not self.width > 0:
            raise ConfigurationError(f"Gaussian width must be positive, got {self.width}")
        object.__setattr__(self, "amplitude", complex(self.amplitude))
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))
        if len(self.center) != 3:
            raise ConfigurationError("Gaussian center must be a 3-vector")

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        d2 = np.sum((x - np.asarray(self.center)) ** 2, axis=-1)
        return self.amplitude * np.exp(-0.5 * d2 / self.width ** 2)


def gaussian_sum(components: Sequence[Gaussian], x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1], dtype=complex)
    for g in components:
        out = out + g(x)
    return out


@dataclass(frozen=True, eq=False)
class InitialData:
    zeta0: np.ndarray
    zeta0_dot: np.ndarray
    psi0_reg: tuple[Gaussian, ...] = ()
    pi0_reg: tuple[Gaussian, ...] = ()

    def __post_init__(self):
        z0 = np.atleast_1d(np.asarray(self.zeta0, dtype=complex)).copy()
        z1 = np.atleast_1d(np.asarray(self.zeta0_dot, dtype=complex)).copy()
        if z0.shape != z1.shape or z0.ndim != 1:
            raise ConfigurationError("zeta0 and zeta0_dot must be complex n-vectors of equal length")
        z0.setflags(write=False)
        z1.setflags(write=False)
        object.__setattr__(self, "zeta0", z0)
        object.__setattr__(self, "zeta0_dot", z1)
        object.__setattr__(self, "psi0_reg", tuple(self.psi0_reg))
        object.__setattr__(self, "pi0_reg", tuple(self.pi0_reg))

    @property
    def n(self) -> int:
        return self.zeta0.size


def boundary_mismatch(system: SystemConfig, data: InitialData, spec: PotentialSpec) -> np.ndarray:
    """``psi0_reg(y_j) + sum_k g_kj zeta0_k - F_j(zeta0)``; zero for data in the domain of H_F."""
    reg = gaussian_sum(data.psi0_reg, system.points)
    _, f = eval_potential(spec, data.zeta0)
    return reg + system.green.entries.T @ data.zeta0 - f


def consistent_charges(system: SystemConfig, psi0_reg: Sequence[Gaussian], spec: PotentialSpec,
                       guess=None) -> np.ndarray:
    """Solve ``psi0_reg(y_j) + sum_k g_kj zeta_k = F_j(zeta)`` for the initial charges."""
    from scipy.optimize import root

    n = system.n
    reg = gaussian_sum(psi0_reg, system.points)
    gT = system.green.entries.T

    def residual(v):
        z = v[:n] + 1j * v[n:]
        _, f = eval_potential(spec, z)
        r = reg + gT @ z - f
        return np.concatenate([r.real, r.imag])

    z0 = np.zeros(n, dtype=complex) if guess is None else np.asarray(guess, dtype=complex)
    sol = root(residual, np.concatenate([z0.real, z0.imag]), tol=1e-14)
    if not sol.success or np.max(np.abs(residual(sol.x))) > 1e-10:
        raise ConfigurationError(f"could not solve the initial boundary condition: {sol.message}")
    return sol.x[:n] + 1j * sol.x[n:]
