"""Energy, a priori bound and convergence diagnostics."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import integrate
from scipy.interpolate import CubicHermiteSpline, CubicSpline

from .charges import ChargeHistory
from .errors import ConfigurationError
from .field import cell_centered_axis, site_profile
from .model import FOUR_PI, PotentialSpec, eval_potential
from .sources import SourceSet

RADIAL_STEP = 0.01
SLABS = 8


@dataclass(frozen=True)
class EnergyBox:
    half_width: float
    resolution: int = 64
    center: tuple[float, float, float] = (0.0, 0.0, 0.0)

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / self.resolution


def default_box(system, horizon: float, resolution: int = 64) -> EnergyBox:
    reach = float(np.max(np.abs(system.points))) if system.n else 0.0
    return EnergyBox(max(8.0 / system.mass, reach + horizon + 2.0), resolution)


def check_box(box: EnergyBox, system, t: float):
    margin = box.half_width - float(np.max(np.abs(system.points - np.asarray(box.center))))
    need = max(t, 5.0 / system.mass)
    if margin < need - 1e-12:
        raise ConfigurationError(
            f"energy box half-width {box.half_width} leaves margin {margin:.3g} < max(t, 5/m) = {need:.3g}"
        )


# ---------------------------------------------------------------------------
# radial components
# ---------------------------------------------------------------------------


@dataclass
class _Radial:
    """A radial function about ``center`` with value, radial derivative and time derivative."""

    center: np.ndarray
    pieces: list  # (r_lo, r_hi, value_fn, dvalue_fn, tvalue_fn)

    def evaluate(self, r: np.ndarray):
        val = np.zeros(r.shape, dtype=complex)
        dval = np.zeros(r.shape, dtype=complex)
        tval = np.zeros(r.shape, dtype=complex)
        for lo, hi, f, df, ft in self.pieces:
            sel = (r >= lo) & (r < hi)
            if sel.any():
                rs = r[sel]
                val[sel] = f(rs)
                dval[sel] = df(rs)
                tval[sel] = ft(rs)
        return val, dval, tval

    def tail_norms(self, start: float, box_diag: float) -> tuple[float, float, float]:
        """L2 norms squared beyond radius ``start`` of value, gradient and time derivative."""
        if start >= box_diag:
            return 0.0, 0.0, 0.0
        r = np.linspace(start, box_diag, 4001)
        v, dv, tv = self.evaluate(r)
        wts = 4 * math.pi * r * r
        return tuple(float(integrate.trapezoid(wts * np.abs(a) ** 2, r)) for a in (v, dv, tv))


def _complex_spline(r, values, derivs=None):
    if derivs is None:
        re, im = CubicSpline(r, values.real), CubicSpline(r, values.imag)
    else:
        re, im = CubicHermiteSpline(r, values.real, derivs.real), CubicHermiteSpline(r, values.imag, derivs.imag)
    dre, dim = re.derivative(), im.derivative()
    return (lambda x: re(x) + 1j * im(x)), (lambda x: dre(x) + 1j * dim(x))


def _free_components(sources: SourceSet, t: float, r_max: float) -> list[_Radial]:
    free = sources.free
    out = []
    for idx, center in enumerate(free.component_centers):
        r = np.linspace(0.0, r_max, int(math.ceil(r_max / RADIAL_STEP)) + 1)
        v, dr, dt = free.radial_component(idx, r, t)
        f, df = _complex_spline(r, v, dr)
        ft, _ = _complex_spline(r, dt)
        out.append(_Radial(np.asarray(center), [(0.0, np.inf, f, df, ft)]))
    return out


def _site_component(history: ChargeHistory, k: int, t: float, center, mass: float, r_max: float) -> _Radial:
    if t == 0.0:
        # w(0) = 0, and dw/dt(0) = 0 for consistent data: the site carries no regular field yet
        wk = dwk = 0j
    else:
        w, dw = history.deviation_many(np.array([t]))
        wk, dwk = complex(w[k, 0]), complex(dw[k, 0])
    pieces = []
    if t > 0:
        # cut the interior at the cone images t - b of the breakpoints where w kinks
        cuts = sorted({0.0, t} | {t - b for b in history.breakpoints if 0 < t - b < t})
        for lo, hi in zip(cuts[:-1], cuts[1:]):
            cnt = max(4, int(math.ceil((hi - lo) / RADIAL_STEP)) + 1)
            r = np.linspace(lo, hi, cnt)
            # keep the evaluation strictly on the chosen side of each cut
            r_in = r.copy()
            span = hi - lo
            r_in[0] += 1e-9 * span if lo > 0 else 0.0
            r_in[-1] -= 1e-9 * span
            val = site_profile(history, k, t, r_in, mass)
            tval = site_profile(history, k, t, r_in, mass, time_derivative=True)
            f, df = _complex_spline(r, val)
            ft, _ = _complex_spline(r, tval)
            pieces.append((lo, hi, f, df, ft))
    m = mass

    # a vanishing weight is skipped so that r = 0 at t = 0 gives zero rather than 0/0
    def outer(r):
        return -wk * np.exp(-m * r) / (FOUR_PI * r) if wk != 0 else np.zeros(r.shape, complex)

    def outer_d(r):
        return wk * np.exp(-m * r) * (m * r + 1.0) / (FOUR_PI * r * r) if wk != 0 else np.zeros(r.shape, complex)

    def outer_t(r):
        return -dwk * np.exp(-m * r) / (FOUR_PI * r) if dwk != 0 else np.zeros(r.shape, complex)

    pieces.append((t, np.inf, outer, outer_d, outer_t))
    return _Radial(np.asarray(center), pieces)


# ---------------------------------------------------------------------------
# energy
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EnergyRow:
    t: float
    kinetic: float
    gradient: float
    mass_term: float
    potential: float
    total: float
    est_error: float


@dataclass
class EnergyReport:
    times: list = field(default_factory=list)
    kinetic: list = field(default_factory=list)
    gradient: list = field(default_factory=list)
    mass_term: list = field(default_factory=list)
    potential: list = field(default_factory=list)
    total: list = field(default_factory=list)
    est_error: list = field(default_factory=list)
    quadrature_box: EnergyBox | None = None

    def append(self, row: EnergyRow):
        for name in ("kinetic", "gradient", "mass_term", "potential", "total", "est_error"):
            getattr(self, name).append(getattr(row, name))
        self.times.append(row.t)

    @property
    def estimated_quadrature_error(self) -> float:
        return max(self.est_error) if self.est_error else 0.0

    def relative_drift(self) -> float:
        tot = np.asarray(self.total)
        return float(np.max(np.abs(tot - tot[0])) / max(1.0, abs(tot[0])))

    def rows(self):
        return [EnergyRow(*vals) for vals in zip(self.times, self.kinetic, self.gradient, self.mass_term,
                                                  self.potential, self.total, self.est_error)]


def _grid_sums(components: list[_Radial], box: EnergyBox, resolution: int, sites, threads: int):
    """Grid sums of |psi_t_reg|^2, |grad psi_reg|^2, |psi_reg|^2 and the kinetic cross integrals."""
    axis = cell_centered_axis(box.half_width, resolution) + 0.0
    h = 2.0 * box.half_width / resolution
    c0 = np.asarray(box.center, dtype=float)
    slabs = np.array_split(np.arange(resolution), min(SLABS, resolution))
    chi_scale, masses = sites["chi_scale"], sites["mass"]

    def work(ix):
        X, Y, Z = np.meshgrid(axis[ix] + c0[0], axis + c0[1], axis + c0[2], indexing="ij")
        pts = np.stack([X.ravel(), Y.ravel(), Z.ravel()], axis=1)
        val = np.zeros(pts.shape[0], dtype=complex)
        tval = np.zeros(pts.shape[0], dtype=complex)
        grad = np.zeros((pts.shape[0], 3), dtype=complex)
        for comp in components:
            d = pts - comp.center
            r = np.sqrt(np.sum(d * d, axis=1))
            v, dv, tv = comp.evaluate(r)
            val += v
            tval += tv
            with np.errstate(invalid="ignore", divide="ignore"):
                unit = np.where(r[:, None] > 0, d / np.where(r > 0, r, 1.0)[:, None], 0.0)
            grad += dv[:, None] * unit
        cross = []
        for y, tval_y in zip(sites["points"], sites["tval_at_site"]):
            d = pts - y
            r = np.sqrt(np.sum(d * d, axis=1))
            g = np.exp(-masses * r) / (FOUR_PI * r)
            chi = np.exp(-0.5 * (r / chi_scale) ** 2)
            cross.append(np.sum((tval - tval_y * chi) * g))
        return (np.sum(np.abs(tval) ** 2), np.sum(np.abs(grad) ** 2), np.sum(np.abs(val) ** 2), np.array(cross))

    if threads > 1:
        with ThreadPoolExecutor(threads) as pool:
            parts = list(pool.map(work, slabs))
    else:
        parts = [work(ix) for ix in slabs]
    vol = h ** 3
    kin = sum(p[0] for p in parts) * vol
    grad = sum(p[1] for p in parts) * vol
    mass = sum(p[2] for p in parts) * vol
    cross = sum(p[3] for p in parts) * vol
    return kin, grad, mass, cross


def _chi_integral(mass: float, scale: float) -> float:
    """``int chi g dx = int_0^inf r exp(-m r) exp(-r^2/(2 s^2)) dr``."""
    val, _ = integrate.quad(lambda r: r * math.exp(-mass * r - 0.5 * (r / scale) ** 2), 0, np.inf,
                            epsabs=1e-15, epsrel=1e-13)
    return val


def energy(t: float, history: ChargeHistory, sources: SourceSet, spec: PotentialSpec, box: EnergyBox,
           threads: int = 1, chi_scale: float = 0.5) -> EnergyRow:
    """Energy surrogate at ``t`` with an error estimate.

    The grid midpoint sums at resolutions ``N`` and ``N/2`` give a Richardson-style estimate
    ``|E_N - E_{N/2}|/3``; the field outside the box is bounded through radial tail integrals.
    """
    system = sources.system
    m = system.mass
    check_box(box, system, t)
    c0 = np.asarray(box.center, dtype=float)
    r_max = math.sqrt(3.0) * box.half_width + float(np.max(np.linalg.norm(system.points - c0, axis=1))) + 1.0
    for center in sources.free.component_centers:
        r_max = max(r_max, math.sqrt(3.0) * box.half_width + float(np.linalg.norm(center - c0)) + 1.0)
    comps = _free_components(sources, t, r_max)
    comps += [_site_component(history, k, t, system.points[k], m, r_max) for k in range(system.n)]

    z, eta = history.eval(t, side="left")
    # psi_t_reg at the sites
    tval_site = np.zeros(system.n, dtype=complex)
    for k in range(system.n):
        for comp in comps:
            r = np.array([float(np.linalg.norm(system.points[k] - comp.center))])
            tval_site[k] += comp.evaluate(r)[2][0]
    sites = {"points": system.points, "tval_at_site": tval_site, "chi_scale": chi_scale, "mass": m}
    c_chi = _chi_integral(m, chi_scale)

    def assemble(res):
        kin_reg, grad, mass_sq, cross = _grid_sums(comps, box, res, sites, threads)
        cross = cross + tval_site * c_chi
        d = system.distances
        g2 = np.exp(-m * d) / (8 * math.pi * m)
        kinetic = kin_reg + 2.0 * float(np.real(np.sum(np.conj(eta) * cross))) + float(np.real(np.conj(eta) @ g2 @ eta))
        return kinetic, grad, m * m * mass_sq

    kinetic, grad, mass_term = assemble(box.resolution)
    k2, g2_, m2 = assemble(box.resolution // 2)
    u, _ = eval_potential(spec, z)
    potential = u - system.green.quadratic_form(z).real
    total = kinetic + grad + mass_term + potential
    disc = (abs(kinetic - k2) + abs(grad - g2_) + abs(mass_term - m2)) / 3.0
    # tail outside the inscribed sphere of each component (Cauchy-Schwarz over components)
    sq = [0.0, 0.0, 0.0]
    for comp in comps:
        inner = box.half_width - float(np.max(np.abs(comp.center - c0)))
        tv, tg, tt = comp.tail_norms(max(inner, 0.0), r_max)
        sq[0] += math.sqrt(tt)
        sq[1] += math.sqrt(tg)
        sq[2] += math.sqrt(tv)
    tail = sq[0] ** 2 + sq[1] ** 2 + m * m * sq[2] ** 2
    return EnergyRow(float(t), kinetic, grad, mass_term, potential, total, disc + tail)


def energy_series(times: Sequence[float], history: ChargeHistory, sources: SourceSet, spec: PotentialSpec,
                  box: EnergyBox, threads: int = 1) -> EnergyReport:
    report = EnergyReport(quadrature_box=box)
    for t in times:
        report.append(energy(float(t), history, sources, spec, box, threads))
    return report


def initial_energy(scenario, box: EnergyBox, threads: int = 1, sources: SourceSet | None = None) -> float:
    """Energy of the initial data, evaluated through a two-node history that starts at t = 0."""
    sources = sources if sources is not None else scenario.sources()
    z0 = np.asarray(scenario.data.zeta0, dtype=complex)
    z1 = np.asarray(scenario.data.zeta0_dot, dtype=complex)
    step = 1e-12
    vals = np.stack([z0, z0 + step * z1], axis=1)
    derivs = np.stack([z1, z1], axis=1)
    hist = ChargeHistory(np.array([0.0, step]), vals, derivs.copy(), derivs, np.zeros(1), z0.copy(), z1.copy())
    return energy(0.0, hist, sources, scenario.potential, box, threads).total


# ---------------------------------------------------------------------------
# a priori bound
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class AprioriReport:
    max_charge: float
    radius: float
    margin: float
    slack: float
    passed: bool


def apriori_check(history: ChargeHistory, radius: float, slack: float = 1e-3) -> AprioriReport:
    peak = history.max_abs()
    return AprioriReport(peak, float(radius), float(radius - peak), slack, peak <= radius * (1 + slack))


# ---------------------------------------------------------------------------
# convergence
# ---------------------------------------------------------------------------


@dataclass
class ConvergenceReport:
    dts: list
    errors: list
    orders: list
    status: str  # "ok", "saturated" or "inconclusive"
    reference: str

    @property
    def order(self) -> float:
        return self.orders[-1] if self.orders else float("nan")

    def table(self) -> str:
        lines = [f"reference: {self.reference}", f"{'dt':>12} {'error':>14} {'order':>8}"]
        for i, (dt, err) in enumerate(zip(self.dts, self.errors)):
            order = f"{self.orders[i - 1]:8.3f}" if i > 0 and i - 1 < len(self.orders) else " " * 8
            lines.append(f"{dt:12.4e} {err:14.6e} {order}")
        lines.append(f"status: {self.status}")
        return "\n".join(lines)


SATURATION_FLOOR = 1e-13


def _sample_times(dts, horizon):
    coarse = max(dts)
    count = int(round(horizon / coarse))
    return np.arange(count + 1) * (horizon / count)


def convergence_study(scenario, dt_list: Sequence[float], reference: str = "auto",
                      exact: Callable[[float], np.ndarray] | None = None, horizon: float | None = None,
                      oracle_dt: float | None = None, **solve_kw) -> ConvergenceReport:
    """Observed order of the charge error over a geometric ladder of step sizes.

    ``reference``: ``"exact"`` (needs ``exact``), ``"oracle"`` (brute-force solution),
    ``"richardson"`` (differences of successive runs) or ``"auto"``.
    """
    dts = sorted((float(d) for d in dt_list), reverse=True)
    if len(dts) < 3:
        raise ConfigurationError("convergence study needs at least three step sizes")
    ratios = [dts[i] / dts[i + 1] for i in range(len(dts) - 1)]
    if max(ratios) - min(ratios) > 1e-9 * max(ratios):
        raise ConfigurationError("step sizes must form a geometric progression")
    T = float(horizon if horizon is not None else scenario.horizon)
    if reference == "auto":
        reference = "exact" if exact is not None else "richardson"
    sample = _sample_times(dts, T)
    runs = []
    for dt in dts:
        hist = scenario.solve(horizon=T, dt=dt, **solve_kw)
        runs.append(np.array([hist.eval(t)[0] for t in sample]).T)
    ratio = ratios[0]
    if reference == "exact":
        ref = np.array([exact(t) for t in sample]).T
        errors = [float(np.max(np.abs(r - ref))) for r in runs]
    elif reference == "oracle":
        from .oracle import brute_force_charges

        fine = brute_force_charges(scenario, oracle_dt or dts[-1] / 100, horizon=T)
        ref = np.array([fine.eval(t)[0] for t in sample]).T
        errors = [float(np.max(np.abs(r - ref))) for r in runs]
    elif reference == "richardson":
        errors = [float(np.max(np.abs(runs[i] - runs[i + 1]))) for i in range(len(runs) - 1)]
    else:
        raise ConfigurationError(f"unknown convergence reference {reference!r}")
    scale = max(1.0, max(float(np.max(np.abs(r))) for r in runs))
    if max(errors) <= SATURATION_FLOOR * scale:
        return ConvergenceReport(dts, errors, [], "saturated", reference)
    orders = []
    for a, b in zip(errors[:-1], errors[1:]):
        orders.append(math.log(a / b) / math.log(ratio) if a > 0 and b > 0 else float("nan"))
    monotone = all(b < a for a, b in zip(errors[:-1], errors[1:]))
    status = "ok" if monotone else "inconclusive"
    return ConvergenceReport(dts, errors, orders, status, reference)
