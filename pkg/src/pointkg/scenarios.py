"""Scenario definitions: JSON loading with line-referenced validation, and shipped builders."""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Any

import numpy as np

from .charges import ChargeHistory, Forcing, SolverParams, solve_charges
from .errors import ConfigurationError
from .freefield import FreeFieldEvaluator
from .model import (
    Gaussian,
    InitialData,
    PotentialSpec,
    SystemConfig,
    build_system,
    consistent_charges,
    polynomial_potential,
    power_potential,
)
from .sources import SourceSet

SHIPPED = ("zero", "static", "linear", "two_site")


class ScenarioError(ConfigurationError):
    """Scenario file failed to parse or validate; carries the offending line when known."""

    def __init__(self, message: str, line: int | None = None, path: str | None = None):
        where = f"{path or '<scenario>'}:{line}: " if line else f"{path or '<scenario>'}: "
        super().__init__(where + message)
        self.line = line


@dataclass(frozen=True)
class EnergySettings:
    times: tuple[float, ...] = ()
    box_half_width: float | None = None
    resolution: int = 64


@dataclass(frozen=True)
class SnapshotSettings:
    times: tuple[float, ...] = ()
    box_half_width: float = 3.0
    resolution: int = 16
    binary: bool = False


@dataclass(eq=False)
class Scenario:
    name: str
    system: SystemConfig
    potential: PotentialSpec
    data: InitialData
    horizon: float
    params: SolverParams = field(default_factory=SolverParams)
    energy: EnergySettings = field(default_factory=EnergySettings)
    snapshots: SnapshotSettings = field(default_factory=SnapshotSettings)
    residual_times: tuple[float, ...] = ()
    forcing: Forcing | None = None
    source_text: str | None = None

    def free_field(self, tol: float = 1e-11) -> FreeFieldEvaluator:
        return FreeFieldEvaluator(self.data.psi0_reg, self.data.pi0_reg, self.system.mass, tol)

    def sources(self) -> SourceSet:
        return SourceSet(self.system, self.data, self.free_field(), self.params.dt)

    def with_params(self, **changes) -> "Scenario":
        return replace(self, params=replace(self.params, **changes))

    def solve(self, sources: SourceSet | None = None, truncation_radius: float | None = None,
              horizon: float | None = None, **param_changes) -> ChargeHistory:
        params = replace(self.params, **param_changes) if param_changes else self.params
        src = sources if sources is not None else SourceSet(self.system, self.data, self.free_field(), params.dt)
        return solve_charges(self.system, self.data, self.potential, src, params,
                             horizon if horizon is not None else self.horizon, self.forcing,
                             truncation_radius)


# ---------------------------------------------------------------------------
# shipped builders
# ---------------------------------------------------------------------------


def zero_scenario(horizon: float = 10.0, dt: float = 1e-3) -> Scenario:
    system = build_system(1.0, [(0.0, 0.0, 0.0)])
    pot = power_potential([1.0], [1.0], a=0.5, b=1.0)
    data = InitialData([0j], [0j])
    return Scenario("zero", system, pot, data, horizon, SolverParams(dt=dt),
                    EnergySettings(times=(0.0, horizon / 2, horizon), box_half_width=12.0, resolution=32))


def static_scenario(horizon: float = 10.0, dt: float = 1e-3) -> Scenario:
    """Single site at rest in a zero of the force: ``U = (|z|^2 - 1)^2/2 + 1/4``, ``z* = 1``."""
    system = build_system(1.0, [(0.0, 0.0, 0.0)])
    pot = polynomial_potential([[0.75, -1.0, 0.5]], a=1.5, b=1.0)
    data = InitialData([1.0 + 0j], [0j])
    return Scenario("static", system, pot, data, horizon, SolverParams(dt=dt),
                    EnergySettings(times=(0.0, horizon / 2, horizon), box_half_width=12.0, resolution=32))


def linear_scenario(horizon: float = 5.0, dt: float = 1e-3) -> Scenario:
    """Linear point interaction ``F(z) = z`` at the origin driven by an off-center Gaussian."""
    system = build_system(1.0, [(0.0, 0.0, 0.0)])
    pot = power_potential([1.0], [0.0], a=0.0, b=1.0)
    psi = (Gaussian(1.0, (0.5, 0.0, 0.0), 1.0),)
    zeta0 = consistent_charges(system, psi, pot)
    data = InitialData(zeta0, [0j], psi, ())
    return Scenario("linear", system, pot, data, horizon, SolverParams(dt=dt),
                    EnergySettings(times=tuple(np.linspace(0.0, horizon, 6)), box_half_width=8.0, resolution=64))


def two_site_scenario(horizon: float = 3.0, dt: float = 1e-3) -> Scenario:
    """Two defocusing sites at distance one with asymmetric Gaussian data."""
    system = build_system(1.0, [(0.0, 0.0, 0.0), (1.0, 0.0, 0.0)])
    g12 = float(system.green.entries[0, 1])
    pot = power_potential([1.0, 1.0], [1.0, 1.0], a=(g12 + 1.0) ** 2, b=1.0)
    psi = (Gaussian(0.8, (0.5, 0.0, 0.0), 0.8), Gaussian(0.3j, (-0.4, 0.3, 0.0), 0.6))
    pi = (Gaussian(0.4, (1.2, 0.0, 0.0), 0.7),)
    zeta0 = consistent_charges(system, psi, pot, guess=[0.5, 0.5])
    data = InitialData(zeta0, [0j, 0j], psi, pi)
    return Scenario("two_site", system, pot, data, horizon, SolverParams(dt=dt),
                    EnergySettings(times=tuple(np.linspace(0.0, horizon, 5)), box_half_width=6.0, resolution=96))


BUILDERS = {
    "zero": zero_scenario,
    "static": static_scenario,
    "linear": linear_scenario,
    "two_site": two_site_scenario,
}


def shipped_scenario(name: str) -> Scenario:
    """Shipped scenario loaded from its packaged JSON file."""
    if name not in SHIPPED:
        raise ConfigurationError(f"unknown shipped scenario {name!r}; choose from {SHIPPED}")
    text = resources.files("pointkg.data").joinpath(f"{name}.json").read_text()
    return parse_scenario(text, f"{name}.json")


# ---------------------------------------------------------------------------
# JSON
# ---------------------------------------------------------------------------


def _line_of(text: str, key: str) -> int | None:
    m = re.search(r'"' + re.escape(key) + r'"\s*:', text)
    if m is None:
        return None
    return text.count("\n", 0, m.start()) + 1


class _Reader:
    def __init__(self, text: str, path: str | None):
        self.text = text
        self.path = path

    def fail(self, message: str, key: str | None = None):
        raise ScenarioError(message, _line_of(self.text, key) if key else None, self.path)

    def get(self, obj: dict, key: str, kind, default: Any = ..., where: str = ""):
        if key not in obj or (obj[key] is None and default is not ...):
            if default is ...:
                self.fail(f"missing required field {where + key!r}", where.rstrip(".").split(".")[-1] or None)
            return default
        val = obj[key]
        if kind is float:
            if isinstance(val, bool) or not isinstance(val, (int, float)) or not math.isfinite(val):
                self.fail(f"field {where + key!r} must be a finite number", key)
            return float(val)
        if kind is int:
            if isinstance(val, bool) or not isinstance(val, int):
                self.fail(f"field {where + key!r} must be an integer", key)
            return int(val)
        if kind is bool:
            if not isinstance(val, bool):
                self.fail(f"field {where + key!r} must be true or false", key)
            return val
        if kind is not None and not isinstance(val, kind):
            self.fail(f"field {where + key!r} has the wrong type", key)
        return val

    def complex_value(self, val, key: str) -> complex:
        if isinstance(val, (int, float)) and not isinstance(val, bool):
            return complex(val)
        if (isinstance(val, list) and len(val) == 2
                and all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val)):
            return complex(val[0], val[1])
        self.fail(f"{key!r} entries must be numbers or [re, im] pairs", key)

    def complex_vector(self, val, key: str, n: int) -> np.ndarray:
        if not isinstance(val, list) or len(val) != n:
            self.fail(f"{key!r} must list one complex value per site ({n})", key)
        return np.array([self.complex_value(v, key) for v in val], dtype=complex)

    def gaussians(self, val, key: str) -> tuple[Gaussian, ...]:
        if not isinstance(val, list):
            self.fail(f"{key!r} must be a list of Gaussian components", key)
        out = []
        for comp in val:
            if not isinstance(comp, dict):
                self.fail(f"{key!r} entries must be objects", key)
            amp = self.complex_value(comp.get("amplitude"), "amplitude")
            center = comp.get("center")
            if not (isinstance(center, list) and len(center) == 3):
                self.fail("Gaussian center must be a 3-vector", "center")
            width = self.get(comp, "width", float)
            if width <= 0:
                self.fail("Gaussian width must be positive", "width")
            out.append(Gaussian(amp, tuple(float(c) for c in center), width))
        return tuple(out)


def parse_scenario(text: str, path: str | None = None) -> Scenario:
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"invalid JSON: {exc.msg}", exc.lineno, path) from None
    rd = _Reader(text, path)
    if not isinstance(raw, dict):
        rd.fail("top level must be an object")
    name = raw.get("name", Path(path).stem if path else "scenario")

    sys_raw = rd.get(raw, "system", dict)
    mass = rd.get(sys_raw, "mass", float, where="system.")
    points = rd.get(sys_raw, "points", list, where="system.")
    if not points or not all(isinstance(p, list) and len(p) == 3 for p in points):
        rd.fail("system.points must be a nonempty list of 3-vectors", "points")
    if mass <= 0:
        rd.fail("system.mass must be positive", "mass")
    eps_sep = rd.get(sys_raw, "eps_sep", float, 1e-9, "system.")
    try:
        system = build_system(mass, points, eps_sep)
    except ConfigurationError as exc:
        rd.fail(str(exc), "points")
    n = system.n

    pot_raw = rd.get(raw, "potential", dict)
    family = rd.get(pot_raw, "family", str, where="potential.")
    a = rd.get(pot_raw, "a", float, where="potential.")
    b = rd.get(pot_raw, "b", float, where="potential.")
    if b <= 0:
        rd.fail("potential.b must be positive", "b")
    if family == "power":
        gamma = rd.get(pot_raw, "gamma", list, where="potential.")
        sigma = rd.get(pot_raw, "sigma", list, where="potential.")
        if len(gamma) != n or len(sigma) != n:
            rd.fail(f"potential gamma and sigma need {n} entries", "gamma")
        try:
            pot = power_potential(gamma, sigma, a, b)
        except (ConfigurationError, TypeError, ValueError) as exc:
            rd.fail(str(exc), "sigma")
    elif family == "polynomial":
        coefs = rd.get(pot_raw, "coefficients", list, where="potential.")
        if len(coefs) != n:
            rd.fail(f"potential coefficients need one row per site ({n})", "coefficients")
        try:
            pot = polynomial_potential(coefs, a, b)
        except (ConfigurationError, TypeError, ValueError) as exc:
            rd.fail(str(exc), "coefficients")
    else:
        rd.fail(f"unknown potential family {family!r} (power or polynomial)", "family")

    init = rd.get(raw, "initial", dict)
    psi = rd.gaussians(init.get("psi0_reg", []), "psi0_reg")
    pi = rd.gaussians(init.get("pi0_reg", []), "pi0_reg")
    z0_raw = init.get("zeta0", "consistent")
    if z0_raw == "consistent":
        guess = init.get("zeta0_guess")
        guess_v = rd.complex_vector(guess, "zeta0_guess", n) if guess is not None else None
        try:
            zeta0 = consistent_charges(system, psi, pot, guess_v)
        except ConfigurationError as exc:
            rd.fail(str(exc), "zeta0")
    else:
        zeta0 = rd.complex_vector(z0_raw, "zeta0", n)
    zdot = rd.complex_vector(init.get("zeta0_dot", [0] * n), "zeta0_dot", n)
    data = InitialData(zeta0, zdot, psi, pi)

    run = rd.get(raw, "run", dict)
    horizon = rd.get(run, "horizon", float, where="run.")
    if horizon <= 0:
        rd.fail("run.horizon must be positive", "horizon")
    try:
        params = SolverParams(
            dt=rd.get(run, "dt", float, 1e-3, "run."),
            fixed_point_tol=rd.get(run, "fixed_point_tol", float, 1e-12, "run."),
            max_fixed_point_iters=rd.get(run, "max_fixed_point_iters", int, 50, "run."),
            breakpoint_generations=rd.get(run, "breakpoint_generations", int, 3, "run."),
            truncation_enabled=rd.get(run, "truncation", bool, True, "run."),
            max_halvings=rd.get(run, "max_halvings", int, 10, "run."),
        )
    except ConfigurationError as exc:
        rd.fail(str(exc), "run")

    def times_list(obj, key):
        val = obj.get(key, [])
        if not isinstance(val, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool) for x in val):
            rd.fail(f"{key!r} must be a list of times", key)
        if any(x < 0 or x > horizon for x in val):
            rd.fail(f"{key!r} entries must lie in [0, horizon]", key)
        return tuple(float(x) for x in val)

    en_raw = raw.get("energy", {})
    if not isinstance(en_raw, dict):
        rd.fail("energy must be an object", "energy")
    energy = EnergySettings(
        times=times_list(en_raw, "times"),
        box_half_width=rd.get(en_raw, "box_half_width", float, None, "energy."),
        resolution=rd.get(en_raw, "resolution", int, 64, "energy."),
    )
    if energy.resolution < 4 or energy.resolution % 2:
        rd.fail("energy.resolution must be an even integer >= 4", "resolution")

    sn_raw = raw.get("snapshots", {})
    if not isinstance(sn_raw, dict):
        rd.fail("snapshots must be an object", "snapshots")
    snaps = SnapshotSettings(
        times=times_list(sn_raw, "times"),
        box_half_width=rd.get(sn_raw, "box_half_width", float, 3.0, "snapshots."),
        resolution=rd.get(sn_raw, "resolution", int, 16, "snapshots."),
        binary=rd.get(sn_raw, "binary", bool, False, "snapshots."),
    )
    residual_times = times_list(raw, "residual_times") if "residual_times" in raw else ()
    return Scenario(str(name), system, pot, data, horizon, params, energy, snaps, residual_times,
                    None, text)


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario: {exc.strerror}", None, str(path)) from None
    return parse_scenario(text, str(path))


def scenario_to_json(sc: Scenario) -> dict:
    """Resolved parameters in the same layout the loader accepts."""
    def cplx(z):
        return [float(np.real(z)), float(np.imag(z))]

    def gauss(gs):
        return [{"amplitude": cplx(g.amplitude), "center": list(g.center), "width": g.width} for g in gs]

    pot = sc.potential
    pot_json: dict = {"family": pot.family, "a": pot.coercivity_a, "b": pot.coercivity_b}
    if pot.family == "power":
        pot_json.update(gamma=list(pot.coefficients["gamma"]), sigma=list(pot.coefficients["sigma"]))
    elif pot.family == "polynomial":
        pot_json["coefficients"] = [list(r) for r in pot.coefficients["coefficients"]]
    p = sc.params
    return {
        "name": sc.name,
        "system": {"mass": sc.system.mass, "points": sc.system.points.tolist(), "eps_sep": sc.system.eps_sep},
        "potential": pot_json,
        "initial": {
            "zeta0": [cplx(z) for z in sc.data.zeta0],
            "zeta0_dot": [cplx(z) for z in sc.data.zeta0_dot],
            "psi0_reg": gauss(sc.data.psi0_reg),
            "pi0_reg": gauss(sc.data.pi0_reg),
        },
        "run": {
            "horizon": sc.horizon, "dt": p.dt, "fixed_point_tol": p.fixed_point_tol,
            "max_fixed_point_iters": p.max_fixed_point_iters,
            "breakpoint_generations": p.breakpoint_generations,
            "truncation": p.truncation_enabled, "max_halvings": p.max_halvings,
        },
        "energy": {"times": list(sc.energy.times), "box_half_width": sc.energy.box_half_width,
                   "resolution": sc.energy.resolution},
        "snapshots": {"times": list(sc.snapshots.times), "box_half_width": sc.snapshots.box_half_width,
                      "resolution": sc.snapshots.resolution, "binary": sc.snapshots.binary},
        "residual_times": list(sc.residual_times),
    }
