from __future__ import annotations

import math

import numpy as np
import pytest

from pointkg.diagnostics import (
    EnergyBox,
    apriori_check,
    check_box,
    convergence_study,
    default_box,
    energy,
    energy_series,
    initial_energy,
)
from pointkg.errors import ConfigurationError
from pointkg.model import build_system, coercivity_radius
from pointkg.scenarios import linear_scenario, static_scenario, two_site_scenario, zero_scenario


@pytest.fixture(scope="module")
def static_run():
    sc = static_scenario(horizon=2.0)
    src = sc.sources()
    return sc, src, sc.solve(sources=src)


def test_static_energy_is_potential_only(static_run):
    sc, src, hist = static_run
    rep = energy_series([0.0, 1.0, 2.0], hist, src, sc.potential, EnergyBox(8.0, 16))
    assert np.max(np.abs(np.array(rep.total) - 0.25)) <= 1e-10
    assert max(rep.kinetic) == 0.0


def test_zero_energy_vanishes():
    sc = zero_scenario(horizon=1.0)
    src = sc.sources()
    hist = sc.solve(sources=src)
    rep = energy_series([0.0, 1.0], hist, src, sc.potential, EnergyBox(8.0, 16))
    assert rep.total == [0.0, 0.0]


def test_total_is_sum_of_parts(linear_run):
    sc, src, hist = linear_run
    row = energy(1.0, hist, src, sc.potential, EnergyBox(8.0, 32))
    assert row.total == row.kinetic + row.gradient + row.mass_term + row.potential
    assert row.est_error > 0


def test_threads_do_not_change_results(linear_run):
    sc, src, hist = linear_run
    a = energy(1.5, hist, src, sc.potential, EnergyBox(8.0, 32), threads=1)
    b = energy(1.5, hist, src, sc.potential, EnergyBox(8.0, 32), threads=3)
    assert a == b


def test_initial_energy_matches_solved_history(linear_run):
    sc, src, hist = linear_run
    box = EnergyBox(8.0, 32)
    assert initial_energy(sc, box, sources=src) == energy(0.0, hist, src, sc.potential, box).total


def test_box_rules():
    system = build_system(1.0, [(0, 0, 0), (1.5, 0, 0)])
    assert default_box(system, 3.0).half_width == pytest.approx(8.0)
    assert default_box(system, 10.0).half_width == pytest.approx(13.5)
    with pytest.raises(ConfigurationError):
        check_box(EnergyBox(6.0, 32), system, 1.0)
    check_box(EnergyBox(6.5, 32), system, 1.0)


def test_apriori_check_static(static_run):
    sc, src, hist = static_run
    radius = coercivity_radius(sc.potential, 0.25)
    assert radius == pytest.approx(math.sqrt(1.75))
    rep = apriori_check(hist, radius)
    assert rep.passed and rep.max_charge == pytest.approx(1.0, abs=1e-12)
    zero = apriori_check(zero_scenario(horizon=0.5).solve(), 0.7)
    assert zero.max_charge == 0.0 and zero.passed


def test_convergence_study_validation_and_saturation():
    sc = static_scenario(horizon=1.0)
    with pytest.raises(ConfigurationError):
        convergence_study(sc, [4e-3, 2e-3])
    with pytest.raises(ConfigurationError):
        convergence_study(sc, [4e-3, 2e-3, 5e-4])
    rep = convergence_study(sc, [4e-3, 2e-3, 1e-3])
    assert rep.status == "saturated"
    assert "saturated" in rep.table()


def test_drift_improves_with_resolution():
    drifts = []
    for dt, res in ((2e-3, 32), (1e-3, 64)):
        sc = linear_scenario(horizon=2.0, dt=dt)
        src = sc.sources()
        hist = sc.solve(sources=src)
        drifts.append(energy_series(np.linspace(0, 2, 5), hist, src, sc.potential, EnergyBox(8.0, res)).relative_drift())
    assert drifts[1] < drifts[0]


@pytest.mark.slow
def test_two_site_energy_drift():
    sc = two_site_scenario()
    src = sc.sources()
    hist = sc.solve(sources=src)
    box = EnergyBox(sc.energy.box_half_width, sc.energy.resolution)
    rep = energy_series(sc.energy.times, hist, src, sc.potential, box, threads=4)
    assert rep.relative_drift() <= 1e-3
