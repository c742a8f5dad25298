from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import integrate, special

from pointkg.errors import IndexContractError
from pointkg.freefield import FreeFieldEvaluator
from pointkg.model import Gaussian, InitialData, build_system
from pointkg.sources import SourceSet, cone_trapezoid, cone_trapezoid_many


def single_site(zeta0=1.0, zeta0_dot=0.0, mass=1.0):
    system = build_system(mass, [(0, 0, 0)])
    data = InitialData([zeta0], [zeta0_dot])
    return SourceSet(system, data, FreeFieldEvaluator((), (), mass))


def test_lambda_diag_at_zero():
    src = single_site()
    assert src.lambda_diag(0, 0.0) == pytest.approx(-1 / (4 * math.pi), rel=1e-15)
    assert src.lambda_diag(0, 0.0) == pytest.approx(-0.07957747154594767, rel=1e-15)


def test_lambda_diag_against_fine_trapezoid():
    src = single_site(zeta0=1.0 + 0.5j, zeta0_dot=0.3 - 0.2j)
    t = 0.5
    s = np.linspace(0, t, 10001)
    u = t - s
    kern = np.where(u > 0, special.j1(u) / np.where(u > 0, u, 1), 0.5)
    f = (1.0 + 0.5j) + s * (0.3 - 0.2j)
    tail = integrate.trapezoid(kern * f, s)
    ref = -((1.0 + 0.5j) + t * (0.3 - 0.2j) - (0.3 - 0.2j)) / (4 * math.pi) + tail / (4 * math.pi)
    assert abs(src.lambda_diag(0, t) - ref) < 1e-8


def test_lambda_cross_jump_at_light_cone():
    system = build_system(1.0, [(0, 0, 0), (0.7, 0, 0)])
    data = InitialData([0.4, 1.0 - 0.5j], [0.0, 0.0])
    src = SourceSet(system, data, FreeFieldEvaluator((), (), 1.0))
    d = 0.7
    before = src.lambda_cross(0, 1, d - 1e-10)
    after = src.lambda_cross(0, 1, d)
    assert after - before == pytest.approx(-(1.0 - 0.5j) / (4 * math.pi * d), rel=1e-8)
    with pytest.raises(IndexContractError):
        src.lambda_cross(1, 1, 1.0)


def test_symmetric_configuration_gives_equal_sources():
    system = build_system(1.0, [(-0.5, 0, 0), (0.5, 0, 0)])
    psi = (Gaussian(0.9, (0, 0, 0), 0.7),)
    data = InitialData([0.3, 0.3], [0.1j, 0.1j], psi)
    src = SourceSet(system, data, FreeFieldEvaluator(psi, (), 1.0))
    for t in (0.0, 0.4, 1.0, 2.5):
        assert src.lambda_total(0, t) == pytest.approx(src.lambda_total(1, t), abs=1e-13)


def test_regular_values_cached_and_batched():
    system = build_system(1.0, [(0, 0, 0)])
    psi = (Gaussian(1.0, (0.5, 0, 0), 1.0),)
    src = SourceSet(system, InitialData([1.0], [0.0], psi), FreeFieldEvaluator(psi, (), 1.0))
    times = np.array([0.0, 0.5, 1.0])
    many = src.lambda_reg_many(times)
    assert many[0, 0] == pytest.approx(math.exp(-0.125), rel=1e-12)
    assert all(src.lambda_reg(0, t) == many[0, i] for i, t in enumerate(times))


def test_cone_trapezoid_many_matches_scalar():
    nodes = np.concatenate([np.linspace(0, 1, 101), [1.0031], np.linspace(1.01, 2.0, 100)])
    f = np.exp(-nodes) * (1 + 1j * nodes)
    fn = lambda s: np.exp(-s) * (1 + 1j * s)
    t = 2.0
    radii = np.array([0.0, 0.003, 0.25, 0.5, 0.99, 1.7, 2.5])
    many = cone_trapezoid_many(t, radii, 1.3, nodes, f, fn(t - radii))
    for r, v in zip(radii, many):
        assert abs(v - cone_trapezoid(t, r, 1.3, nodes, f, fn(t - r))) < 1e-15
    assert many[-1] == 0.0


def test_cone_trapezoid_endpoint_on_node():
    # the last node lies on the cone; its kernel weight is m/2, not zero
    nodes = np.linspace(0, 1.5, 1501)
    ones = np.ones_like(nodes)
    val = cone_trapezoid(1.5, 0.001, 1.0, nodes, ones, 1.0)
    ref, _ = integrate.quad(lambda s: special.j1(math.sqrt((1.5 - s) ** 2 - 1e-6)) / math.sqrt((1.5 - s) ** 2 - 1e-6),
                            0, 1.499, epsabs=1e-13)
    assert abs(val - ref) < 1e-7


def test_zero_data_and_single_site_totals():
    src = single_site(zeta0=0.0)
    assert all(src.lambda_diag(0, t) == 0 for t in (0.0, 0.3, 2.0))
    src = single_site(zeta0=0.7 - 0.1j, zeta0_dot=0.2)
    for t in (0.0, 0.4, 1.9):
        assert src.lambda_total(0, t) == src.lambda_diag(0, t)


def test_zero_singular_data_gives_free_field():
    system = build_system(1.0, [(0, 0, 0), (1, 0, 0)])
    psi = (Gaussian(1.0, (0.5, 0, 0), 1.0),)
    free = FreeFieldEvaluator(psi, (), 1.0)
    src = SourceSet(system, InitialData([0, 0], [0, 0], psi), free)
    for t in (0.3, 1.2):
        assert src.lambda_total(1, t) == pytest.approx(free.value(system.points[1], t), abs=1e-15)


def test_cross_term_before_cone_is_closed_form():
    system = build_system(1.0, [(0, 0, 0), (2.0, 0, 0)])
    data = InitialData([0.4, 1.0 - 0.5j], [0.0, 0.3j])
    src = SourceSet(system, data, FreeFieldEvaluator((), (), 1.0))
    g = system.green.entries[0, 1]
    for t in (0.0, 0.7, 1.999):
        assert src.lambda_cross(0, 1, t) == (1.0 - 0.5j + t * 0.3j) * g


def test_diagonal_term_continuous_at_start():
    src = single_site(zeta0=1.0 + 0.5j, zeta0_dot=0.3 - 0.2j)
    scale = max(1.0, abs(src.lambda_diag(0, 0.0)))
    assert abs(src.lambda_diag(0, 1e-6) - src.lambda_diag(0, 0.0)) <= 1e-4 * scale


def test_assembled_rhs_continuous_across_cone(two_site_run):
    from pointkg.charges import ChargeProblem, plain_force, rhs

    sc, src, hist = two_site_run
    problem = ChargeProblem(sc.system, sc.data, sc.potential, src, plain_force(sc.potential))
    d, h = float(sc.system.distances[0, 1]), 1e-7
    at = {k: rhs(d + k * h, hist.eval(d + k * h, "left")[0], hist, problem) for k in (-2, -1, 1, 2)}
    scale = max(1.0, max(float(np.max(np.abs(v))) for v in at.values()))
    # linear one-sided extrapolation to t = d so that only a genuine jump is measured
    jump = np.max(np.abs((2 * at[1] - at[2]) - (2 * at[-1] - at[-2])))
    assert jump <= 1e-8 * scale
