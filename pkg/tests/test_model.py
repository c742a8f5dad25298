from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointkg.errors import CoercivityError, ConfigurationError
from pointkg.model import (
    Gaussian,
    InitialData,
    boundary_mismatch,
    build_system,
    coercivity_radius,
    consistent_charges,
    eval_potential,
    force_lipschitz_bound,
    polynomial_potential,
    power_potential,
    verify_coercivity,
    wirtinger_gradient_fd,
    yukawa,
)

complexes = st.builds(complex, st.floats(-2, 2), st.floats(-2, 2))


def test_yukawa_values():
    assert yukawa(1.0, 1.0) == pytest.approx(0.029274915762159537, rel=1e-15)
    assert yukawa(0.5, 2.0) == pytest.approx(math.exp(-1.0) / (2 * math.pi), rel=1e-15)
    assert yukawa(0.5, 2.0) == pytest.approx(0.05854983152431917, rel=1e-15)


def test_green_matrix_and_quadratic_form():
    sys = build_system(1.0, [(0, 0, 0), (1, 0, 0), (0, 2, 0)])
    g = sys.green.entries
    assert np.all(np.diag(g) == 0.0)
    assert np.array_equal(g, g.T)
    assert g[0, 1] == pytest.approx(math.exp(-1) / (4 * math.pi), rel=1e-15)
    z = np.array([1 + 1j, 2.0, -1j])
    expected = sum(g[j, k] * z[j] * np.conj(z[k]) for j in range(3) for k in range(3))
    q = sys.green.quadratic_form(z)
    assert q == pytest.approx(expected, rel=1e-14)
    assert abs(np.imag(q)) < 1e-15
    assert sys.pair_distances() == pytest.approx([1.0, 2.0, math.sqrt(5)])


def test_build_system_validation():
    with pytest.raises(ConfigurationError, match="eps_sep"):
        build_system(1.0, [(0, 0, 0), (0, 0, 1e-12)])
    with pytest.raises(ConfigurationError):
        build_system(-1.0, [(0, 0, 0)])
    with pytest.raises(ConfigurationError):
        build_system(1.0, [(0, 0)])


def test_power_potential_known_values():
    spec = power_potential([1.0], [1.0], a=0.0, b=1.0)
    u, f = eval_potential(spec, [1 + 1j])
    assert u == pytest.approx(2.0, rel=1e-15)
    assert f[0] == pytest.approx(2 + 2j, rel=1e-15)
    lin = power_potential([1.0], [0.0], a=0.0, b=1.0)
    u, f = eval_potential(lin, [0.3 - 0.4j])
    assert u == pytest.approx(0.25, rel=1e-15)
    assert f[0] == pytest.approx(0.3 - 0.4j, rel=1e-15)


def test_polynomial_potential_static_minimum():
    spec = polynomial_potential([[0.75, -1.0, 0.5]], a=1.5, b=1.0)
    u, f = eval_potential(spec, [1.0])
    assert u == pytest.approx(0.25, abs=1e-15)
    assert abs(f[0]) < 1e-15
    with pytest.raises(ConfigurationError):
        eval_potential(spec, [1.0, 2.0])


@settings(max_examples=60, deadline=None)
@given(st.lists(complexes, min_size=2, max_size=2), st.sampled_from([0.0, 0.5, 1.0, 2.0]))
def test_force_is_wirtinger_gradient(z, sigma):
    spec = power_potential([1.0, 0.7], [sigma, 1.0], a=0.0, b=1.0)
    z = np.asarray(z)
    _, f = eval_potential(spec, z)
    fd = wirtinger_gradient_fd(lambda v: eval_potential(spec, v)[0], z)
    assert np.allclose(f, fd, atol=1e-6 * (1 + np.max(np.abs(f))))


@settings(max_examples=40, deadline=None)
@given(st.lists(complexes, min_size=2, max_size=2))
def test_polynomial_force_is_wirtinger_gradient(z):
    spec = polynomial_potential([[0.0, 1.0, -0.5, 0.25], [1.0, 0.0, 2.0]], a=0.0, b=1.0)
    z = np.asarray(z)
    _, f = eval_potential(spec, z)
    fd = wirtinger_gradient_fd(lambda v: eval_potential(spec, v)[0], z)
    assert np.allclose(f, fd, atol=1e-6 * (1 + np.max(np.abs(f))))


def test_lipschitz_bound_dominates_sampled_differences():
    spec = power_potential([1.0, 1.0], [1.0, 1.0], a=0.0, b=1.0)
    radius = 1.5
    lip = force_lipschitz_bound(spec, radius)
    rng = np.random.default_rng(3)
    worst = 0.0
    for _ in range(2000):
        a = rng.normal(size=2) + 1j * rng.normal(size=2)
        b = rng.normal(size=2) + 1j * rng.normal(size=2)
        a *= radius * rng.uniform() / np.linalg.norm(a)
        b *= radius * rng.uniform() / np.linalg.norm(b)
        fa, fb = eval_potential(spec, a)[1], eval_potential(spec, b)[1]
        worst = max(worst, np.linalg.norm(fa - fb) / np.linalg.norm(a - b))
    assert worst <= lip
    # |z|^2 z has radial derivative 3 rho^2
    assert lip >= 3 * radius ** 2 * (1 - 1e-9)


def test_coercivity_radius_and_errors():
    # |z|^4/2 - |z|^2 + 1/2 = (|z|^2 - 1)^2 / 2 >= 0
    spec = power_potential([1.0], [1.0], a=0.5, b=1.0)
    assert coercivity_radius(spec, 1.5) == pytest.approx(math.sqrt(2.0))
    with pytest.raises(CoercivityError):
        coercivity_radius(spec, -1.0)
    sys1 = build_system(1.0, [(0, 0, 0)])
    assert verify_coercivity(spec, sys1.green, 3.0) >= 0
    bad = power_potential([1.0], [1.0], a=0.0, b=5.0)
    with pytest.raises(CoercivityError):
        verify_coercivity(bad, sys1.green, 1.0)


def test_gaussian_and_consistent_charges():
    g = Gaussian(2.0, (1.0, 0.0, 0.0), 0.5)
    assert g(np.array([1.0, 0.0, 0.0])) == 2.0
    assert g(np.array([1.5, 0.0, 0.0])) == pytest.approx(2.0 * math.exp(-0.5))
    sys1 = build_system(1.0, [(0, 0, 0)])
    lin = power_potential([1.0], [0.0], a=0.0, b=1.0)
    psi = (Gaussian(1.0, (0.5, 0.0, 0.0), 1.0),)
    z0 = consistent_charges(sys1, psi, lin)
    assert z0[0] == pytest.approx(math.exp(-0.125), rel=1e-13)
    data = InitialData(z0, [0j], psi)
    assert np.max(np.abs(boundary_mismatch(sys1, data, lin))) < 1e-13
    with pytest.raises(ConfigurationError):
        Gaussian(1.0, (0, 0, 0), 0.0)
    with pytest.raises(ConfigurationError):
        InitialData([1.0, 2.0], [0.0])


def test_single_site_green_and_reality_of_quadratic_form():
    assert np.array_equal(build_system(1.0, [(0, 0, 0)]).green.entries, np.zeros((1, 1)))
    sys4 = build_system(1.3, np.random.default_rng(2).uniform(-2, 2, (4, 3)))
    rng = np.random.default_rng(3)
    for _ in range(100):
        z = rng.normal(size=4) + 1j * rng.normal(size=4)
        assert abs(np.imag(sys4.green.quadratic_form(z))) <= 1e-14 * np.sum(np.abs(z) ** 2)


def test_coercivity_radius_arithmetic():
    assert coercivity_radius(power_potential([1.0], [1.0], a=0.0, b=1.0), 1.0) == 1.0
    assert coercivity_radius(power_potential([1.0], [1.0], a=1.0, b=4.0), 3.0) == 1.0


def test_static_radius_reproduces_energy():
    from pointkg.diagnostics import EnergyBox, initial_energy
    from pointkg.scenarios import static_scenario

    sc = static_scenario(horizon=1.0)
    h0 = initial_energy(sc, EnergyBox(8.0, 16))
    lam = coercivity_radius(sc.potential, h0)
    assert abs(lam ** 2 * sc.potential.coercivity_b - sc.potential.coercivity_a - h0) <= 1e-12
