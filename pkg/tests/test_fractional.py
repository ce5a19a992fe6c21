import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracpar.coefficients import CoefficientField
from fracpar.fractional import (QuadratureSpec, QuadratureWarning, c_s, fractional_symbol, graph_norm,
                                hs_balakrishnan, hs_fourier, hs_semigroup, kato_ratio, semigroup_hs_symbol)
from fracpar.grid import Field, Grid, l2_norm, random_field
from fracpar.operator import ParabolicOperator
from fracpar.semigroup import YosidaConfig

from conftest import rel


@pytest.mark.parametrize("s,expected", [(0.25, 0.47798879748612499536), (0.5, 1.0),
                                        (0.75, 2.0920992401062032979), (0.1, 0.19557356719531744193)])
def test_c_s_values(s, expected):
    # reference values computed with mpmath at 30 digits
    assert math.isclose(c_s(s), expected, rel_tol=1e-14)


def test_c_s_positive_and_continuous():
    ss = np.linspace(0.01, 0.99, 99)
    vals = np.array([c_s(s) for s in ss])
    assert np.all(vals > 0) and np.all(np.diff(vals) > 0)
    with pytest.raises(ValueError):
        c_s(1.0)


def test_single_mode_is_eigenfunction():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g))
    u = Field.mode(g, 2, 3)
    z = 1j * 2 + (2 * math.sin(3 * g.dx / 2) / g.dx) ** 2
    for s in (0.3, 0.5):
        assert np.allclose(hs_fourier(u, s, op).values, z ** s * u.values, atol=1e-12)


@settings(max_examples=20, deadline=None)
@given(a=st.floats(0.05, 0.9), b=st.floats(0.05, 0.9), seed=st.integers(0, 1000))
def test_exponent_law(a, b, seed):
    g = Grid(1, 16, 16)
    u = random_field(g, seed, "smooth", kmax=3)
    lhs = hs_fourier(hs_fourier(u, a), b)
    rhs = hs_fourier(u, a + b)
    assert np.linalg.norm(lhs.values - rhs.values) <= 1e-10 * max(np.linalg.norm(rhs.values), 1e-300)


def test_s_equal_one_reproduces_operator():
    g = Grid(2, 8, 8)
    op = ParabolicOperator(CoefficientField.constant(g, [[1.5, 0.2], [0.1, 0.8]]))
    u = random_field(g, 3)
    assert rel(hs_fourier(u, 1.0, op).values, op.apply(u).values) < 1e-12


@pytest.mark.parametrize("scheme,nodes,tol", [("log-trapezoid", 200, 1e-10), ("gauss-jacobi", 120, 1e-8)])
def test_balakrishnan_matches_fourier(scheme, nodes, tol):
    g = Grid(1, 32, 32)
    op = ParabolicOperator(CoefficientField.identity(g))
    u = random_field(g, 4, "smooth")
    for s in (0.2, 0.6, 0.9):
        f = hs_fourier(u, s, op)
        assert rel(hs_balakrishnan(op, u, s, QuadratureSpec(scheme, nodes)).values, f.values) < tol


def test_balakrishnan_warns_on_coarse_rule():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g))
    with pytest.warns(QuadratureWarning):
        hs_balakrishnan(op, random_field(g, 1), 0.5, QuadratureSpec("log-trapezoid", 16, lower=-2.0, upper=2.0))


def test_semigroup_route_matches_fourier():
    g = Grid(1, 32, 32)
    op = ParabolicOperator(CoefficientField.identity(g))
    u = random_field(g, 4, "smooth")
    for s in (0.25, 0.75):
        assert rel(hs_semigroup(op, u, s).values, hs_fourier(u, s, op).values) < 1e-8


def test_routes_agree_for_variable_coefficients():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.builtin("rotating-nonsymmetric", g), solver_tol=1e-11)
    u = random_field(g, 8, "smooth", kmax=3)
    b = hs_balakrishnan(op, u, 0.5)
    sg = hs_semigroup(op, u, 0.5)
    assert rel(sg.values, b.values) < 1e-6


def test_semigroup_symbol_against_closed_form():
    lam = np.array([0.3, 2.0 + 1j, 50.0])
    for s in (0.25, 0.5, 0.75):
        assert np.allclose(semigroup_hs_symbol(lam, s)[0], lam ** s, rtol=1e-9)


def test_constants_are_annihilated():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g))
    one = Field.constant(g, 3.0)
    for route in (lambda: hs_fourier(one, 0.4, op), lambda: hs_balakrishnan(op, one, 0.4),
                  lambda: hs_semigroup(op, one, 0.4)):
        assert np.max(np.abs(route().values)) < 1e-12


def test_fractional_symbol_branch():
    z = np.array([0.0, 1j, -1j + 1e-30, 4.0])
    out = fractional_symbol(z, 0.5)
    assert out[0] == 0 and np.isclose(out[1], np.exp(1j * np.pi / 4)) and np.isclose(out[3], 2.0)


def test_kato_ratio_bounds():
    g = Grid(1, 32, 32)
    for seed in range(3):
        rep = kato_ratio(random_field(g, seed, "full"))
        assert 2 ** -0.25 - 1e-10 <= rep.mode_min <= rep.ratio <= rep.mode_max <= 1 + 1e-10


def test_graph_norm():
    g = Grid(1, 8, 8)
    u = random_field(g, 1)
    h = hs_fourier(u, 0.5)
    assert math.isclose(graph_norm(u, h), l2_norm(u) + l2_norm(h))


def test_pure_time_mode_branch():
    g = Grid(1, 16, 16)
    u = Field.mode(g, 3, 0)
    out = hs_fourier(u, 0.5)
    assert np.allclose(out.values, math.sqrt(3) * np.exp(1j * math.pi / 4) * u.values, atol=1e-12)


def test_balakrishnan_near_one():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g))
    u = random_field(g, 2, "smooth", kmax=3)
    hu = op.apply(u).values
    e95, e99 = (rel(hs_balakrishnan(op, u, s).values, hu) for s in (0.95, 0.99))
    # linear in 1 - s, so the distance at s = 0.999 is about e99 / 10 < 1%
    assert e99 < 0.02 and abs(e95 / e99 - 5.0) < 0.5
    with pytest.raises(ValueError):
        hs_balakrishnan(op, u, 0.999)


def test_semigroup_route_refines_with_sigma():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g))
    u = random_field(g, 2, "smooth", kmax=3)
    ref = hs_fourier(u, 0.5, op).values
    e = [rel(hs_semigroup(op, u, 0.5, YosidaConfig(sigma=sg)).values, ref) for sg in (200.0, 400.0)]
    assert e[1] < e[0]
