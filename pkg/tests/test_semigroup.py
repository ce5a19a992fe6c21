import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.stats import poisson

from fracpar.coefficients import CoefficientField
from fracpar.grid import Field, Grid, apply_multiplier, l2_norm, random_field
from fracpar.operator import ParabolicOperator
from fracpar.semigroup import (SemigroupFamily, TruncationError, YosidaConfig, poisson_truncation, power_tail,
                               r_rule, semigroup_apply, semigroup_error_bound, semigroup_law_defect,
                               tail_radius, yosida_resolvent_step)

from conftest import rel


def test_poisson_truncation_threshold():
    for mu in (0.5, 7.0, 120.0):
        M, tail = poisson_truncation(mu, 1e-12, 10_000)
        assert poisson.sf(M, mu) < 1e-12 <= poisson.sf(M - 1, mu)
        assert math.isclose(tail, poisson.sf(M, mu), rel_tol=1e-6)
    with pytest.raises(TruncationError):
        poisson_truncation(1e4, 1e-12, 100)


def test_config_validation():
    with pytest.raises(ValueError):
        YosidaConfig(sigma=-1)
    with pytest.raises(ValueError):
        YosidaConfig(poisson_tail_tol=0.1)


def test_yosida_series_matches_symbol(heat_op):
    g = heat_op.grid
    u = random_field(g, 2, "smooth")
    sigma, r = 40.0, 0.3
    z = heat_op.symbol()
    exact = apply_multiplier(u, np.exp(-r * sigma * z / (sigma + z)))
    assert rel(semigroup_apply(heat_op, YosidaConfig(sigma=sigma), r, u).values, exact.values) < 1e-10


def test_yosida_error_bound_dominates(heat_op):
    g = heat_op.grid
    u = random_field(g, 2, "smooth")
    cfg = YosidaConfig(sigma=30.0)
    z = heat_op.symbol()
    for r in (0.1, 0.5):
        exact = apply_multiplier(u, np.exp(-r * z))
        err = l2_norm(semigroup_apply(heat_op, cfg, r, u) - exact)
        assert err <= semigroup_error_bound(heat_op, cfg, r, u)


def test_family_matches_exact_semigroup(heat_op):
    u = random_field(heat_op.grid, 5, "smooth")
    fam = SemigroupFamily(heat_op, u)
    z = heat_op.symbol()
    for r in (0.0, 1e-3, 0.1, 1.0, 10.0):
        exact = apply_multiplier(u, np.exp(-r * z)).values
        assert np.linalg.norm(fam.apply(r).values - exact) <= 1e-9 * np.linalg.norm(u.values)


def test_family_matches_direct_route_variable_coefficients():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.builtin("rotating-nonsymmetric", g))
    u = random_field(g, 7, "smooth", kmax=3)
    fam = SemigroupFamily(op, u, sigma=25.0)
    direct = semigroup_apply(op, YosidaConfig(sigma=25.0), 0.4, u)
    assert rel(fam.apply(0.4).values, direct.values) < 1e-8


def test_family_fixes_constants(heat_op):
    one = Field.constant(heat_op.grid, 2.0)
    fam = SemigroupFamily(heat_op, one)
    assert fam.dim == 0
    assert np.allclose(fam.apply(3.0).values, 2.0)


def test_law_defect_within_bound():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.builtin("rotating-nonsymmetric", g))
    d = semigroup_law_defect(op, YosidaConfig(sigma=15.0), 0.2, 0.3, random_field(g, 1, "smooth", kmax=3))
    assert d.defect <= d.bound
    assert d.contraction_excess <= 1e-9


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 5000), r=st.floats(0.0, 2.0))
def test_contraction_property(seed, r):
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.builtin("anisotropic", g))
    u = random_field(g, seed, "full")
    out = semigroup_apply(op, YosidaConfig(sigma=10.0), r, u)
    assert l2_norm(out) <= l2_norm(u) * (1 + 1e-9)


def test_power_tail_against_incomplete_gamma():
    # lam^{p-1} Gamma(1-p, R lam) from mpmath at 30 digits, p = 1.3, R = 26.6
    lam = np.array([2.0, 0.5 + 3j])
    R = tail_radius(lam, 1.3)
    assert R == 26.6
    expected = np.array([5.39332032805297202620e-26, 6.79943564393948616175e-09 + 3.63980411200394903600e-09j])
    assert np.allclose(power_tail(1.3, lam, R), expected, rtol=1e-11, atol=0)


def test_r_rule_integrates_exponentials():
    lam = np.array([0.01, 1.0, 40.0 + 10j])
    rule = r_rule(lam, 1e-6, 50.0)
    for l in lam:
        got = np.sum(rule.weights * np.exp(-rule.nodes * l))
        exact = (np.exp(-1e-6 * l) - np.exp(-50.0 * l)) / l
        assert abs(got - exact) <= 1e-12 * abs(exact)


def _mode_setup(kt=1, kx=2):
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g))
    u = Field.mode(g, kt, kx)
    return op, u, op.symbol()[kt, kx]


def test_resolvent_step_single_mode():
    op, u, z = _mode_setup()
    got = yosida_resolvent_step(op, YosidaConfig(sigma=3.0), u)
    assert np.allclose(got.values, 3.0 / (3.0 + z) * u.values, atol=1e-10)
    far = yosida_resolvent_step(op, YosidaConfig(sigma=1e4), u)
    assert l2_norm(far - u) / l2_norm(u) <= abs(z) / 1e4


def test_resolvent_step_fixes_constants(heat_op):
    one = Field.constant(heat_op.grid, 1.0)
    assert np.allclose(yosida_resolvent_step(heat_op, YosidaConfig(sigma=2.0), one).values, 1.0)


def test_poisson_truncation_at_mu_4():
    # brute-force CDF scan: first M with tail below 1e-12 is 25
    M, tail = poisson_truncation(4.0, 1e-12, 1000)
    assert M == 25 and math.isclose(tail, 2.398510212133836e-13, rel_tol=1e-6)


def test_semigroup_identity_and_constants(heat_op):
    u = random_field(heat_op.grid, 3)
    cfg = YosidaConfig(sigma=5.0)
    assert semigroup_apply(heat_op, cfg, 0.0, u) is u
    one = Field.constant(heat_op.grid, 1.5)
    assert np.allclose(semigroup_apply(heat_op, cfg, 0.7, one).values, 1.5)
    with pytest.raises(ValueError):
        semigroup_apply(heat_op, cfg, -1.0, u)


def test_single_mode_yosida_rate():
    op, u, z = _mode_setup()
    errs = []
    for sigma in (100.0, 200.0):
        r = 4.0 / sigma
        out = semigroup_apply(op, YosidaConfig(sigma=sigma), r, u)
        errs.append(l2_norm(out - u * np.exp(-r * z)) / l2_norm(u))
    assert errs[0] * sigma < 10 and errs[1] < errs[0]


def test_error_bound_single_mode_and_rate():
    op, u, z = _mode_setup()
    b1 = semigroup_error_bound(op, YosidaConfig(sigma=50.0), 1.0, u)
    assert math.isclose(b1, abs(z) ** 2 / abs(50.0 + z) * l2_norm(u), rel_tol=1e-8)
    assert b1 <= abs(z) ** 2 / 50.0 * l2_norm(u)
    b2 = semigroup_error_bound(op, YosidaConfig(sigma=100.0), 1.0, u)
    assert abs(b1 / b2 - 2.0) < 0.2
    assert semigroup_error_bound(op, YosidaConfig(sigma=50.0), 1.0, Field.constant(op.grid, 1.0)) < 1e-14
