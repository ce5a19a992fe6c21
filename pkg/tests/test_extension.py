import math

import numpy as np
import pytest
from scipy.special import gamma, kv

from fracpar.coefficients import CoefficientField
from fracpar.extension import (AugmentedCoefficients, ExtensionProfile, LadderDivergence, bump,
                               default_ladder, dtn_limit, dtn_quotient_symbol, extension_profile,
                               profile_symbol, profile_weight_total, reflect_even, richardson_exponents,
                               solve_extension_bvp, weak_residual, weighted_energy_norm,
                               weighted_hat_weights)
from fracpar.extension import TestFunction as TF
from fracpar.fractional import QuadratureSpec, c_s, hs_fourier
from fracpar.grid import Field, Grid, energy_norm, l2_norm, random_field, sup_norm
from fracpar.operator import ParabolicOperator

from conftest import rel


def bessel_profile(z, s, lam):
    x = lam * np.sqrt(z)
    return 2.0 / gamma(s) * (x / 2) ** s * kv(s, x)


def test_profile_symbol_frozen_value():
    # mpmath, 30 digits: (2/Gamma(s)) (x/2)^s K_s(x), x = 0.7 sqrt(1+i), s = 0.3
    got = profile_symbol(np.array([1 + 1j]), 0.3, 0.7)[0]
    assert abs(got - (0.28516365504714822725 - 0.1130878565096677717j)) < 1e-12


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_profile_symbol_matches_bessel(s):
    z = np.array([1e-3, 0.5, 3.0 + 2j, 40.0 - 15j, 400.0])
    for lam in (0.01, 0.3, 2.0):
        assert np.allclose(profile_symbol(z, s, lam), bessel_profile(z, s, lam), rtol=1e-10, atol=1e-14)


def test_gauss_laguerre_scheme_agrees():
    z = np.array([0.5, 2.0 + 1j, 10.0])
    for s in (0.3, 0.7):
        for lam in (0.5, 2.0):
            ref = bessel_profile(z, s, lam)
            e32, e128 = (np.max(np.abs(profile_symbol(z, s, lam, "gauss-laguerre", n) / ref - 1))
                         for n in (32, 128))
            # slow convergence: exp(-a/tau) is not smooth at tau = 0
            assert e128 < e32 / 2 and e128 < 1e-2
    with pytest.raises(ValueError):
        profile_symbol(z, 0.5, 1.0, "midpoint")


def test_weight_total_is_one():
    for s in (0.1, 0.5, 0.9):
        for lam in (1e-3, 0.5, 8.0):
            assert abs(profile_weight_total(s, lam) - 1.0) < 1e-10
        assert abs(profile_weight_total(s, 1.0, "gauss-laguerre") - 1.0) < 1e-12


def test_quotient_symbol_limit():
    z = np.array([0.5, 3.0 + 1j])
    for s in (0.25, 0.75):
        q = dtn_quotient_symbol(z, s, 1e-8)
        # plain quotient tends to c_s z^s / (2s)
        assert np.allclose(2 * s * q, c_s(s) * z ** s, rtol=2e-3)


def test_constant_profile_is_constant(heat_op):
    one = Field.constant(heat_op.grid, 1.0)
    p = extension_profile(heat_op, one, 0.4, [0.01, 1.0, 5.0])
    assert max(sup_norm(v - one) for v in p.slices) < 1e-12


def test_profile_matches_fourier_symbol(heat_op):
    u = random_field(heat_op.grid, 3, "smooth")
    z = heat_op.symbol()
    p = extension_profile(heat_op, u, 0.5, [0.1, 1.0])
    for lam, v in zip(p.lambdas, p.slices):
        ref = np.fft.ifftn(np.fft.fftn(u.values) * bessel_profile(np.where(z == 0, 1e-300, z), 0.5, lam))
        assert rel(v.values, ref) < 1e-8


def test_profile_norms_decrease(heat_op):
    u = random_field(heat_op.grid, 4, "smooth")
    u = u - Field.constant(u.grid, np.mean(u.values))
    n = extension_profile(heat_op, u, 0.5).slice_norms()
    assert np.all(np.diff(n) <= 1e-12)


def test_default_ladder():
    lad = default_ladder()
    assert lad[0] == 1e-3 and lad[-1] <= 8.0 and lad[-1] * math.sqrt(2) > 8.0
    assert np.allclose(lad[1:] / lad[:-1], math.sqrt(2))


def test_richardson_exponents():
    assert richardson_exponents(0.25, 4) == [1.5, 2.0, 3.5, 4.0]
    # 2 - 2s and 2 merge for s near 0
    assert richardson_exponents(0.01, 2) == [1.98, 3.98]


@pytest.mark.parametrize("s", [0.25, 0.5, 0.75])
def test_dtn_limit_matches_fractional_power(heat_op, s):
    u = random_field(heat_op.grid, 5, "smooth")
    ref = hs_fourier(u, s, heat_op) * c_s(s)
    r = dtn_limit(heat_op, u, s)
    assert l2_norm(r.field - ref) / l2_norm(ref) < 1e-3
    assert np.all(np.diff(r.ladder_errors(ref)) < 0)
    assert r.flux_constant > 0


def test_dtn_ladder_divergence(heat_op):
    u = random_field(heat_op.grid, 5, "full")
    # a ladder that grows instead of shrinking cannot contract
    with pytest.raises(LadderDivergence):
        dtn_limit(heat_op, u, 0.5, lambda0=1e-3, ratio=0.25, rungs=4)


def test_hat_weights_exact():
    # int_{0.5}^{2} lambda^{1/2} d lambda, s = 0.25
    w = weighted_hat_weights(np.linspace(0.5, 2.0, 7), 0.25)
    assert math.isclose(w.sum(), 1.64991582276861089, rel_tol=1e-14)
    x = np.array([-1.0, -0.5, 0.0, 0.5, 1.0])
    w2 = weighted_hat_weights(x, 0.5)
    assert np.allclose(w2, w2[::-1]) and math.isclose(w2.sum(), 2.0)
    with pytest.raises(ValueError):
        weighted_hat_weights(np.array([-1.0, 1.0]), 0.5)


def test_weighted_energy_norm_of_constant(heat_op):
    one = Field.constant(heat_op.grid, 1.0)
    p = reflect_even(extension_profile(heat_op, one, 0.5, np.linspace(0.1, 1.0, 10)))
    # unit weight at s = 1/2; nodes cover [-1, -0.1] and [0.1, 1]
    assert math.isclose(weighted_energy_norm(p, (-1.0, 1.0)), energy_norm(one) * math.sqrt(1.8), rel_tol=1e-10)


def _profile(op, u, s, n, lmax=2.0):
    lams = np.linspace(lmax / n, lmax, n)
    return reflect_even(extension_profile(op, u, s, lams))


def test_weak_residual_converges_away_from_zero(heat_op):
    u = random_field(heat_op.grid, 6, "smooth", kmax=3)
    phi, dphi = bump(0.8, 0.4)
    tf = TF(phi, dphi, random_field(heat_op.grid, 9, "smooth", kmax=3), (0.4, 1.2))
    r = [weak_residual(_profile(heat_op, u, 0.5, n), heat_op, 0.5, [tf]) for n in (40, 80, 160)]
    assert r[2] < r[1] < r[0] and r[2] < 1e-3


def test_weak_residual_across_zero_needs_flux_term(heat_op):
    u = random_field(heat_op.grid, 6, "smooth", kmax=3)
    s = 0.5
    phi, dphi = bump(0.0, 0.5)
    tf = TF(phi, dphi, random_field(heat_op.grid, 9, "smooth", kmax=3), (-0.5, 0.5))
    p = _profile(heat_op, u, s, 200)
    flux = hs_fourier(u, s, heat_op) * c_s(s)
    without = weak_residual(p, heat_op, s, [tf])
    with_term = weak_residual(p, heat_op, s, [tf], dtn_field=flux)
    assert with_term < 0.05 * without
    trad = weak_residual(p, heat_op, s, [tf], traditional=True, dtn_field=flux)
    assert abs(trad - with_term) < 1e-8


def test_bvp_matches_profile():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g), solver_tol=1e-10)
    u = random_field(g, 2, "smooth", kmax=3)
    errs = []
    for n in (64, 256):
        b = solve_extension_bvp(op, u, 0.5, 2.0, n)
        ref = extension_profile(op, u, 0.5, b.lambdas)
        errs.append(max(l2_norm(x - y) for x, y in zip(b.slices, ref.slices)) / l2_norm(u))
    assert errs[1] < errs[0] / 4 and errs[1] < 1e-3
    with pytest.raises(ValueError):
        solve_extension_bvp(op, u, 0.5, 2.0, 8)


def test_profile_archive_roundtrip(tmp_path, heat_op):
    u = random_field(heat_op.grid, 1, "smooth")
    p = extension_profile(heat_op, u, 0.3, [0.5, 1.0])
    p.save(tmp_path / "prof", digest="abc")
    q = ExtensionProfile.load(tmp_path / "prof")
    assert q.s == 0.3 and np.array_equal(q.lambdas, p.lambdas) and q.meta["config_digest"] == "abc"
    assert all(np.array_equal(a.values, b.values) for a, b in zip(p.slices, q.slices))
    with pytest.raises(ValueError):
        ExtensionProfile(0.3, np.array([1.0, 0.5]), p.slices, u)


def test_augmented_coefficients():
    g = Grid(2, 8, 8)
    aug = AugmentedCoefficients(CoefficientField.builtin("rotating-nonsymmetric", g), 0.3)
    rep = aug.check()
    assert rep["ok"] and aug.matrices().shape[-2:] == (3, 3)
    assert math.isclose(aug.weight(-2.0), 2.0 ** 0.4)


def test_half_profile_is_exponential():
    z = np.array([0.3, 2.0 + 1j, 25.0])
    for lam in (0.1, 1.0, 3.0):
        assert np.allclose(profile_symbol(z, 0.5, lam), np.exp(-lam * np.sqrt(z)), rtol=1e-11)


def test_dtn_single_mode_half():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g))
    u = Field.mode(g, 1, 2)
    z = op.symbol()[1, 2]
    r = dtn_limit(op, u, 0.5)
    assert np.allclose(r.field.values, np.sqrt(z) * u.values, rtol=0, atol=1e-3 * abs(np.sqrt(z)))


def test_dtn_constant_and_flux_constant(heat_op):
    one = Field.constant(heat_op.grid, 1.0)
    assert l2_norm(dtn_limit(heat_op, one, 0.3).field) < 1e-13
    u = random_field(heat_op.grid, 5, "smooth")
    r = dtn_limit(heat_op, u, 0.3)
    nu, nhu = l2_norm(u), l2_norm(heat_op.apply(u))
    for q, h in zip(r.quotients, r.heights):
        assert l2_norm(q) <= r.flux_constant * (nu + nhu * max(1.0, h ** 1.4)) * (1 + 1e-12)


def test_reflection_symmetry(heat_op):
    u = random_field(heat_op.grid, 2, "smooth")
    p = reflect_even(extension_profile(heat_op, u, 0.5, np.linspace(0.1, 1.0, 10)))
    n = p.lambdas.size
    assert np.array_equal(p.lambdas, -p.lambdas[::-1]) and p.lambdas[n // 2] == 0
    assert all(p.slices[i] is p.slices[n - 1 - i] for i in range(n))
    d = np.gradient(np.array([v.values for v in p.slices]), p.lambdas, axis=0)
    assert np.allclose(d, -d[::-1])
    assert reflect_even(extension_profile(heat_op, u, 0.5, [0.5, 1.0]), include_zero=False).lambdas.size == 4


def test_weighted_norm_closed_form_and_refinement(heat_op):
    # constant field of unit L2 norm, s = 0.25: weight lambda^{1/2} on [0.5, 2]
    one = Field.constant(heat_op.grid, 1.0 / math.sqrt(heat_op.grid.Lx * heat_op.grid.Lt))
    p = reflect_even(extension_profile(heat_op, one, 0.25, np.linspace(0.5, 2.0, 7)))
    assert math.isclose(weighted_energy_norm(p, (0.5, 2.0)), math.sqrt(1.64991582276861089), rel_tol=1e-12)
    u = random_field(heat_op.grid, 3, "smooth")
    a, b = (weighted_energy_norm(_profile(heat_op, u, 0.5, n), (0.2, 2.0)) for n in (40, 80))
    assert abs(a / b - 1) < 0.05


def test_weak_residual_trivial_cases(heat_op):
    phi, dphi = bump(0.8, 0.3)
    tf = TF(phi, dphi, random_field(heat_op.grid, 9, "smooth"), (0.5, 1.1))
    zero = Field.zeros(heat_op.grid)
    pz = reflect_even(extension_profile(heat_op, zero, 0.5, np.linspace(0.1, 2.0, 20)))
    assert weak_residual(pz, heat_op, 0.5, [tf]) == 0.0
    one = Field.constant(heat_op.grid, 2.0)
    pc = reflect_even(extension_profile(heat_op, one, 0.5, np.linspace(0.1, 2.0, 20)))
    assert weak_residual(pc, heat_op, 0.5, [tf]) < 1e-13


@pytest.mark.parametrize("s", [0.25, 0.75])
def test_bvp_route_agreement(s):
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g), solver_tol=1e-10)
    u = random_field(g, 2, "smooth", kmax=3)
    b = solve_extension_bvp(op, u, s, 2.0, 256)
    ref = extension_profile(op, u, s, b.lambdas)
    assert max(l2_norm(x - y) for x, y in zip(b.slices, ref.slices)) / l2_norm(u) < 5e-3


def test_bvp_constant_profile():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g))
    one = Field.constant(g, 1.0)
    b = solve_extension_bvp(op, one, 0.4, 2.0, 32)
    assert max(sup_norm(v - one) for v in b.slices) < 1e-10
