import math

import numpy as np
import pytest

from fracpar.coefficients import CoefficientField
from fracpar.grid import Field, Grid, l2_norm, random_field
from fracpar.kernels import (apply_resolvent_kernel, chapman_kolmogorov_defect, fundamental_solution_column,
                             gaussian_bound_fit, kernel_matrix, periodic_heat_kernel, resolvent_kernel,
                             total_mass, yosida_series_kernel_check)
from fracpar.operator import ParabolicOperator

from conftest import rel


@pytest.fixture(scope="module")
def heat64():
    g = Grid(1, 64, 64)
    return ParabolicOperator(CoefficientField.identity(g))


def test_conservation_and_positivity():
    g = Grid(2, 16, 16)
    op = ParabolicOperator(CoefficientField.builtin("anisotropic", g))
    col = fundamental_solution_column(op, ((3, 5), 2))
    assert np.max(np.abs(col.spatial_mass()[col.causal_mask] - 1.0)) < 1e-10
    assert np.min(col.values.values) >= 0
    # nothing before the source within the period
    assert not col.causal_mask[2] and np.all(col.values.values[2] == 0)


def test_lags():
    g = Grid(1, 8, 8)
    op = ParabolicOperator(CoefficientField.identity(g))
    col = fundamental_solution_column(op, (0, 6))
    assert np.allclose(col.lags() / g.dt, [2, 3, 4, 5, 6, 7, 8, 1])


def test_heat_kernel_convergence():
    errs = []
    for n, sub in ((64, 1), (128, 4)):
        g = Grid(1, n, n)
        op = ParabolicOperator(CoefficientField.identity(g))
        src = (n // 2, 0)
        col = fundamental_solution_column(op, src, t_horizon=2.0, substeps=sub)
        ref = periodic_heat_kernel(g, src)
        j = int(round(1.0 / g.dt))
        errs.append(np.max(np.abs(col.values.values[j] - ref[j])) / np.max(ref[j]))
    assert errs[1] < errs[0] / 2 and errs[1] < 0.02


def test_horizon_validation(heat64):
    with pytest.raises(ValueError):
        fundamental_solution_column(heat64, (0, 0), t_horizon=heat64.grid.Lt)
    with pytest.raises(ValueError):
        fundamental_solution_column(heat64, (64, 0))


def test_complex_coefficients_rejected():
    g = Grid(1, 8, 8)
    op = ParabolicOperator(CoefficientField.constant(g, [[1.0 + 0.1j]]))
    with pytest.raises(ValueError):
        fundamental_solution_column(op, (0, 0))


@pytest.mark.parametrize("scale,expected", [(1.0, 0.25), (2.0, 0.125)])
def test_gaussian_constant(scale, expected):
    g = Grid(1, 128, 128)
    op = ParabolicOperator(CoefficientField.identity(g, scale))
    fit = gaussian_bound_fit(fundamental_solution_column(op, (64, 0), t_horizon=2.0, substeps=4))
    assert abs(fit.c / expected - 1) < 0.1
    assert fit.dominance >= 0.99 and fit.C > 0 and fit.violations < 0.01 * fit.points


def test_chapman_kolmogorov_first_order(heat64):
    d1 = chapman_kolmogorov_defect(heat64, 32, 0.0, 0.3, 0.7, 16)
    d2 = chapman_kolmogorov_defect(heat64, 32, 0.0, 0.3, 0.7, 32)
    assert 0.4 < d2 / d1 < 0.6
    assert d2 < 0.01


def test_resolvent_kernel_matches_resolvent_solve():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.builtin("anisotropic", g), "backward", solver_tol=1e-12)
    u = random_field(g, 4, "full")
    for sigma in (0.5, 5.0):
        got = apply_resolvent_kernel(op, sigma, u)
        ref = op.resolvent_solve(sigma, u) * sigma
        assert rel(got.values, ref.values) < 1e-9


def test_resolvent_power_composes():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g), "backward")
    u = random_field(g, 1)
    two = apply_resolvent_kernel(op, 3.0, u, 2)
    once = apply_resolvent_kernel(op, 3.0, apply_resolvent_kernel(op, 3.0, u), 1)
    assert rel(two.values, once.values) < 1e-13


def test_resolvent_single_mode():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g), "backward")
    u = Field.mode(g, 1, 2)
    z = op.symbol()[1, 2]
    got = apply_resolvent_kernel(op, 4.0, u, 2)
    assert np.allclose(got.values, (4.0 / (4.0 + z)) ** 2 * u.values, atol=1e-12)


def test_resolvent_kernel_column():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g), "backward")
    for m in (1, 3):
        col = resolvent_kernel(op, 2.0, m, (5, 7))
        assert abs(total_mass(col) - 1.0) < 1e-12
        assert np.min(col.values.values) >= 0
    K = kernel_matrix(op, 2.0, 1)
    col = resolvent_kernel(op, 2.0, 1, (5, 7))
    assert np.allclose(K[:, 7 * 16 + 5] / g.cell_volume, col.values.values.ravel(), rtol=1e-10, atol=1e-14)


def test_yosida_series_kernel_check():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.builtin("anisotropic", g))
    u = random_field(g, 2, "full")
    rep = yosida_series_kernel_check(op, 10.0, 0.3, u)
    assert rep.discrepancy < 1e-10
    assert rep.sup_value <= rep.sup_bound * (1 + 1e-12)
    assert rep.min_kernel_entry >= -1e-15


def test_yosida_series_preserves_positivity():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g))
    u = random_field(g, 3, "nonnegative")
    assert yosida_series_kernel_check(op, 8.0, 0.5, u).min_value >= -1e-14


def test_column_save(tmp_path, heat64):
    col = fundamental_solution_column(heat64, (3, 0), t_horizon=1.0)
    col.save(tmp_path / "k", digest="d1")
    text = (tmp_path / "k" / "manifest.txt").read_text()
    assert "source_x=3" in text and f"levels={int(round(1.0 / heat64.grid.dt))}" in text
    assert "config_digest=d1" in text


def test_resolvent_kernel_fixes_constants():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.builtin("anisotropic", g), "backward")
    one = Field.constant(g, 1.0)
    assert np.allclose(apply_resolvent_kernel(op, 2.0, one).values, 1.0, atol=1e-13)
    rep = yosida_series_kernel_check(op, 5.0, 0.4, one)
    assert rep.discrepancy < 1e-12 and abs(rep.min_value - 1.0) < 1e-12


def test_yosida_series_on_bump():
    g = Grid(1, 16, 16)
    op = ParabolicOperator(CoefficientField.identity(g))
    bumpf = Field.from_function(g, lambda t, x: np.exp(-4 * (x - np.pi) ** 2 - 2 * (t - np.pi) ** 2))
    assert yosida_series_kernel_check(op, 10.0, 0.5, bumpf).discrepancy < 1e-6
