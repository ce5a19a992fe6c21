import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fracpar.grid import (Field, Grid, GridMismatchError, Lcg64, ParabolicCube, ParabolicPoint,
                          energy_norm, fourier_coefficients, from_fourier, half_time_derivative,
                          hilbert_transform_t, l2_inner, l2_norm, parabolic_distance,
                          parabolic_sobolev_norm, random_field, read_field, read_matrix_field,
                          sup_norm, time_derivative, write_field, write_matrix_field)


def test_grid_validation():
    with pytest.raises(ValueError):
        Grid(3, 8, 8)
    with pytest.raises(ValueError):
        Grid(1, 7, 8)
    with pytest.raises(ValueError):
        Grid(1, 8, 8, Lx=-1.0)


def test_grid_geometry():
    g = Grid(2, 8, 4, Lx=2.0, Lt=1.0)
    assert g.shape == (4, 8, 8)
    assert g.dx == 0.25 and g.dt == 0.25
    assert math.isclose(g.volume, 4.0)
    assert math.isclose(g.cell_volume * g.size, g.volume)


def test_lcg_matches_integer_recurrence():
    # frozen from the integer recurrence state <- (a state + c) mod 2^64
    assert np.allclose(Lcg64(12345).uniform(3), [0.10957860598549463, 0.26538529591773785, 0.8856239926684798],
                       rtol=0, atol=0)


def test_random_field_deterministic(grid1):
    for kind in ("full", "smooth", "nonnegative"):
        a = random_field(grid1, 3, kind)
        b = random_field(grid1, 3, kind)
        assert np.array_equal(a.values, b.values)
        assert np.all(a.values.imag == 0)
    assert random_field(grid1, 3, "nonnegative").values.real.min() >= 0


def test_smooth_field_is_band_limited(grid1):
    c = fourier_coefficients(random_field(grid1, 5, "smooth", kmax=3))
    k = np.fft.fftfreq(32, 1 / 32)
    big = (np.abs(k)[:, None] > 3) | (np.abs(k)[None, :] > 3)
    assert np.max(np.abs(c[big])) < 1e-14


def test_field_is_immutable(grid1):
    u = Field.zeros(grid1)
    with pytest.raises(AttributeError):
        u.values = None
    with pytest.raises(ValueError):
        u.values[0, 0] = 1.0


def test_grid_mismatch():
    with pytest.raises(GridMismatchError):
        Field.zeros(Grid(1, 8, 8)) + Field.zeros(Grid(1, 16, 8))


def test_mode_norms(grid1):
    u = Field.mode(grid1, 2, 3)
    assert math.isclose(l2_norm(u), math.sqrt(grid1.volume), rel_tol=1e-13)
    assert math.isclose(sup_norm(u), 1.0, rel_tol=1e-13)
    # D_t^{1/2} and forward-difference gradient of a single mode
    tau = 2.0
    d = 2 * math.sin(3 * grid1.dx / 2) / grid1.dx
    expected = math.sqrt(grid1.volume * (1 + d * d + tau))
    assert math.isclose(energy_norm(u), expected, rel_tol=1e-12)


def test_fourier_roundtrip(grid2):
    u = random_field(grid2, 1, "full")
    assert np.allclose(from_fourier(grid2, fourier_coefficients(u)).values, u.values, atol=1e-14)


def test_hilbert_convention(grid1):
    # D^{1/2} H_T D^{1/2} equals the spectral time derivative away from Nyquist
    u = random_field(grid1, 2, "smooth")
    lhs = half_time_derivative(hilbert_transform_t(half_time_derivative(u)))
    assert np.allclose(lhs.values, time_derivative(u).values, atol=1e-12)


def test_parabolic_sobolev_norm_orders(grid1):
    u = Field.mode(grid1, 1, 2)
    z = abs(4.0 + 1j * 1.0)
    for order in (0.25, 0.5, 1.0):
        expect = math.sqrt(grid1.volume * (1 + z ** order))
        assert math.isclose(parabolic_sobolev_norm(u, order), expect, rel_tol=1e-12)
    with pytest.raises(ValueError):
        parabolic_sobolev_norm(u, 1.5)


@settings(max_examples=25, deadline=None)
@given(a=st.complex_numbers(max_magnitude=10, allow_nan=False, allow_infinity=False),
       s1=st.integers(0, 100), s2=st.integers(0, 100))
def test_inner_product_sesquilinear(a, s1, s2):
    g = Grid(1, 8, 8)
    u, v = random_field(g, s1), random_field(g, s2)
    assert abs(l2_inner(u * a, v) - a * l2_inner(u, v)) <= 1e-10 * (1 + abs(a)) * l2_norm(u) * l2_norm(v)
    assert abs(l2_inner(u, v * a) - np.conj(a) * l2_inner(u, v)) <= 1e-10 * (1 + abs(a)) * l2_norm(u) * l2_norm(v)
    assert abs(l2_inner(u, u) - l2_norm(u) ** 2) <= 1e-12 * l2_norm(u) ** 2


def test_parabolic_distance_and_cube():
    g = Grid(1, 16, 16, Lx=2.0, Lt=1.0)
    p, q = ParabolicPoint((0.1,), 0.05), ParabolicPoint((1.9,), 0.95)
    assert math.isclose(parabolic_distance(p, q, g), 0.2 + math.sqrt(0.1))
    assert math.isclose(parabolic_distance(p, q), 1.8 + math.sqrt(0.9))
    cube = ParabolicCube(ParabolicPoint((1.0,), 0.5), 0.3)
    m = cube.mask(g)
    t, x = g.mesh()
    assert np.array_equal(m, (np.abs(x - 1.0) < 0.3) & (np.abs(t - 0.5) < 0.09))
    assert cube.scaled(2).radius == 0.6


def test_field_io_roundtrip(tmp_path, grid2):
    u = random_field(grid2, 4) + 1j * random_field(grid2, 5)
    write_field(tmp_path / "u.fp1", u)
    v = read_field(tmp_path / "u.fp1")
    assert v.grid == grid2 and np.array_equal(v.values, u.values)
    ent = np.random.default_rng(0).standard_normal(grid2.shape + (2, 2))
    write_matrix_field(tmp_path / "a.fp1", grid2, ent, tag="A")
    g, tag, back = read_matrix_field(tmp_path / "a.fp1")
    assert g == grid2 and tag == "A" and np.array_equal(back, ent)
