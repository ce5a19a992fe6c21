import numpy as np
import pytest

from fracpar.coefficients import BUILTINS, CoefficientField
from fracpar.grid import Grid


@pytest.mark.parametrize("n", [1, 2])
@pytest.mark.parametrize("name", BUILTINS)
def test_builtins_satisfy_declared_constants(name, n):
    g = Grid(n, 16, 16)
    c = CoefficientField.builtin(name, g)
    assert c.is_real
    rep = c.check_ellipticity(samples=6)
    assert rep["ok"], rep


def test_rotating_nonsymmetric_constants():
    c = CoefficientField.builtin("rotating-nonsymmetric", Grid(2, 16, 16))
    assert (c.c1, c.c2) == (0.5, 2.0)
    assert not c.is_symmetric and not c.is_constant


def test_computed_constants_for_constant_matrix():
    g = Grid(2, 8, 8)
    c = CoefficientField.constant(g, [[2.0, 1.0], [-1.0, 1.0]])
    # Hermitian part diag(2, 1); largest singular value of [[2, 1], [-1, 1]]
    assert np.isclose(c.c1, 1.0)
    assert np.isclose(c.c2, np.linalg.svd([[2.0, 1.0], [-1.0, 1.0]], compute_uv=False)[0])
    assert c.is_constant


def test_rejects_non_elliptic():
    with pytest.raises(ValueError):
        CoefficientField.constant(Grid(2, 8, 8), [[1.0, 0.0], [0.0, -1.0]])


def test_adjoint_and_io(tmp_path):
    g = Grid(2, 8, 8)
    c = CoefficientField.builtin("rotating-nonsymmetric", g)
    assert np.array_equal(c.adjoint().entries, np.swapaxes(c.entries, -1, -2))
    c.write(tmp_path / "a.fp1")
    back = CoefficientField.read(tmp_path / "a.fp1")
    assert np.array_equal(back.entries, c.entries)
    assert back.grid == g
