"""Coefficient matrices ``A(x, t)`` and their ellipticity checks."""
from __future__ import annotations

import numpy as np

from .grid import Grid, Lcg64, read_matrix_field, write_matrix_field

BUILTINS = ("identity", "anisotropic", "rotating-nonsymmetric", "checkerboard")


class CoefficientField:
    """An ``n x n`` matrix per grid point with ellipticity constants.

    Parameters
    ----------
    grid : Grid
    entries : array_like
        Shape ``grid.shape + (n, n)`` or ``(n, n)`` for a constant matrix.
    c1, c2 : float, optional
        Declared constants with ``Re(A xi . conj(xi)) >= c1`` and
        ``|A xi . zeta| <= c2`` for unit vectors.  When omitted they are
        computed pointwise (smallest eigenvalue of the Hermitian part, largest
        singular value).
    """

    def __init__(self, grid: Grid, entries, c1: float | None = None, c2: float | None = None,
                 name: str = "custom"):
        n = grid.spatial_dims
        arr = np.asarray(entries)
        if arr.shape == (n, n):
            arr = np.broadcast_to(arr, grid.shape + (n, n))
        if arr.shape != grid.shape + (n, n):
            raise ValueError(f"coefficient entries must have shape {grid.shape + (n, n)}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("coefficients must be finite")
        self.grid = grid
        self.is_real = bool(np.isrealobj(arr) or np.all(arr.imag == 0))
        self.entries = np.array(arr.real if self.is_real else arr)
        self.entries.setflags(write=False)
        self.name = name
        flat = self.entries.reshape(-1, n, n)
        self.is_constant = bool(np.all(flat == flat[0]))
        self.is_symmetric = bool(np.allclose(flat, np.conj(np.swapaxes(flat, 1, 2)), rtol=0, atol=1e-14))
        if c1 is None or c2 is None:
            herm = 0.5 * (flat + np.conj(np.swapaxes(flat, 1, 2)))
            lo = float(np.min(np.linalg.eigvalsh(herm)))
            hi = float(np.max(np.linalg.svd(flat, compute_uv=False)))
            c1 = lo if c1 is None else c1
            c2 = hi if c2 is None else c2
        self.c1 = float(c1)
        self.c2 = float(c2)
        if not self.c1 > 0:
            raise ValueError("coefficients are not uniformly elliptic (c1 <= 0)")

    def __repr__(self):
        return f"CoefficientField({self.name!r}, c1={self.c1:g}, c2={self.c2:g})"

    @classmethod
    def constant(cls, grid: Grid, matrix, **kw) -> "CoefficientField":
        m = np.atleast_2d(np.asarray(matrix))
        if m.shape == (1, 1) and grid.spatial_dims > 1:
            m = m[0, 0] * np.eye(grid.spatial_dims)
        return cls(grid, m, **kw)

    @classmethod
    def identity(cls, grid: Grid, scale: float = 1.0) -> "CoefficientField":
        return cls(grid, scale * np.eye(grid.spatial_dims), c1=scale, c2=scale, name="identity")

    @classmethod
    def builtin(cls, name: str, grid: Grid, scale: float = 1.0) -> "CoefficientField":
        """Named coefficient fields used by the CLI and the test-suite.

        ``identity``
            ``scale * I``.
        ``anisotropic``
            2D: ``diag(2, 1/2)``; 1D: ``1.25 + 0.75 sin(2 pi x / Lx)``.
        ``rotating-nonsymmetric``
            2D: ``R(theta) diag(3/4, 3/2) R(theta)^T + (1/2) J`` with
            ``theta = 2 pi (x_1/Lx + t/Lt)`` and ``J`` the rotation by 90
            degrees; declared ``c1 = 0.5``, ``c2 = 2``.  1D:
            ``1.25 + 0.5 sin(2 pi (x/Lx + t/Lt))``.
        ``checkerboard``
            ``(1.5 +/- 0.5) I`` on a 4-per-axis checkerboard in ``(x, t)``.
        """
        n = grid.spatial_dims
        mesh = grid.mesh()
        t, x1 = mesh[0], mesh[1]
        if name == "identity":
            out = cls.identity(grid, scale)
            return out
        if name == "anisotropic":
            if n == 2:
                ent = np.diag([2.0, 0.5])
            else:
                ent = (1.25 + 0.75 * np.sin(2 * np.pi * x1 / grid.Lx))[..., None, None]
            return cls(grid, scale * ent, c1=0.5 * scale, c2=2.0 * scale, name=name)
        if name == "rotating-nonsymmetric":
            if n == 2:
                th = 2 * np.pi * (x1 / grid.Lx + t / grid.Lt)
                c, s = np.cos(th), np.sin(th)
                l1, l2, beta = 0.75, 1.5, 0.5
                ent = np.empty(grid.shape + (2, 2))
                ent[..., 0, 0] = l1 * c * c + l2 * s * s
                ent[..., 1, 1] = l1 * s * s + l2 * c * c
                ent[..., 0, 1] = (l1 - l2) * c * s + beta
                ent[..., 1, 0] = (l1 - l2) * c * s - beta
            else:
                ent = (1.25 + 0.5 * np.sin(2 * np.pi * (x1 / grid.Lx + t / grid.Lt)))[..., None, None]
            return cls(grid, scale * ent, c1=0.5 * scale, c2=2.0 * scale, name=name)
        if name == "checkerboard":
            par = np.floor(4 * t / grid.Lt).astype(int)
            for k in range(n):
                par = par + np.floor(4 * mesh[k + 1] / grid.Lx).astype(int)
            a = np.where(par % 2 == 0, 2.0, 1.0)
            ent = a[..., None, None] * np.eye(n)
            return cls(grid, scale * ent, c1=scale, c2=2.0 * scale, name=name)
        raise ValueError(f"unknown builtin coefficient field {name!r}")

    @classmethod
    def read(cls, path) -> "CoefficientField":
        grid, tag, data = read_matrix_field(path)
        if tag != "A":
            raise ValueError("coefficient files carry the header tag 'A'")
        return cls(grid, data, name=str(path))

    def write(self, path) -> None:
        write_matrix_field(path, self.grid, self.entries, tag="A")

    def mean_matrix(self) -> np.ndarray:
        n = self.grid.spatial_dims
        return self.entries.reshape(-1, n, n).mean(axis=0)

    def adjoint(self) -> "CoefficientField":
        """Pointwise conjugate transpose ``A^*``."""
        return CoefficientField(self.grid, np.conj(np.swapaxes(self.entries, -1, -2)),
                                c1=self.c1, c2=self.c2, name=self.name + "*")

    def check_ellipticity(self, samples: int = 8, seed: int = 1, slack: float = 1e-12) -> dict:
        """Sample the two ellipticity inequalities.

        The canonical basis and ``samples`` random unit vectors (from
        :class:`~fracpar.grid.Lcg64`) are used for ``xi`` and ``zeta``.

        Returns
        -------
        dict
            ``min_real`` (smallest ``Re(A xi . conj xi)``), ``max_bilinear``
            (largest ``|A xi . zeta|``) and ``ok``.
        """
        n = self.grid.spatial_dims
        rng = Lcg64(seed)
        vecs = [np.eye(n)[i] for i in range(n)]
        for _ in range(samples):
            v = rng.uniform(2 * n) * 2 - 1
            v = v[:n] + 1j * v[n:]
            vecs.append(v / np.linalg.norm(v))
        flat = self.entries.reshape(-1, n, n)
        lo, hi = np.inf, 0.0
        for xi in vecs:
            axi = flat @ xi
            lo = min(lo, float(np.min((axi @ np.conj(xi)).real)))
            for zeta in vecs:
                hi = max(hi, float(np.max(np.abs(axi @ zeta))))
        ok = lo >= self.c1 - slack and hi <= self.c2 + slack
        return {"min_real": lo, "max_bilinear": hi, "ok": bool(ok)}
