"""Discrete parabolic operator ``H = d/dt - div(A grad)`` on the torus.

The spatial part is a flux-form finite-difference operator.  At the face
between a cell and its neighbour along axis ``k`` the flux is

    F_k = sum_j A_kj(face) g_j,

where ``A(face)`` is the arithmetic mean of the two cell values, ``g_k`` is the
compact forward difference across the face and, for ``j != k``, ``g_j`` is the
average over the two cells of the centred difference along ``j``.  The
operator is ``sum_k D_k^*(F_k)`` with ``D_k^*`` the adjoint of the forward
difference.  For ``A = I`` this is the standard ``2 (1 - cos(xi dx)) / dx^2``
Laplacian per axis, and the form ``sum_k <F_k(u), D_k v>`` is exactly
``<H_x u, v>``.

Three realizations of the time derivative are offered:

``"spectral"``
    Multiplier ``i tau`` (zero at Nyquist, so real fields stay real).
``"factorized"``
    ``D_t^{1/2} H_T D_t^{1/2}``; equals ``"spectral"`` except at Nyquist where
    it is ``i |tau_N|``.
``"backward"``
    Periodic first-order backward difference ``(u(t) - u(t - dt)) / dt``,
    symbol ``(1 - exp(-i tau dt)) / dt``.  This is causal and monotone and is
    the mode used for kernels and the regularity probes.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import LinearOperator, gmres

from .coefficients import CoefficientField
from .grid import (Field, Grid, GridMismatchError, half_time_derivative, hilbert_transform_t,
                   l2_inner, l2_norm, random_field)

TIME_MODES = ("spectral", "factorized", "backward")


class SolverError(RuntimeError):
    """Iterative solve did not reach the requested residual."""

    def __init__(self, message, residual=None):
        super().__init__(message)
        self.residual = residual


def time_symbol(grid: Grid, mode: str, reverse: bool = False) -> np.ndarray:
    """Multiplier of the time derivative on ``exp(i tau t)``, shape ``(nt, 1, ...)``.

    ``reverse=True`` gives the multiplier of the adjoint (``-d/dt`` realized
    in the same way).
    """
    tau = grid.tau()
    if mode == "spectral":
        sym = 1j * tau
        sym[grid.nt // 2] = 0.0
    elif mode == "factorized":
        sym = 1j * grid.sign_tau() * np.abs(tau)
    elif mode == "backward":
        sym = (1.0 - np.exp(-1j * tau * grid.dt)) / grid.dt
    else:
        raise ValueError(f"unknown time_derivative_mode {mode!r}")
    return np.conj(sym) if reverse else sym


def _roll(a, shift, axis):
    return np.roll(a, shift, axis=axis)


class _Stencil:
    """Flux-form spatial stencil acting on arrays whose last ``n`` axes are space."""

    def __init__(self, entries: np.ndarray, n: int, dx: float):
        self.n = n
        self.dx = dx
        # entries: (..., nx, .., nx, n, n)
        faces = []
        for k in range(n):
            ax = -n - 2 + k
            faces.append(0.5 * (entries + np.roll(entries, -1, axis=ax)))
        self.faces = faces

    def _ax(self, k):
        return -self.n + k

    def fwd(self, u, k):
        return (_roll(u, -1, self._ax(k)) - u) / self.dx

    def fwd_adj(self, w, k):
        return (_roll(w, 1, self._ax(k)) - w) / self.dx

    def cen(self, u, j):
        ax = self._ax(j)
        return (_roll(u, -1, ax) - _roll(u, 1, ax)) / (2.0 * self.dx)

    def face_grad(self, u, j, k):
        """Component ``j`` of the gradient at the ``k``-faces."""
        if j == k:
            return self.fwd(u, k)
        c = self.cen(u, j)
        return 0.5 * (c + _roll(c, -1, self._ax(k)))

    def face_grad_adj(self, w, j, k):
        if j == k:
            return self.fwd_adj(w, k)
        a = 0.5 * (w + _roll(w, 1, self._ax(k)))
        return -self.cen(a, j)

    def fluxes(self, u):
        out = []
        for k in range(self.n):
            fk = 0.0
            for j in range(self.n):
                fk = fk + self.faces[k][..., k, j] * self.face_grad(u, j, k)
            out.append(fk)
        return out

    def apply(self, u):
        res = 0.0
        for k, fk in enumerate(self.fluxes(u)):
            res = res + self.fwd_adj(fk, k)
        return res

    def apply_adjoint(self, u):
        res = 0.0
        for k in range(self.n):
            du = self.fwd(u, k)
            for j in range(self.n):
                res = res + self.face_grad_adj(np.conj(self.faces[k][..., k, j]) * du, j, k)
        return res


def stencil_symbol(grid: Grid, matrix: np.ndarray) -> np.ndarray:
    """Symbol of the flux-form spatial stencil for a constant matrix ``A``."""
    n = grid.spatial_dims
    dx = grid.dx
    th = [grid.xi(k) * dx for k in range(n)]
    d = [(np.exp(1j * t) - 1.0) / dx for t in th]
    sym = 0.0
    for k in range(n):
        for j in range(n):
            if j == k:
                sym = sym + matrix[k, k] * np.abs(d[k]) ** 2
            else:
                sym = sym + matrix[k, j] * np.sin(th[j]) * np.sin(th[k]) / dx ** 2
    return sym


class ParabolicOperator:
    """Discrete ``H = d/dt - div(A grad)`` with matrix-free application.

    Parameters
    ----------
    coeffs : CoefficientField
    time_derivative_mode : {"spectral", "factorized", "backward"}
    solver_tol : float
        Relative residual target of :meth:`resolvent_solve`.
    solver_max_iter : int
        Maximum number of GMRES iterations.
    """

    def __init__(self, coeffs: CoefficientField, time_derivative_mode: str = "spectral",
                 solver_tol: float = 1e-10, solver_max_iter: int = 500, _reverse: bool = False):
        if time_derivative_mode not in TIME_MODES:
            raise ValueError(f"time_derivative_mode must be one of {TIME_MODES}")
        if not 0 < solver_tol < 1:
            raise ValueError("solver_tol must lie in (0, 1)")
        self.coeffs = coeffs
        self.grid = coeffs.grid
        self.time_derivative_mode = time_derivative_mode
        self.solver_tol = float(solver_tol)
        self.solver_max_iter = int(solver_max_iter)
        self._reverse = _reverse
        self._stencil = _Stencil(coeffs.entries, self.grid.spatial_dims, self.grid.dx)
        self._tsym = time_symbol(self.grid, time_derivative_mode, reverse=_reverse)
        self._ref_sym = self._tsym + stencil_symbol(self.grid, coeffs.mean_matrix())
        self.last_iterations = 0

    def __repr__(self):
        return (f"ParabolicOperator({self.coeffs!r}, mode={self.time_derivative_mode!r}, "
                f"grid=({self.grid.describe()}))")

    @property
    def is_constant(self) -> bool:
        return self.coeffs.is_constant

    def with_options(self, **kw) -> "ParabolicOperator":
        opts = dict(time_derivative_mode=self.time_derivative_mode, solver_tol=self.solver_tol,
                    solver_max_iter=self.solver_max_iter)
        opts.update(kw)
        return ParabolicOperator(self.coeffs, **opts)

    def adjoint(self) -> "ParabolicOperator":
        """Operator whose :meth:`apply` is the exact discrete adjoint of this one."""
        adj = ParabolicOperator(self.coeffs, self.time_derivative_mode, self.solver_tol,
                                self.solver_max_iter, _reverse=not self._reverse)
        adj._adjoint_of = self
        adj._ref_sym = np.conj(self._ref_sym)
        return adj

    # -- application -------------------------------------------------------
    def _check(self, u: Field):
        if u.grid != self.grid:
            raise GridMismatchError("field and operator live on different grids")
        if not u.is_finite():
            raise ValueError("field contains NaN or Inf")

    def _time(self, vals):
        return np.fft.ifft(np.fft.fft(vals, axis=0) * self._tsym, axis=0)

    def _apply_array(self, vals):
        parent = getattr(self, "_adjoint_of", None)
        if parent is not None:
            space = parent._stencil.apply_adjoint(vals)
        else:
            space = self._stencil.apply(vals)
        return self._time(vals) + space

    def apply(self, u: Field) -> Field:
        self._check(u)
        return Field(self.grid, self._apply_array(u.values))

    def apply_spatial(self, u: Field) -> Field:
        self._check(u)
        return Field(self.grid, self._stencil.apply(u.values))

    def apply_adjoint(self, u: Field) -> Field:
        """``H^*``: adjoint stencil with ``A^*`` and reversed time orientation."""
        self._check(u)
        space = self._stencil.apply_adjoint(u.values)
        return Field(self.grid, np.fft.ifft(np.fft.fft(u.values, axis=0) * np.conj(self._tsym),
                                            axis=0) + space)

    def symbol(self) -> np.ndarray:
        """Symbol of the constant-coefficient operator with the mean of ``A``.

        Exact for constant coefficients.  Shape ``grid.shape``.
        """
        return np.broadcast_to(self._ref_sym, self.grid.shape)

    def null_space(self) -> np.ndarray:
        """Orthonormal (Euclidean) basis of the structural kernel of ``H``.

        Constants always lie in the kernel.  In ``"spectral"`` mode the
        time-Nyquist mode that is constant in space does too, because the
        spectral time multiplier vanishes there.  Rows are flattened fields.
        """
        g = self.grid
        vecs = [np.ones(g.shape)]
        if self.time_derivative_mode == "spectral":
            alt = np.where(np.arange(g.nt) % 2 == 0, 1.0, -1.0)
            vecs.append(np.broadcast_to(alt.reshape((g.nt,) + (1,) * g.spatial_dims), g.shape))
        out = np.array([v.ravel() for v in vecs], dtype=complex)
        return out / math.sqrt(g.size)

    def split_null(self, vals: np.ndarray) -> tuple:
        """Split an array into its null-space component and the remainder."""
        Z = self.null_space()
        flat = vals.ravel()
        ker = Z.T @ (Z.conj() @ flat)
        return ker.reshape(vals.shape), (flat - ker).reshape(vals.shape)

    # -- forms -------------------------------------------------------------
    def _time_form(self, u: Field, v: Field) -> complex:
        g = self.grid
        if self.time_derivative_mode == "backward":
            return l2_inner(self._time_field(u), v)
        hu = hilbert_transform_t(half_time_derivative(u))
        dv = half_time_derivative(v)
        if self.time_derivative_mode == "spectral":
            # the Nyquist mode carries no time derivative in this mode
            a = np.fft.fft(hu.values, axis=0)
            a[g.nt // 2] = 0.0
            hu = Field(g, np.fft.ifft(a, axis=0))
        return l2_inner(hu, dv)

    def _time_field(self, u: Field) -> Field:
        return Field(self.grid, np.fft.ifft(np.fft.fft(u.values, axis=0) * self._tsym, axis=0))

    def form(self, u: Field, v: Field) -> complex:
        """Sesquilinear form ``sum_k <F_k(u), D_k v> + <H_T D^{1/2} u, D^{1/2} v>``.

        In ``"backward"`` mode the time part is ``<D_t^- u, v>``.
        """
        self._check(u)
        self._check(v)
        st = self._stencil
        tot = 0.0
        for k, fk in enumerate(st.fluxes(u.values)):
            tot += np.vdot(st.fwd(v.values, k).ravel(), fk.ravel())
        return complex(tot * self.grid.cell_volume) + self._time_form(u, v)

    def form_traditional(self, u: Field, v: Field) -> complex:
        """Form with the whole time derivative moved onto ``v``.

        Agrees with :meth:`form` up to rounding; used to cross-check weak
        residuals.
        """
        self._check(u)
        self._check(v)
        st = self._stencil
        tot = 0.0
        for k, fk in enumerate(st.fluxes(u.values)):
            tot += np.vdot(st.fwd(v.values, k).ravel(), fk.ravel())
        back = np.fft.ifft(np.fft.fft(v.values, axis=0) * np.conj(self._tsym), axis=0)
        return complex(tot * self.grid.cell_volume) + l2_inner(u, Field(self.grid, back))

    def form_adjoint(self, v: Field, u: Field) -> complex:
        """Form of the adjoint: ``A^*`` in place of ``A`` and ``-H_T`` in place of ``H_T``."""
        self._check(u)
        self._check(v)
        st = self._stencil
        tot = 0.0
        n = self.grid.spatial_dims
        for k in range(n):
            dv = st.fwd(v.values, k)
            for j in range(n):
                gu = st.face_grad(u.values, j, k)
                tot += np.vdot(gu.ravel(), (np.conj(st.faces[k][..., k, j]) * dv).ravel())
        if self.time_derivative_mode == "backward":
            back = np.fft.ifft(np.fft.fft(v.values, axis=0) * np.conj(self._tsym), axis=0)
            tpart = l2_inner(Field(self.grid, back), u)
        else:
            hv = -hilbert_transform_t(half_time_derivative(v))
            if self.time_derivative_mode == "spectral":
                a = np.fft.fft(hv.values, axis=0)
                a[self.grid.nt // 2] = 0.0
                hv = Field(self.grid, np.fft.ifft(a, axis=0))
            tpart = l2_inner(hv, half_time_derivative(u))
        return complex(tot * self.grid.cell_volume) + tpart

    # -- resolvent ---------------------------------------------------------
    def resolvent_solve(self, sigma: complex, f: Field, x0: Field | None = None) -> Field:
        """Solve ``(sigma + H) u = f`` by preconditioned GMRES.

        The preconditioner divides by ``sigma + symbol`` in Fourier space,
        where the symbol uses the grid mean of ``A``; it is exact for constant
        coefficients.

        Raises
        ------
        ValueError
            If ``Re sigma <= 0``.
        SolverError
            If the relative residual exceeds ``solver_tol`` after
            ``solver_max_iter`` iterations.
        """
        sigma = complex(sigma)
        if not sigma.real > 0:
            raise ValueError("resolvent_solve needs Re(sigma) > 0")
        self._check(f)
        g = self.grid
        b = f.values
        bnorm = np.linalg.norm(b)
        if bnorm == 0:
            return Field.zeros(g)
        denom = sigma + self._ref_sym

        def prec(vals):
            return np.fft.ifftn(np.fft.fftn(vals) / denom)

        guess = prec(b) if x0 is None else x0.values
        if self.is_constant:
            # the preconditioner is the exact inverse
            res = np.linalg.norm(sigma * guess + self._apply_array(guess) - b) / bnorm
            if res <= self.solver_tol:
                self.last_iterations = 0
                return Field(g, guess)
        shape = g.shape
        N = g.size
        A = LinearOperator((N, N), dtype=complex,
                           matvec=lambda x: (sigma * x.reshape(shape)
                                             + self._apply_array(x.reshape(shape))).ravel())
        M = LinearOperator((N, N), dtype=complex, matvec=lambda x: prec(x.reshape(shape)).ravel())
        restart = min(60, N, self.solver_max_iter)
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = gmres(A, b.ravel(), x0=guess.ravel(), rtol=self.solver_tol * 0.5, atol=0.0,
                        restart=restart, maxiter=max(1, math.ceil(self.solver_max_iter / restart)),
                        M=M, callback=cb, callback_type="pr_norm")
        x = x.reshape(shape)
        self.last_iterations = count[0]
        res = np.linalg.norm(sigma * x + self._apply_array(x) - b) / bnorm
        if not res <= self.solver_tol or not np.all(np.isfinite(x)):
            raise SolverError(f"resolvent solve stalled at relative residual {res:.3e}", res)
        return Field(g, x)

    # -- matrices ------------------------------------------------------------
    def spatial_matrix(self, time_index: int) -> sp.csr_matrix:
        """Sparse matrix of the spatial part at one time level (real ``A`` only)."""
        g = self.grid
        ns = g.nx ** g.spatial_dims
        entries = self.coeffs.entries[time_index]
        st = _Stencil(entries, g.spatial_dims, g.dx)
        eye = np.eye(ns).reshape((ns,) + g.spatial_shape)
        cols = st.apply(eye).reshape(ns, ns)
        mat = cols.T
        if np.iscomplexobj(mat):
            if np.max(np.abs(mat.imag)) > 0:
                return sp.csr_matrix(mat)
            mat = mat.real
        mat[np.abs(mat) < 1e-14 * np.max(np.abs(mat))] = 0.0
        return sp.csr_matrix(mat)

    def dense_matrix(self) -> np.ndarray:
        """Dense matrix of ``H`` in storage order (small grids only)."""
        N = self.grid.size
        if N > 4096:
            raise ValueError("dense assembly limited to 4096 unknowns")
        eye = np.eye(N).reshape((N,) + self.grid.shape)
        out = np.empty((N, N), dtype=complex)
        for i in range(N):
            out[:, i] = self._apply_array(eye[i]).ravel()
        return out


def apply_H(op: ParabolicOperator, u: Field) -> Field:
    """Apply the discrete parabolic operator."""
    return op.apply(u)


def sesquilinear_form(op: ParabolicOperator, u: Field, v: Field) -> complex:
    return op.form(u, v)


def resolvent_solve(op: ParabolicOperator, sigma: complex, f: Field) -> Field:
    return op.resolvent_solve(sigma, f)


@dataclass
class AccretivityReport:
    trials: int
    min_ratio: float
    ok: bool
    tolerance: float = 1e-10


def check_accretivity(op: ParabolicOperator, trials: int = 100, seed: int = 7,
                      kind: str = "full") -> AccretivityReport:
    """Minimum of ``Re <Hu, u> / ||u||^2`` over seeded random fields."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    lo = np.inf
    for i in range(trials):
        u = random_field(op.grid, seed + i, kind=kind)
        lo = min(lo, l2_inner(op.apply(u), u).real / l2_norm(u) ** 2)
    return AccretivityReport(trials, float(lo), bool(lo >= -1e-10))
