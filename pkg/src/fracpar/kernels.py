"""Fundamental solution and resolvent kernels for real coefficients.

Columns are obtained by propagating a discrete delta with implicit Euler in
time and sparse LU solves in space.  Implicit Euler keeps the propagator
nonnegative whenever ``I + dt L`` is an M-matrix, which holds for diagonal
``A`` at every step size and for scalar (1D) coefficients in particular.
Since ``L^T 1 = 0`` for the flux-form stencil, every step conserves mass.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from .grid import Field, Grid, l2_norm, sup_norm, write_field
from .operator import ParabolicOperator, SolverError


@dataclass
class KernelColumn:
    """One column ``K(., ., y, s)`` of a space-time kernel.

    ``values`` is stored so that integrating against ``dx^n`` at a fixed time
    gives the spatial mass.  ``causal_mask`` marks the time levels after the
    source that carry the propagated column; every other level is zero.
    """

    source: tuple
    values: Field
    causal_mask: np.ndarray
    scheme: str = "implicit-euler"
    sigma: float = 0.0
    m: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.values.grid

    def lags(self) -> np.ndarray:
        """Elapsed time ``t - s`` at every time level, in ``(0, Lt]``."""
        g = self.grid
        it = self.source[1]
        k = (np.arange(g.nt) - it) % g.nt
        k[k == 0] = g.nt
        return k * g.dt

    def spatial_mass(self) -> np.ndarray:
        """``sum_x K dx^n`` per time level."""
        g = self.grid
        axes = tuple(range(1, g.spatial_dims + 1))
        return np.sum(self.values.values.real, axis=axes) * g.dx ** g.spatial_dims

    def save(self, directory, digest: str = "") -> None:
        os.makedirs(directory, exist_ok=True)
        write_field(os.path.join(directory, "column.fp1"), self.values)
        with open(os.path.join(directory, "manifest.txt"), "w") as fh:
            fh.write(f"source_x={','.join(str(i) for i in self.source[0])}\n")
            fh.write(f"source_t={self.source[1]}\n")
            fh.write(f"scheme={self.scheme}\nsigma={self.sigma!r}\nm={self.m}\n")
            fh.write(f"levels={int(np.count_nonzero(self.causal_mask))}\n")
            fh.write(f"config_digest={digest}\n")


def _real_op(op: ParabolicOperator):
    if not op.coeffs.is_real:
        raise ValueError("kernels are provided for real coefficients only")


def _source(grid: Grid, source):
    iy, it = source
    iy = (iy,) if np.isscalar(iy) else tuple(iy)
    if len(iy) != grid.spatial_dims:
        raise ValueError("source index has the wrong spatial dimension")
    if not all(0 <= i < grid.nx for i in iy) or not 0 <= it < grid.nt:
        raise ValueError("source outside the grid")
    return tuple(int(i) for i in iy), int(it)


class _Stepper:
    """Cached sparse LU factors of ``(1 + sigma h) I + h L_j``."""

    def __init__(self, op: ParabolicOperator, h: float, sigma: float = 0.0):
        self.op = op
        self.h = h
        self.sigma = sigma
        self._lu = {}
        self.ns = op.grid.nx ** op.grid.spatial_dims
        self._const = op.coeffs.is_constant

    def solve(self, level: int, w: np.ndarray) -> np.ndarray:
        key = 0 if self._const else level % self.op.grid.nt
        lu = self._lu.get(key)
        if lu is None:
            L = self.op.spatial_matrix(key)
            M = (1.0 + self.sigma * self.h) * sp.identity(self.ns, format="csc") + self.h * L.tocsc()
            try:
                lu = splu(M.tocsc())
            except RuntimeError as exc:
                raise SolverError(f"sparse factorization failed: {exc}") from exc
            self._lu[key] = lu
        out = lu.solve(w)
        if not np.all(np.isfinite(out)):
            raise SolverError("non-finite values in kernel propagation")
        return out


def fundamental_solution_column(op: ParabolicOperator, source, t_horizon: float | None = None,
                                substeps: int = 1) -> KernelColumn:
    """Column of the fundamental solution from the grid point ``source = (iy, it)``.

    The delta ``dx^{-n}`` at ``iy`` is propagated over ``t_horizon`` (default:
    one period minus one step) with ``substeps`` implicit Euler steps per
    grid interval; the coefficients of the arrival level are used for each
    interval.  Values at the source level and beyond the horizon are zero.

    Raises
    ------
    ValueError
        If the horizon exceeds one period less one step.
    """
    _real_op(op)
    g = op.grid
    iy, it = _source(g, source)
    if t_horizon is None:
        t_horizon = (g.nt - 1) * g.dt
    levels = int(round(t_horizon / g.dt))
    if levels < 1 or levels > g.nt - 1 or t_horizon > g.Lt - g.dt * (1 - 1e-12):
        raise ValueError("t_horizon must cover between one step and one period minus one step")
    if substeps < 1:
        raise ValueError("substeps must be positive")
    stepper = _Stepper(op, g.dt / substeps)
    w = np.zeros(g.spatial_shape)
    w[iy] = 1.0 / g.dx ** g.spatial_dims
    w = w.ravel()
    vals = np.zeros(g.shape)
    mask = np.zeros(g.nt, dtype=bool)
    for j in range(1, levels + 1):
        lev = (it + j) % g.nt
        for _ in range(substeps):
            w = stepper.solve(lev, w)
        vals[lev] = w.reshape(g.spatial_shape)
        mask[lev] = True
    return KernelColumn((iy, it), Field(g, vals), mask, meta={"substeps": substeps, "horizon": levels * g.dt})


def periodic_heat_kernel(grid: Grid, source, diffusivity: float = 1.0, images: int = 6) -> np.ndarray:
    """Periodized heat kernel ``sum_k (4 pi a t)^{-n/2} exp(-|x - y + k Lx|^2 / (4 a t))``.

    Returned on the grid with lags measured from the source level as in
    :meth:`KernelColumn.lags`; the source level itself is set to zero.
    """
    iy, it = _source(grid, source)
    n = grid.spatial_dims
    k = (np.arange(grid.nt) - it) % grid.nt
    lag = k * grid.dt
    x = grid.x()
    out = np.zeros(grid.shape)
    for j in range(grid.nt):
        if k[j] == 0:
            continue
        tau = lag[j]
        prof = []
        for a in range(n):
            d = x - x[iy[a]]
            s = np.zeros_like(x)
            for m in range(-images, images + 1):
                s += np.exp(-(d + m * grid.Lx) ** 2 / (4 * diffusivity * tau))
            prof.append(s / math.sqrt(4 * math.pi * diffusivity * tau))
        out[j] = prof[0] if n == 1 else np.outer(prof[0], prof[1])
    return out


def _march_periodic(op: ParabolicOperator, sigma: float, f: np.ndarray, tol: float = 1e-15,
                    max_wraps: int = 200) -> np.ndarray:
    """Periodic solution of ``(sigma + D_t^- + L) w = sigma f`` by marching.

    One sweep gives ``w_j = ((1 + sigma dt) I + dt L_j)^{-1} (w_{j-1} + sigma dt f_j)``;
    sweeps repeat with the last level as the new start until the wrap-around
    correction falls below ``tol`` relative.
    """
    g = op.grid
    dt = g.dt
    stepper = _Stepper(op, dt, sigma)
    ns = stepper.ns
    fr = f.reshape(g.nt, ns)
    out = np.zeros((g.nt, ns), dtype=np.result_type(f.dtype, float))
    prev = np.zeros(ns, dtype=out.dtype)
    scale = max(np.max(np.abs(fr)), 1e-300)
    for _ in range(max_wraps):
        start = prev.copy()
        w = prev
        for j in range(g.nt):
            w = stepper.solve(j, w + sigma * dt * fr[j])
            out[j] = w
        prev = out[-1]
        if np.max(np.abs(prev - start)) <= tol * scale:
            break
    else:
        raise SolverError("periodic marching did not settle")
    return out.reshape(g.shape)


def apply_resolvent_kernel(op: ParabolicOperator, sigma: float, u: Field, m: int = 1) -> Field:
    """``(1 + H/sigma)^{-m} u`` for the backward-difference time derivative, by marching."""
    _real_op(op)
    if sigma <= 0 or m < 1:
        raise ValueError("need sigma > 0 and m >= 1")
    vals = u.values
    if np.iscomplexobj(vals) and np.max(np.abs(vals.imag)) > 0:
        re = apply_resolvent_kernel(op, sigma, Field(u.grid, vals.real), m).values
        im = apply_resolvent_kernel(op, sigma, Field(u.grid, vals.imag), m).values
        return Field(u.grid, re + 1j * im)
    w = vals.real
    for _ in range(m):
        w = _march_periodic(op, sigma, w)
    return Field(u.grid, w)


def resolvent_kernel(op: ParabolicOperator, sigma: float, m: int, source) -> KernelColumn:
    """Column of ``K_{sigma,m}``, the kernel of ``(1 + H/sigma)^{-m}``.

    The time derivative is the backward difference, so the kernel is causal
    up to wrap-around, which decays like ``(1 + sigma dt)^{-nt}``.  Values
    are scaled so that ``sum K dx^n dt`` over all levels is the total mass 1.
    """
    g = op.grid
    iy, it = _source(g, source)
    delta = np.zeros(g.shape)
    delta[(it,) + iy] = 1.0 / (g.dx ** g.spatial_dims * g.dt)
    vals = apply_resolvent_kernel(op, sigma, Field(g, delta), m).values.real
    mask = np.ones(g.nt, dtype=bool)
    return KernelColumn((iy, it), Field(g, vals), mask, scheme="implicit-euler-periodic",
                        sigma=float(sigma), m=int(m))


def total_mass(column: KernelColumn) -> float:
    """``sum K dx^n dt`` over the whole space-time grid."""
    g = column.grid
    return float(np.sum(column.values.values.real) * g.cell_volume)


def kernel_matrix(op: ParabolicOperator, sigma: float, m: int = 1) -> np.ndarray:
    """Dense matrix of ``(1 + H/sigma)^{-m}`` for the backward-difference operator.

    Entries are ``K_{sigma,m}(x, t, y, s) dx^n dt``.  Limited to 4096 unknowns.
    """
    _real_op(op)
    bop = op.with_options(time_derivative_mode="backward")
    H = bop.dense_matrix().real
    N = H.shape[0]
    K1 = np.linalg.solve(np.eye(N) + H / sigma, np.eye(N))
    return np.linalg.matrix_power(K1, m)


@dataclass
class GaussianFit:
    """Envelope ``C tau^{-n/2 + m - 1} e^{-sigma tau} exp(-c d^2 / tau)``."""

    C: float
    c: float
    dominance: float
    points: int
    violations: int
    residual_rms: float


def gaussian_bound_fit(column: KernelColumn, tau_range: tuple | None = None, max_scaled: float = 16.0,
                       quantile: float = 0.995) -> GaussianFit:
    """Fit ``c`` by least squares of ``log K`` against ``d^2 / tau`` on time slices.

    Fit points have ``tau`` in ``tau_range`` (default: 4 steps to a quarter
    period), minimal-image distance ``d <= Lx / 4`` and ``d^2 / tau <= max_scaled``.
    Each slice gets its own intercept.  ``C`` is the ``quantile`` of the
    envelope ratio, so the envelope dominates that fraction of the points.

    Raises
    ------
    ValueError
        If fewer than two distinct distances carry positive values.
    """
    g = column.grid
    n = g.spatial_dims
    lags = column.lags()
    if tau_range is None:
        tau_range = (4 * g.dt, 0.25 * g.Lt)
    iy = column.source[0]
    x = g.x()
    d2 = np.zeros(g.spatial_shape)
    for a in range(n):
        da = np.abs(x - x[iy[a]])
        da = np.minimum(da, g.Lx - da)
        sh = [1] * n
        sh[a] = -1
        d2 = d2 + (da ** 2).reshape(sh)
    near = d2 <= (g.Lx / 4) ** 2
    rows, ys, slices = [], [], []
    vals = column.values.values.real
    for j in np.where(column.causal_mask)[0]:
        tau = lags[j]
        if not tau_range[0] <= tau <= tau_range[1]:
            continue
        m = near & (d2 / tau <= max_scaled) & (vals[j] > 0)
        if np.count_nonzero(m) < 2:
            continue
        env = tau ** (-n / 2 + column.m - 1 if column.m >= 1 else -n / 2) * math.exp(-column.sigma * tau)
        ys.append(np.log(vals[j][m] / env))
        rows.append(d2[m] / tau)
        slices.append(np.full(np.count_nonzero(m), len(slices)))
    if not rows:
        raise ValueError("no time slice with positive values in the fit region")
    X = np.concatenate(rows)
    Y = np.concatenate(ys)
    S = np.concatenate(slices)
    if np.unique(np.round(X, 12)).size < 2:
        raise ValueError("degenerate fit: all mass at the source")
    D = np.zeros((X.size, len(rows) + 1))
    D[:, 0] = -X
    D[np.arange(X.size), 1 + S] = 1.0
    coef, *_ = np.linalg.lstsq(D, Y, rcond=None)
    c = float(coef[0])
    res = Y - D @ coef
    ratio = Y + c * X
    logC = float(np.quantile(ratio, quantile))
    dom = float(np.mean(ratio <= logC + 1e-12))
    return GaussianFit(math.exp(logC), c, dom, int(X.size), int(np.count_nonzero(ratio > logC + 1e-12)),
                       float(np.sqrt(np.mean(res ** 2))))


def propagate(op: ParabolicOperator, w0: np.ndarray, t0: float, tau: float, steps: int) -> np.ndarray:
    """Implicit Euler over ``[t0, t0 + tau]`` in ``steps`` equal steps.

    Each step uses the spatial operator of the grid level nearest its end time.
    """
    _real_op(op)
    g = op.grid
    h = tau / steps
    stepper = _Stepper(op, h)
    w = np.asarray(w0, dtype=float).ravel()
    for k in range(1, steps + 1):
        lev = int(round((t0 + k * h) / g.dt)) % g.nt
        w = stepper.solve(lev, w)
    return w.reshape(g.spatial_shape)


def chapman_kolmogorov_defect(op: ParabolicOperator, source_x, t0: float, tau1: float, tau2: float,
                              steps: int) -> float:
    """Relative defect of ``K(t0+tau1+tau2, t0) = K(., t0+tau1) K(t0+tau1, t0)``.

    Each leg and the direct run use ``steps`` implicit Euler steps, so legs of
    unequal length use different step sizes and the defect is first order in
    the step.  The composition integrates over the intermediate point with
    weight ``dx^n``, realized by propagating the first leg's column.
    """
    g = op.grid
    iy, _ = _source(g, (source_x, 0))
    delta = np.zeros(g.spatial_shape)
    delta[iy] = 1.0 / g.dx ** g.spatial_dims
    direct = propagate(op, delta, t0, tau1 + tau2, steps)
    mid = propagate(op, delta, t0, tau1, steps)
    comp = propagate(op, mid, t0 + tau1, tau2, steps)
    return float(np.linalg.norm(comp - direct) / np.linalg.norm(direct))


@dataclass
class YosidaKernelReport:
    discrepancy: float
    sup_value: float
    sup_bound: float
    min_value: float
    min_kernel_entry: float
    terms: int


def yosida_series_kernel_check(op: ParabolicOperator, sigma: float, r: float, u: Field,
                               tail_tol: float = 1e-14) -> YosidaKernelReport:
    """Compare ``S_sigma(r) u`` from the Poisson series of dense ``K_{sigma,m}`` with :func:`semigroup_apply`.

    Both sides use the backward-difference operator.  Also reports the sup
    bound ``sup |S_sigma(r) u| <= sup |u|`` and the smallest kernel entry.
    """
    from .semigroup import YosidaConfig, semigroup_apply, poisson_truncation
    g = op.grid
    if g.size > 4096:
        raise ValueError("yosida_series_kernel_check needs at most 4096 grid points")
    bop = op.with_options(time_derivative_mode="backward")
    K1 = kernel_matrix(bop, sigma, 1)
    mu = sigma * r
    M, _ = poisson_truncation(mu, tail_tol, 100000)
    logw = -mu
    x = u.values.ravel().astype(complex)
    acc = math.exp(logw) * x
    v = x
    for m in range(1, M + 1):
        v = K1 @ v
        logw += math.log(mu) - math.log(m)
        acc = acc + math.exp(logw) * v
    series = Field(g, acc.reshape(g.shape))
    cfg = YosidaConfig(sigma=sigma, poisson_tail_tol=tail_tol)
    direct = semigroup_apply(bop, cfg, r, u)
    disc = l2_norm(series - direct) / max(l2_norm(direct), 1e-300)
    return YosidaKernelReport(float(disc), sup_norm(series), sup_norm(u),
                              float(np.min(series.values.real)), float(np.min(K1)), int(M))
