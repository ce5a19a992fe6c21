"""Contraction semigroup ``S(r) = exp(-r H)`` through the Yosida approximation.

Two evaluators are provided.

:func:`semigroup_apply`
    The Poisson-weighted series ``sum_m Pois(m; sigma r) R_sigma^m u`` with
    ``R_sigma = sigma (sigma + H)^{-1}``, one resolvent solve per term.  Cost
    grows like ``sigma r``.

:class:`SemigroupFamily`
    For many values of ``r`` at once.  A rational Krylov basis ``V`` is built
    from repeated solves with ``(pole + H)^{-1}`` on the mean-free part of
    ``u``.  The Yosida generator ``H_sigma = sigma H (sigma + H)^{-1}`` is
    compressed to ``G = V^* H_sigma V`` and the series is summed in closed form,
    ``S_sigma(r) u = P0 u + V exp(-r G) V^* u`` where ``P0`` projects onto the
    structural null space of ``H`` (see :meth:`ParabolicOperator.null_space`),
    on which the semigroup acts as the identity.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, pdtrc

from .grid import Field, l2_norm
from .operator import ParabolicOperator


class TruncationError(RuntimeError):
    """Poisson series needed more than ``max_terms`` terms."""

    def __init__(self, message, tail=None):
        super().__init__(message)
        self.tail = tail


@dataclass(frozen=True)
class YosidaConfig:
    """Settings of the Yosida approximation.

    Parameters
    ----------
    sigma : float or None
        Yosida parameter; ``None`` selects it with :func:`auto_sigma`.
    poisson_tail_tol : float
        Truncate the Poisson series once the remaining mass is below this.
    max_terms : int
        Hard cap on the number of series terms.
    """

    sigma: float | None = None
    poisson_tail_tol: float = 1e-12
    max_terms: int = 20000

    def __post_init__(self):
        if self.sigma is not None and not self.sigma > 0:
            raise ValueError("sigma must be positive")
        if not 0 < self.poisson_tail_tol <= 1e-6:
            raise ValueError("poisson_tail_tol must lie in (0, 1e-6]")
        if self.max_terms < 1:
            raise ValueError("max_terms must be positive")


def operator_norm_estimate(op: ParabolicOperator) -> float:
    """Upper bound for ``|H|`` from the time symbol and ``c2 * 4 n / dx^2``."""
    g = op.grid
    return float(np.max(np.abs(op._tsym)) + op.coeffs.c2 * 4.0 * g.spatial_dims / g.dx ** 2)


def auto_sigma(op: ParabolicOperator, r_min: float) -> float:
    """``max(10 / r_min, 10 |H|_est)``."""
    return max(10.0 / r_min, 10.0 * operator_norm_estimate(op))


def poisson_truncation(mu: float, tail_tol: float, max_terms: int) -> tuple[int, float]:
    """Smallest ``M`` with ``P(N > M) < tail_tol`` for ``N ~ Poisson(mu)``.

    Starts from ``mu + 12 sqrt(mu + 1)`` and moves to the exact threshold
    using the regularized incomplete gamma function.

    Returns
    -------
    (M, tail)
    """
    if mu == 0:
        return 0, 0.0
    M = int(mu + 12.0 * math.sqrt(mu + 1.0))
    while M > 0 and pdtrc(M - 1, mu) < tail_tol:
        M -= 1
    while pdtrc(M, mu) >= tail_tol:
        M += 1
        if M > max_terms:
            raise TruncationError(f"Poisson series needs more than {max_terms} terms "
                                  f"(sigma r = {mu:g})", float(pdtrc(max_terms, mu)))
    if M > max_terms:
        raise TruncationError(f"Poisson series needs {M} > {max_terms} terms", float(pdtrc(max_terms, mu)))
    return M, float(pdtrc(M, mu))


def _sigma(op, cfg: YosidaConfig, r: float) -> float:
    if cfg.sigma is not None:
        return float(cfg.sigma)
    return auto_sigma(op, r if r > 0 else 1.0)


def yosida_resolvent_step(op: ParabolicOperator, cfg: YosidaConfig, u: Field,
                          sigma: float | None = None) -> Field:
    """``R_sigma u = sigma (sigma + H)^{-1} u``."""
    sig = float(sigma if sigma is not None else (cfg.sigma or auto_sigma(op, 1.0)))
    return op.resolvent_solve(sig, u) * sig


def semigroup_apply(op: ParabolicOperator, cfg: YosidaConfig, r: float, u: Field,
                    return_info: bool = False):
    """Yosida semigroup ``exp(-r H_sigma) u`` as a Poisson series of resolvent powers.

    Raises
    ------
    TruncationError
        If the Poisson tail cannot be brought below ``cfg.poisson_tail_tol``
        within ``cfg.max_terms`` terms.
    """
    if r < 0:
        raise ValueError("r must be nonnegative")
    if r == 0:
        return (u, {"terms": 0, "tail": 0.0, "sigma": cfg.sigma}) if return_info else u
    sig = _sigma(op, cfg, r)
    mu = sig * r
    M, tail = poisson_truncation(mu, cfg.poisson_tail_tol, cfg.max_terms)
    m = np.arange(M + 1)
    w = np.exp(-mu + m * math.log(mu) - gammaln(m + 1))
    acc = u.values * w[0]
    v = u
    for k in range(1, M + 1):
        v = yosida_resolvent_step(op, cfg, v, sig)
        acc = acc + w[k] * v.values
    out = Field(u.grid, acc)
    if return_info:
        return out, {"terms": M, "tail": tail, "sigma": sig}
    return out


def semigroup_error_bound(op: ParabolicOperator, cfg: YosidaConfig, r: float, u: Field) -> float:
    """A-posteriori bound ``r |(H_sigma - H) u|`` with ``H_sigma u = R_sigma H u``."""
    if r == 0:
        return 0.0
    sig = _sigma(op, cfg, r)
    hu = op.apply(u)
    return float(r * l2_norm(yosida_resolvent_step(op, cfg, hu, sig) - hu))


@dataclass
class LawDefect:
    """``|S_sigma(r1 + r2) u - S_sigma(r1) S_sigma(r2) u|`` and its bound."""

    defect: float
    bound: float
    contraction_excess: float


def semigroup_law_defect(op: ParabolicOperator, cfg: YosidaConfig, r1: float, r2: float,
                         u: Field) -> LawDefect:
    """Semigroup-law defect of the Yosida evaluator with an a-posteriori bound.

    The exact semigroup satisfies the law, and ``S_sigma`` commutes with
    ``H`` and contracts, so the defect is at most
    ``2 (r1 + r2) |(H_sigma - H) u|`` plus the dropped Poisson mass of the
    three evaluations.  ``contraction_excess`` is the largest relative excess
    of ``|S_sigma(r) u|`` over ``|u|`` among the three evaluations.
    """
    if cfg.sigma is None:
        raise ValueError("the law defect needs a fixed sigma")
    a, ia = semigroup_apply(op, cfg, r2, u, return_info=True)
    b, ib = semigroup_apply(op, cfg, r1, a, return_info=True)
    c, ic = semigroup_apply(op, cfg, r1 + r2, u, return_info=True)
    nu = l2_norm(u)
    excess = max(l2_norm(a) / nu, l2_norm(c) / nu, l2_norm(b) / max(l2_norm(a), 1e-300)) - 1.0 if nu > 0 else 0.0
    hu = op.apply(u)
    gap = l2_norm(yosida_resolvent_step(op, cfg, hu, cfg.sigma) - hu)
    tails = (ia["tail"] + ib["tail"] + ic["tail"]) * nu
    solver = 3.0 * op.solver_tol * nu * math.sqrt(cfg.sigma * (r1 + r2) + 1.0)
    bound = 2.0 * (r1 + r2) * gap + tails + solver
    return LawDefect(l2_norm(b - c), float(bound), float(excess))


# ---------------------------------------------------------------------------
# Krylov-projected family

class SemigroupFamily:
    """``r -> S_sigma(r) u`` for one field ``u`` and all ``r >= 0``.

    Parameters
    ----------
    op : ParabolicOperator
    u : Field
    sigma : float
        Yosida parameter; ``numpy.inf`` gives the limit ``S(r)``.
    pole : float
        Shift of the resolvent used to grow the Krylov basis.
    tol : float
        Stop when the projected semigroup at a set of probe times changes by
        less than ``tol * |u - mean(u)|`` between checks.
    max_dim : int, optional
        Basis size cap; defaults to the number of grid points.
    """

    probe_r = (1e-4, 1e-2, 0.1, 1.0, 10.0)

    def __init__(self, op: ParabolicOperator, u: Field, sigma: float = np.inf, pole: float = 1.0,
                 tol: float = 1e-11, max_dim: int | None = None, check_every: int = 4):
        if u.grid != op.grid:
            raise ValueError("field and operator live on different grids")
        self.op = op
        self.grid = u.grid
        self._null = op.null_space()
        ker, u0 = op.split_null(u.values)
        self.kernel_part = ker
        self.pole = float(pole)
        self.tol = float(tol)
        u0 = u0.ravel()
        self.beta = float(np.linalg.norm(u0))
        N = u0.size
        max_dim = N - 1 if max_dim is None else min(max_dim, N - 1)
        self.converged = True
        # split_null leaves rounding residue of a few ulps times sqrt(N)
        if self.beta == 0.0 or self.beta <= 1e-13 * np.linalg.norm(ker):
            self.beta = 0.0
            self.V = np.zeros((N, 0), dtype=complex)
            self.A = np.zeros((0, 0), dtype=complex)
        else:
            self._build(u0 / self.beta, max_dim, check_every)
        self.set_sigma(sigma)

    # -- construction ------------------------------------------------------
    def _build(self, v0, max_dim, check_every):
        g = self.grid
        V = [v0]
        HV = [self.op._apply_array(v0.reshape(g.shape)).ravel()]
        prev = None
        self.converged = False
        while len(V) < max_dim:
            w = self.op.resolvent_solve(self.pole, Field(g, V[-1])).values.ravel()
            w = self._deflate(w)
            nrm0 = np.linalg.norm(w)
            Vm = np.array(V).T
            for _ in range(2):
                w = w - Vm @ (Vm.conj().T @ w)
                w = self._deflate(w)
            nrm = np.linalg.norm(w)
            if nrm <= 1e-10 * nrm0:
                self.converged = True
                break
            w = w / nrm
            V.append(w)
            HV.append(self.op._apply_array(w.reshape(g.shape)).ravel())
            if len(V) % check_every == 0:
                Vm = np.array(V).T
                A = Vm.conj().T @ np.array(HV).T
                cur = self._probe(A)
                if prev is not None:
                    k0 = prev.shape[1]
                    diff = np.max(np.linalg.norm(cur[:, :k0] - prev, axis=1)
                                  + np.linalg.norm(cur[:, k0:], axis=1))
                    if diff < self.tol:
                        self.converged = True
                        break
                prev = cur
        if not self.converged:
            warnings.warn(f"Krylov basis reached its size cap ({len(V)}) before converging",
                          RuntimeWarning, stacklevel=3)
        self.V = np.array(V).T
        self.A = self.V.conj().T @ np.array(HV).T

    def _deflate(self, w):
        Z = self._null
        return w - Z.T @ (Z.conj() @ w)

    def _probe(self, A):
        k = A.shape[0]
        e1 = np.zeros(k, dtype=complex)
        e1[0] = 1.0
        lam, W = np.linalg.eig(A)
        c = np.linalg.solve(W, e1)
        cols = [(W * np.exp(-r * lam)) @ c for r in self.probe_r]
        return np.array(cols)

    # -- spectral data -------------------------------------------------------
    def set_sigma(self, sigma: float):
        """Switch the Yosida parameter without rebuilding the basis."""
        self.sigma = float(sigma)
        k = self.A.shape[0]
        if k == 0:
            self.G = self.A
            self.lam = np.zeros(0, dtype=complex)
            self.W = np.zeros((0, 0), dtype=complex)
            self.c = np.zeros(0, dtype=complex)
            return
        if math.isinf(self.sigma):
            G = self.A
        else:
            G = self.sigma * np.linalg.solve(self.sigma * np.eye(k) + self.A, self.A)
        self.G = G
        lam, W = np.linalg.eig(G)
        e1 = np.zeros(k, dtype=complex)
        e1[0] = self.beta
        c = np.linalg.solve(W, e1)
        self.eig_condition = float(np.linalg.cond(W))
        # drop eigen-directions that carry no weight (rounding-level content)
        keep = np.abs(c) * np.linalg.norm(W, axis=0) > 1e-14 * self.beta
        self.lam = lam[keep]
        self.W = W[:, keep]
        self.c = c[keep]
        if self.eig_condition > 1e8:
            warnings.warn(f"projected generator is far from normal (cond {self.eig_condition:.1e})",
                          RuntimeWarning, stacklevel=2)

    @property
    def dim(self) -> int:
        return self.A.shape[0]

    def lift(self, coeffs, kernel_weight: complex = 1.0) -> Field:
        """Field ``kernel_weight * P0 u + V W coeffs`` from eigen-coordinates.

        ``P0 u`` is the component of ``u`` in the null space of ``H``.
        """
        base = kernel_weight * self.kernel_part
        if self.dim == 0 or coeffs.size == 0:
            return Field(self.grid, base)
        return Field(self.grid, (self.V @ (self.W @ coeffs)).reshape(self.grid.shape) + base)

    def apply(self, r: float) -> Field:
        """``S_sigma(r) u``."""
        if r < 0:
            raise ValueError("r must be nonnegative")
        return self.lift(np.exp(-r * self.lam) * self.c)

    def apply_function(self, phi, value_at_zero: complex) -> Field:
        """``phi(H_sigma) u`` on the projected space; ``phi(0)`` is given separately."""
        return self.lift(phi(self.lam) * self.c, kernel_weight=value_at_zero)

    def generator_action(self) -> Field:
        """Compressed ``H_sigma u``."""
        return self.lift(self.lam * self.c, kernel_weight=0.0)

    def increment_norms(self, rs: np.ndarray) -> np.ndarray:
        """``|S_sigma(r) u - u|`` (L2 norm) at every ``r`` in ``rs``."""
        scale = math.sqrt(self.grid.cell_volume)
        out = np.empty(len(rs))
        for i0 in range(0, len(rs), 512):
            rr = np.asarray(rs[i0:i0 + 512])
            E = np.expm1(-np.outer(self.lam, rr)) * self.c[:, None]
            out[i0:i0 + 512] = np.linalg.norm(self.W @ E, axis=0) * scale
        return out


# ---------------------------------------------------------------------------
# scalar r-quadrature on the spectrum of the projected generator

_GL_X, _GL_W = np.polynomial.legendre.leggauss(16)


def _panel(a, b):
    half = 0.5 * (b - a)
    return a + half * (_GL_X + 1.0), half * _GL_W


@dataclass
class RRule:
    """Gauss-Legendre panels on ``[r_start, R]`` split at ``r_split``."""

    nodes: np.ndarray
    weights: np.ndarray
    r_start: float
    r_split: float
    R: float

    def lower(self):
        m = self.nodes < self.r_split
        return self.nodes[m], self.weights[m]

    def upper(self):
        m = self.nodes >= self.r_split
        return self.nodes[m], self.weights[m]


def r_rule(lam: np.ndarray, r_start: float, R: float, r_split: float = 1.0,
           per_panel: float = 3.0, max_nodes: int = 400000) -> RRule:
    """Composite rule adapted to the spectrum ``lam``.

    Panels grow geometrically (ratio 2) from ``r_start``; widths are capped
    so that the fastest surviving exponential ``exp(-r lam)`` turns through at
    most ``per_panel`` radians per panel.  A mode counts as surviving while
    ``r Re(lam) < 45``.  A panel boundary is placed at ``r_split``.
    """
    lam = np.asarray(lam)
    order = np.argsort(np.maximum(lam.real, 0.0))
    re_sorted = np.maximum(lam.real, 0.0)[order]
    mag_prefix = np.maximum.accumulate(np.abs(lam)[order]) if lam.size else np.zeros(0)

    def omega(r):
        idx = int(np.searchsorted(re_sorted * r, 45.0, side="left"))
        return float(mag_prefix[idx - 1]) if idx > 0 else 0.0

    nodes, weights = [], []
    a = r_start
    count = 0
    while a < R * (1 - 1e-14):
        w = a if a > 0 else R
        om = omega(a)
        if om > 0:
            w = min(w, per_panel / om)
        b = min(a + w, R)
        if a < r_split < b:
            b = r_split
        x, wt = _panel(a, b)
        nodes.append(x)
        weights.append(wt)
        count += x.size
        if count > max_nodes:
            raise RuntimeError("r-quadrature needs too many nodes; spectrum too wide")
        a = b
    return RRule(np.concatenate(nodes), np.concatenate(weights), r_start, r_split, R)


def power_tail(p: float, lam: np.ndarray, R: float, terms: int = 12) -> np.ndarray:
    """``int_R^inf r^{-p} exp(-r lam) dr`` by repeated integration by parts.

    Uses ``R^{-p} sum_j (-1)^j (p)_j R^{-j} lam^{-j-1} exp(-R lam)``; accurate
    when ``R |lam| >> p + terms``.
    """
    lam = np.asarray(lam, dtype=complex)
    out = np.zeros_like(lam)
    e = np.exp(-R * lam)
    coef = R ** (-p)
    poch = 1.0
    for j in range(terms):
        term = (-1) ** j * poch * coef * R ** (-j) * lam ** (-j - 1) * e
        out = out + term
        poch *= p + j
    return out


def tail_radius(lam: np.ndarray, p: float, a: float = 0.0, terms: int = 12) -> float:
    """Cut-off ``R`` making :func:`power_tail` accurate for all ``lam``."""
    lmin = float(np.min(np.abs(lam))) if np.size(lam) else 1.0
    return max(16.0, 4.0 * (p + terms) / max(lmin, 1e-300), 8.0 * a)
