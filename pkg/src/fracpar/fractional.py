"""Fractional powers ``H^s`` by three independent routes.

``hs_fourier``
    Exact multiplier ``z^s`` on the discrete symbol (constant coefficients).
``hs_balakrishnan``
    ``sin(s pi)/pi int_0^inf lambda^{s-1} (lambda + H)^{-1} H u d lambda``
    with one resolvent solve per node.
``hs_semigroup``
    ``Gamma(-s)^{-1} int_0^inf r^{-s-1} (S(r) - I) u dr`` with the semigroup
    family of :mod:`fracpar.semigroup`.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gamma, roots_jacobi

from .coefficients import CoefficientField
from .grid import Field, apply_multiplier, gradient_norm, half_time_derivative, l2_norm
from .operator import ParabolicOperator, stencil_symbol, time_symbol
from .semigroup import (SemigroupFamily, YosidaConfig, auto_sigma, power_tail, r_rule,
                        tail_radius)

S_MIN, S_MAX = 0.01, 0.99
SCHEMES = ("log-trapezoid", "gauss-jacobi", "gauss-laguerre", "r-panels")


class QuadratureWarning(RuntimeWarning):
    """Estimated quadrature remainder above the requested tolerance."""


def c_s(s: float) -> float:
    """``2^{1-2s} Gamma(1-s) / Gamma(s)``."""
    if not 0.0 < s < 1.0:
        raise ValueError("s must lie in (0, 1)")
    return float(2.0 ** (1.0 - 2.0 * s) * gamma(1.0 - s) / gamma(s))


def _check_s(s):
    if not S_MIN <= s <= S_MAX:
        raise ValueError(f"s must lie in [{S_MIN}, {S_MAX}], got {s}")


@dataclass(frozen=True)
class QuadratureSpec:
    """Quadrature settings.

    For ``log-trapezoid`` the integration variable is ``y = log(lambda)`` on
    ``[lower, upper]`` with equal weights.  The nodes beyond both ends are
    summed in closed form using the leading behaviour of the integrand,
    ``g(lambda) ~ g(lambda_min)`` below and ``lambda g(lambda) ~ const``
    above, which gives geometric series in the node index.  For ``gauss-jacobi`` the
    ``lambda`` axis is split at 1 and each half uses Gauss-Jacobi nodes with
    the algebraic endpoint weight; ``lower``/``upper`` are unused.
    """

    scheme: str = "log-trapezoid"
    node_count: int = 200
    lower: float = -30.0
    upper: float = 30.0
    target_tol: float = 1e-8

    def __post_init__(self):
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")
        if self.node_count < 16:
            raise ValueError("node_count must be at least 16")
        if not self.upper > self.lower:
            raise ValueError("upper must exceed lower")
        if not self.target_tol > 0:
            raise ValueError("target_tol must be positive")


@dataclass
class RouteInfo:
    """Diagnostics returned alongside a route result."""

    route: str
    nodes: int = 0
    remainder_estimate: float = 0.0
    extra: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Fourier route

def _constant_symbol(u: Field, coeffs, time_derivative_mode: str) -> np.ndarray:
    g = u.grid
    if isinstance(coeffs, ParabolicOperator):
        time_derivative_mode = coeffs.time_derivative_mode
        coeffs = coeffs.coeffs
    if coeffs is None:
        mat = np.eye(g.spatial_dims)
    elif isinstance(coeffs, CoefficientField):
        if not coeffs.is_constant:
            raise ValueError("the Fourier route needs constant coefficients")
        if coeffs.grid != g:
            raise ValueError("coefficients live on a different grid")
        mat = coeffs.mean_matrix()
    else:
        mat = np.atleast_2d(np.asarray(coeffs, dtype=complex))
        if mat.shape == (1, 1):
            mat = mat[0, 0] * np.eye(g.spatial_dims)
        if mat.shape != (g.spatial_dims,) * 2:
            raise ValueError("matrix shape does not match the grid dimension")
    return time_symbol(g, time_derivative_mode) + stencil_symbol(g, mat)


def fractional_symbol(z: np.ndarray, s: float) -> np.ndarray:
    """Principal ``z^s`` with ``0^s = 0``."""
    z = np.asarray(z, dtype=complex)
    out = np.zeros_like(z)
    nz = z != 0
    out[nz] = np.exp(s * np.log(z[nz]))
    return out


def hs_fourier(u: Field, s: float, coeffs=None, time_derivative_mode: str = "spectral") -> Field:
    """``H^s u`` by the exact multiplier ``z^s`` (principal branch).

    Parameters
    ----------
    u : Field
    s : float
        Exponent; any positive value is accepted here, which makes exponent
        laws testable.
    coeffs : None, array_like, CoefficientField or ParabolicOperator
        Constant coefficient matrix (``None`` means the identity).  When an
        operator is passed its time-derivative mode is used.
    """
    if not s > 0:
        raise ValueError("s must be positive")
    z = np.broadcast_to(_constant_symbol(u, coeffs, time_derivative_mode), u.grid.shape)
    return apply_multiplier(u, fractional_symbol(z, s))


# ---------------------------------------------------------------------------
# Balakrishnan route

def hs_balakrishnan(op: ParabolicOperator, u: Field, s: float, quad: QuadratureSpec | None = None,
                    return_info: bool = False):
    """``H^s u`` from the Balakrishnan integral.

    The remainder estimate covers the truncated ends of the log-trapezoid
    rule; a :class:`QuadratureWarning` is issued when it exceeds
    ``quad.target_tol`` relative to the result.
    """
    _check_s(s)
    quad = quad or QuadratureSpec()
    # rounding-level content of Hu in the null space would be amplified by
    # lambda^{s-1} near lambda = 0
    hu = Field(u.grid, op.split_null(op.apply(u).values)[1])
    pref = math.sin(s * math.pi) / math.pi
    info = RouteInfo("balakrishnan")
    if l2_norm(hu) == 0.0:
        out = Field.zeros(u.grid)
        return (out, info) if return_info else out
    if quad.scheme == "log-trapezoid":
        n = quad.node_count
        y = np.linspace(quad.lower, quad.upper, n)
        h = y[1] - y[0]
        lam = np.exp(y)
        w = np.full(n, h)
        acc = np.zeros(u.grid.shape, dtype=complex)
        g_first = g_second = g_prev = None
        for j in range(n):
            gj = op.split_null(op.resolvent_solve(lam[j], hu).values)[1]
            acc += w[j] * lam[j] ** s * gj
            if j == 0:
                g_first = gj
            elif j == 1:
                g_second = gj
            if j == n - 2:
                g_prev = gj
        g_last = gj
        lo, hi = lam[0], lam[-1]
        # nodes beyond the ends, summed as geometric series of the leading terms
        ql, qu = math.exp(-s * h), math.exp(-(1.0 - s) * h)
        acc += h * (g_first * lo ** s * ql / (1.0 - ql) + g_last * hi ** s * qu / (1.0 - qu))
        out = Field(u.grid, pref * acc)
        # next-order terms of both tails
        dlow = np.linalg.norm(g_second - g_first) / (lam[1] - lam[0])
        h2u = np.linalg.norm(hi * g_last - lam[-2] * g_prev) / (1.0 / lam[-2] - 1.0 / hi)
        scale = math.sqrt(u.grid.cell_volume)
        est = pref * scale * (dlow * lo ** (1 + s) / (1 + s) + h2u * hi ** (s - 2) / (2 - s))
        info.nodes = n
    elif quad.scheme == "gauss-jacobi":
        n = quad.node_count // 2
        x0, w0 = roots_jacobi(n, 0.0, s - 1.0)
        x1, w1 = roots_jacobi(n, 0.0, -s)
        acc = np.zeros(u.grid.shape, dtype=complex)
        for xj, wj in zip(x0, w0):
            lam = 0.5 * (1.0 + xj)
            acc += 2.0 ** (-s) * wj * op.split_null(op.resolvent_solve(lam, hu).values)[1]
        for xj, wj in zip(x1, w1):
            mu = 0.5 * (1.0 + xj)
            # mu^{-s} (1 + mu H)^{-1} H u = mu^{-s-1} (1/mu + H)^{-1} H u
            acc += 2.0 ** (s - 1.0) * wj * mu ** (-1.0) * op.resolvent_solve(1.0 / mu, hu).values
        out = Field(u.grid, pref * acc)
        est = 0.0
        info.nodes = 2 * n
    else:
        raise ValueError(f"scheme {quad.scheme!r} is not available for the Balakrishnan route")
    nrm = l2_norm(out)
    info.remainder_estimate = float(est / nrm) if nrm > 0 else float(est)
    if info.remainder_estimate > quad.target_tol:
        warnings.warn(f"Balakrishnan remainder estimate {info.remainder_estimate:.2e} exceeds "
                      f"target {quad.target_tol:.2e}", QuadratureWarning, stacklevel=2)
    return (out, info) if return_info else out


# ---------------------------------------------------------------------------
# semigroup route

R_LOW = 1e-10


def semigroup_hs_symbol(lam: np.ndarray, s: float, r_lo: float = R_LOW, per_panel: float = 3.0):
    """Quadrature of ``Gamma(-s)^{-1} int r^{-s-1} (exp(-r lam) - 1) dr`` per ``lam``.

    ``[0, r_lo]`` uses the first-order expansion, ``[r_lo, 1]`` integrates
    ``expm1`` on geometric panels, ``[1, R]`` integrates ``exp(-r lam)`` and
    ``[R, inf)`` uses :func:`~fracpar.semigroup.power_tail`.  The constant
    part on ``[1, inf)`` is ``1/s``.

    Returns
    -------
    phi : ndarray
        Approximation of ``lam^s``.
    rule : RRule
    """
    lam = np.asarray(lam, dtype=complex)
    R = tail_radius(lam, s + 1.0)
    rule = r_rule(lam, r_lo, R, per_panel=per_panel)
    rl, wl = rule.lower()
    ru, wu = rule.upper()
    acc = np.zeros_like(lam)
    for i0 in range(0, rl.size, 1024):
        rr, ww = rl[i0:i0 + 1024], wl[i0:i0 + 1024]
        acc += np.expm1(-np.outer(lam, rr)) @ (ww * rr ** (-s - 1.0))
    for i0 in range(0, ru.size, 1024):
        rr, ww = ru[i0:i0 + 1024], wu[i0:i0 + 1024]
        acc += np.exp(-np.outer(lam, rr)) @ (ww * rr ** (-s - 1.0))
    acc += power_tail(s + 1.0, lam, R)
    acc -= 1.0 / s
    acc -= lam * r_lo ** (1.0 - s) / (1.0 - s)
    return acc / gamma(-s), rule


def hs_semigroup(op: ParabolicOperator, u: Field, s: float, cfg: YosidaConfig | None = None,
                 quad: QuadratureSpec | None = None, family: SemigroupFamily | None = None,
                 return_info: bool = False):
    """``H^s u`` from the semigroup integral.

    The semigroup is the Krylov-projected Yosida family; the ``r`` integral is
    split at ``r = 1``.  At every quadrature node the increment obeys
    ``|S(r) u - u| <= min(r |Hu|, 2 |u|)``; a violation raises
    ``RuntimeError``.
    """
    _check_s(s)
    cfg = cfg or YosidaConfig()
    if family is None:
        sigma = cfg.sigma if cfg.sigma is not None else auto_sigma(op, R_LOW)
        family = SemigroupFamily(op, u, sigma=sigma)
    info = RouteInfo("semigroup", extra={"sigma": family.sigma, "krylov_dim": family.dim})
    if family.dim == 0:
        out = Field.zeros(u.grid)
        return (out, info) if return_info else out
    phi, rule = semigroup_hs_symbol(family.lam, s)
    out = family.lift(phi * family.c, kernel_weight=0.0)
    info.nodes = rule.nodes.size
    # integrand bound at every node
    nu, nhu = l2_norm(u), l2_norm(op.apply(u))
    inc = family.increment_norms(rule.nodes)
    bound = np.minimum(rule.nodes * nhu, 2.0 * nu)
    slack = 1e-8 * bound + 1e-12 * nu
    excess = float(np.max(inc - bound - slack))
    info.extra["max_increment_ratio"] = float(np.max(inc / np.maximum(bound, 1e-300)))
    if excess > 0:
        raise RuntimeError(f"semigroup increment exceeds min(r|Hu|, 2|u|) by {excess:.3e}")
    return (out, info) if return_info else out


# ---------------------------------------------------------------------------
# norms

def graph_norm(u: Field, hs_u: Field) -> float:
    """``|u| + |H^s u|`` for a precomputed ``H^s u``."""
    return l2_norm(u) + l2_norm(hs_u)


@dataclass
class KatoReport:
    ratio: float
    mode_min: float
    mode_max: float


def kato_ratio(u: Field) -> KatoReport:
    """``|H^{1/2} u| / (|grad u|^2 + |D_t^{1/2} u|^2)^{1/2}`` for ``A = I``.

    Uses the factorized time derivative so that the Nyquist mode carries the
    symbol ``i |tau|`` in both numerator and denominator.  ``mode_min`` and
    ``mode_max`` are the extreme per-mode ratios over modes present in ``u``.
    """
    g = u.grid
    num = l2_norm(hs_fourier(u, 0.5, None, time_derivative_mode="factorized"))
    den = math.sqrt(gradient_norm(u) ** 2 + l2_norm(half_time_derivative(u)) ** 2)
    z = np.broadcast_to(time_symbol(g, "factorized") + g.stencil_symbol(), g.shape)
    dsym = np.broadcast_to(g.stencil_symbol() + np.abs(g.tau()), g.shape)
    c = np.abs(np.fft.fftn(u.values))
    m = (c > 1e-14 * c.max()) & (dsym > 0)
    per = np.sqrt(np.abs(z[m]) / dsym[m])
    return KatoReport(num / den if den > 0 else float("nan"), float(per.min()), float(per.max()))
