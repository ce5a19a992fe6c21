"""Extension profile ``U(lambda) u`` and its Dirichlet-to-Neumann limit.

The profile is

    U(lambda) u = Gamma(s)^{-1} (lambda/2)^{2s} int_0^inf r^{-s-1} exp(-lambda^2/(4r)) S(r) u dr,

evaluated with the semigroup family of :mod:`fracpar.semigroup`.  On each
eigen-direction of the projected generator the ``r`` integral is a scalar
quadrature: Gauss-Legendre panels from ``lambda^2/160`` (below which the
Gaussian factor is under ``e^{-40}``) to a radius ``R``, and beyond ``R`` the
expansion ``exp(-a/r) = sum_m (-a/r)^m / m!`` combined with
:func:`~fracpar.semigroup.power_tail`.
"""
from __future__ import annotations

import math
import os
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.special import gamma, gammainc, roots_genlaguerre
from scipy.sparse.linalg import LinearOperator, gmres

from .fractional import QuadratureSpec, R_LOW, _check_s
from .grid import Field, energy_norm, l2_inner, l2_norm, read_field, write_field
from .operator import ParabolicOperator, SolverError
from .semigroup import SemigroupFamily, YosidaConfig, auto_sigma, power_tail, r_rule, tail_radius


class LadderDivergence(RuntimeError):
    """Difference quotients on the ladder do not form a Cauchy sequence."""


@dataclass
class ExtensionProfile:
    """Slices ``U(lambda) u`` on a strictly increasing positive grid."""

    s: float
    lambdas: np.ndarray
    slices: list
    source: Field
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.lambdas = np.asarray(self.lambdas, dtype=float)
        if self.lambdas.ndim != 1 or len(self.slices) != self.lambdas.size:
            raise ValueError("one slice per lambda is required")
        if np.any(self.lambdas <= 0) or np.any(np.diff(self.lambdas) <= 0):
            raise ValueError("lambdas must be positive and strictly increasing")

    def slice_norms(self) -> np.ndarray:
        return np.array([l2_norm(v) for v in self.slices])

    def save(self, directory, digest: str = "") -> None:
        """Write one FRACPAR1 file per slice plus ``manifest.txt``."""
        os.makedirs(directory, exist_ok=True)
        names = []
        for i, v in enumerate(self.slices):
            name = f"slice_{i:04d}.fp1"
            write_field(os.path.join(directory, name), v)
            names.append(name)
        write_field(os.path.join(directory, "source.fp1"), self.source)
        with open(os.path.join(directory, "manifest.txt"), "w") as fh:
            fh.write(f"s={self.s!r}\n")
            fh.write("lambdas=" + ",".join(repr(float(x)) for x in self.lambdas) + "\n")
            fh.write("slices=" + ",".join(names) + "\n")
            fh.write(f"config_digest={digest}\n")

    @classmethod
    def load(cls, directory) -> "ExtensionProfile":
        kv = {}
        with open(os.path.join(directory, "manifest.txt")) as fh:
            for line in fh:
                if "=" in line:
                    k, v = line.rstrip("\n").split("=", 1)
                    kv[k] = v
        lambdas = [float(x) for x in kv["lambdas"].split(",")]
        slices = [read_field(os.path.join(directory, n)) for n in kv["slices"].split(",")]
        src = read_field(os.path.join(directory, "source.fp1"))
        return cls(float(kv["s"]), np.array(lambdas), slices, src,
                   {"config_digest": kv.get("config_digest", "")})


@dataclass
class TwoSidedProfile:
    """Even reflection; ``lambdas`` symmetric about 0, optionally including 0."""

    s: float
    lambdas: np.ndarray
    slices: list


@dataclass
class AugmentedCoefficients:
    """Block matrix ``B = diag(1, A)`` with weight ``|lambda|^{1-2s}``."""

    coeffs: object
    s: float

    @property
    def kappa(self) -> float:
        return max(1.0 / self.coeffs.c1, self.coeffs.c2, 1.0)

    def weight(self, lam):
        return np.abs(lam) ** (1.0 - 2.0 * self.s)

    def matrices(self) -> np.ndarray:
        c = self.coeffs
        n = c.grid.spatial_dims
        B = np.zeros(c.entries.shape[:-2] + (n + 1, n + 1), dtype=c.entries.dtype)
        B[..., 0, 0] = 1.0
        B[..., 1:, 1:] = c.entries
        return B

    def check(self, samples: int = 8, seed: int = 3) -> dict:
        """Sample ``Re(B xi . conj xi) >= |xi|^2 / kappa`` and ``|B xi . zeta| <= kappa``."""
        from .grid import Lcg64
        n = self.coeffs.grid.spatial_dims + 1
        B = self.matrices().reshape(-1, n, n)
        rng = Lcg64(seed)
        vecs = [np.eye(n)[i] for i in range(n)]
        for _ in range(samples):
            v = rng.uniform(2 * n) * 2 - 1
            v = v[:n] + 1j * v[n:]
            vecs.append(v / np.linalg.norm(v))
        lo, hi = np.inf, 0.0
        for xi in vecs:
            bxi = B @ xi
            lo = min(lo, float(np.min((bxi @ np.conj(xi)).real)))
            for zeta in vecs:
                hi = max(hi, float(np.max(np.abs(bxi @ zeta))))
        k = self.kappa
        return {"min_real": lo, "max_bilinear": hi, "kappa": k,
                "ok": bool(lo >= 1.0 / k - 1e-12 and hi <= k + 1e-12)}


# ---------------------------------------------------------------------------
# scalar kernels on the spectrum

def _start(a):
    return a / 40.0 if a > 0 else R_LOW


def profile_symbol(lam: np.ndarray, s: float, height: float, scheme: str = "r-panels",
                   node_count: int = 32) -> np.ndarray:
    """``U(height)`` on eigenvalues ``lam`` (value for ``lam = 0`` is 1)."""
    lam = np.asarray(lam, dtype=complex)
    a = 0.25 * height * height
    if scheme == "gauss-laguerre":
        tau, w = roots_genlaguerre(node_count, s - 1.0)
        r = a / tau
        return (np.exp(-np.outer(lam, r)) @ w) / gamma(s)
    if scheme != "r-panels":
        raise ValueError(f"unknown profile scheme {scheme!r}")
    if lam.size == 0:
        return lam
    R = tail_radius(lam, s + 1.0, a)
    rule = r_rule(lam, _start(a), R)
    kr = rule.weights * rule.nodes ** (-s - 1.0) * np.exp(-a / rule.nodes)
    acc = np.zeros_like(lam)
    for i0 in range(0, kr.size, 1024):
        acc += np.exp(-np.outer(lam, rule.nodes[i0:i0 + 1024])) @ kr[i0:i0 + 1024]
    acc += _gauss_tail(lam, s, a, R)
    return acc * a ** s / gamma(s)


def _gauss_tail(lam, s, a, R):
    """``int_R^inf r^{-s-1} exp(-a/r) exp(-r lam) dr`` by expanding ``exp(-a/r)``."""
    out = np.zeros_like(lam)
    term = 1.0
    m = 0
    while True:
        out = out + term * power_tail(s + 1.0 + m, lam, R)
        m += 1
        term *= -a / m
        if abs(term) * R ** (-m) < 1e-18 or m > 12:
            break
    return out


def profile_weight_total(s: float, height: float, scheme: str = "r-panels",
                         node_count: int = 32, lam_ref: Sequence[float] = (1.0,)) -> float:
    """Quadrature weights of the profile kernel summed, plus the analytic tail.

    Equals 1 up to quadrature error; ``lam_ref`` fixes the spectrum used to
    build the panels.
    """
    a = 0.25 * height * height
    if scheme == "gauss-laguerre":
        _, w = roots_genlaguerre(node_count, s - 1.0)
        return float(np.sum(w) / gamma(s))
    lam = np.asarray(lam_ref, dtype=complex)
    R = tail_radius(lam, s + 1.0, a)
    rule = r_rule(lam, _start(a), R)
    tot = np.sum(rule.weights * rule.nodes ** (-s - 1.0) * np.exp(-a / rule.nodes)) * a ** s / gamma(s)
    tail = gammainc(s, a / R)
    return float(tot + tail)


def dtn_quotient_symbol(lam: np.ndarray, s: float, height: float) -> np.ndarray:
    """``-height^{-2s} (U(height) - 1)`` on eigenvalues ``lam``."""
    lam = np.asarray(lam, dtype=complex)
    if lam.size == 0:
        return lam
    a = 0.25 * height * height
    R = tail_radius(lam, s + 1.0, a)
    rule = r_rule(lam, _start(a), R, r_split=1.0)
    rl, wl = rule.lower()
    ru, wu = rule.upper()
    acc = np.zeros_like(lam)
    kl = wl * rl ** (-s - 1.0) * np.exp(-a / rl)
    ku = wu * ru ** (-s - 1.0) * np.exp(-a / ru)
    for i0 in range(0, kl.size, 1024):
        acc += np.expm1(-np.outer(lam, rl[i0:i0 + 1024])) @ kl[i0:i0 + 1024]
    for i0 in range(0, ku.size, 1024):
        acc += np.exp(-np.outer(lam, ru[i0:i0 + 1024])) @ ku[i0:i0 + 1024]
    acc += _gauss_tail(lam, s, a, R)
    # int_1^inf r^{-s-1} exp(-a/r) dr
    acc -= gammainc(s, a) * gamma(s) * a ** (-s) if a > 0 else 1.0 / s
    return -acc * 2.0 ** (-2.0 * s) / gamma(s)


# ---------------------------------------------------------------------------
# profile and DtN

def _family(op, u, cfg, family):
    if family is not None:
        return family
    cfg = cfg or YosidaConfig()
    sigma = cfg.sigma if cfg.sigma is not None else auto_sigma(op, R_LOW)
    return SemigroupFamily(op, u, sigma=sigma)


def default_ladder(lambda_max: float = 8.0, lambda_min: float = 1e-3) -> np.ndarray:
    """Geometric heights from ``lambda_min`` to ``lambda_max`` with ratio ``sqrt(2)``."""
    n = int(math.floor(math.log(lambda_max / lambda_min) / math.log(math.sqrt(2.0)))) + 1
    return lambda_min * math.sqrt(2.0) ** np.arange(n)


def extension_profile(op: ParabolicOperator, u: Field, s: float, lambdas=None,
                      cfg: YosidaConfig | None = None, quad: QuadratureSpec | None = None,
                      family: SemigroupFamily | None = None) -> ExtensionProfile:
    """Profile slices ``U(lambda) u`` for every height in ``lambdas``.

    ``quad.scheme`` may be ``"r-panels"`` (default) or ``"gauss-laguerre"``;
    the latter applies ``quad.node_count`` generalized Laguerre nodes to the
    substituted integral ``Gamma(s)^{-1} int tau^{s-1} e^{-tau} S(lambda^2/(4 tau)) d tau``.
    """
    _check_s(s)
    lambdas = default_ladder() if lambdas is None else np.asarray(lambdas, dtype=float)
    if np.any(lambdas <= 0):
        raise ValueError("heights must be positive")
    scheme = "r-panels"
    nodes = 32
    if quad is not None and quad.scheme in ("gauss-laguerre", "r-panels"):
        scheme = quad.scheme
        nodes = quad.node_count if scheme == "gauss-laguerre" else nodes
    fam = _family(op, u, cfg, family)
    slices = []
    for lam in lambdas:
        phi = profile_symbol(fam.lam, s, float(lam), scheme, nodes)
        slices.append(fam.lift(phi * fam.c, kernel_weight=1.0))
    return ExtensionProfile(s, lambdas, slices, u,
                            {"sigma": fam.sigma, "krylov_dim": fam.dim, "scheme": scheme})


def richardson_exponents(s: float, count: int) -> list:
    """Leading exponents ``2-2s, 2, 4-2s, 4, ...`` of the quotient expansion."""
    ex = []
    k = 1
    while len(ex) < count:
        for p in (2 * k - 2 * s, 2.0 * k):
            if all(abs(p - q) > 0.05 for q in ex):
                ex.append(p)
        k += 1
    return sorted(ex)[:count]


@dataclass
class DtNResult:
    """Extrapolated ``c_s H^s u`` and ladder diagnostics."""

    field: Field
    heights: np.ndarray
    quotients: list
    exponents: list
    successive_differences: np.ndarray
    flux_constant: float

    def ladder_errors(self, reference: Field) -> np.ndarray:
        """``|q_k - reference|`` for each rung."""
        return np.array([l2_norm(q - reference) for q in self.quotients])


def dtn_limit(op: ParabolicOperator, u: Field, s: float, cfg: YosidaConfig | None = None,
              lambda0: float = 0.1, rungs: int = 4,
              ratio: float = 2.0, family: SemigroupFamily | None = None) -> DtNResult:
    """Neumann limit ``-lim lambda^{1-2s} dU/dlambda`` at ``lambda = 0``.

    Uses the scaled difference quotients ``-2s lambda^{-2s} (U(lambda) u - u)``
    on ``lambda0 / ratio^k``, ``k < rungs``, extrapolated with the known
    exponents of :func:`richardson_exponents`.  The factor ``2s`` converts
    the plain difference quotient, whose limit is ``c_s H^s u / (2s)``, to
    the derivative form, whose limit is ``c_s H^s u``.

    Raises
    ------
    LadderDivergence
        If successive quotient differences do not decrease.
    """
    _check_s(s)
    if rungs < 2:
        raise ValueError("need at least two rungs")
    fam = _family(op, u, cfg, family)
    heights = lambda0 / ratio ** np.arange(rungs)
    coeffs = []
    for h in heights:
        coeffs.append(2.0 * s * dtn_quotient_symbol(fam.lam, s, float(h)) * fam.c)
    quotients = [fam.lift(c, kernel_weight=0.0) for c in coeffs]
    diffs = np.array([l2_norm(quotients[k + 1] - quotients[k]) for k in range(rungs - 1)])
    scale = max(l2_norm(q) for q in quotients)
    if scale > 0 and np.any(diffs[1:] > diffs[:-1] * (1 + 1e-9) + 1e-13 * scale):
        raise LadderDivergence(f"quotient ladder is not contracting: differences {diffs}")
    ex = richardson_exponents(s, rungs - 1)
    M = np.ones((rungs, rungs))
    for j, p in enumerate(ex):
        M[:, j + 1] = heights ** p
    sol = np.linalg.solve(M, np.array(coeffs))
    limit = fam.lift(sol[0], kernel_weight=0.0)
    nu, nhu = l2_norm(u), l2_norm(op.apply(u))
    flux = max(l2_norm(q) / (nu + nhu * max(1.0, h ** (2 * (1 - s)))) if nu > 0 else 0.0
               for q, h in zip(quotients, heights))
    return DtNResult(limit, heights, quotients, ex, diffs, float(flux))


# ---------------------------------------------------------------------------
# reflection, weighted norms and weak residuals

def reflect_even(p: ExtensionProfile, include_zero: bool = True) -> TwoSidedProfile:
    """Two-sided profile with ``U(-lambda) = U(lambda)``; the source sits at 0."""
    lam = p.lambdas
    neg = -lam[::-1]
    sl = list(p.slices[::-1])
    if include_zero:
        return TwoSidedProfile(p.s, np.concatenate([neg, [0.0], lam]), sl + [p.source] + list(p.slices))
    return TwoSidedProfile(p.s, np.concatenate([neg, lam]), sl + list(p.slices))


def weighted_hat_weights(nodes: np.ndarray, s: float) -> np.ndarray:
    """Exact ``int hat_i(lambda) |lambda|^{1-2s} d lambda`` for the hat basis on ``nodes``.

    Nodes must not straddle 0 inside a single interval (0 may be a node).
    """
    x = np.asarray(nodes, dtype=float)
    p = 1.0 - 2.0 * s
    w = np.zeros_like(x)
    for i in range(x.size - 1):
        a, b = x[i], x[i + 1]
        if a < 0 < b:
            raise ValueError("an interval straddles 0; add 0 as a node")
        sgn = 1.0 if b > 0 else -1.0
        lo, hi = sorted((abs(a), abs(b)))
        m0 = (hi ** (p + 1) - lo ** (p + 1)) / (p + 1)
        m1 = (hi ** (p + 2) - lo ** (p + 2)) / (p + 2)
        L = hi - lo
        # on |lambda| in [lo, hi]: hat at lo = (hi - y)/L, hat at hi = (y - lo)/L
        w_lo = (hi * m0 - m1) / L
        w_hi = (m1 - lo * m0) / L
        if sgn > 0:
            w[i] += w_lo
            w[i + 1] += w_hi
        else:
            w[i] += w_hi
            w[i + 1] += w_lo
    return w


def _lambda_derivatives(p: TwoSidedProfile):
    vals = np.array([v.values for v in p.slices])
    return np.gradient(vals, p.lambdas, axis=0)


def weighted_energy_norm(p: TwoSidedProfile, interval: tuple) -> float:
    """``(int (|U|_E^2 + |U'|^2) |lambda|^{1-2s} d lambda)^{1/2}`` over ``interval``.

    The energy density is interpolated linearly between nodes and integrated
    exactly against the weight; the node ``lambda = 0`` is excluded.
    """
    lo, hi = interval
    lam = p.lambdas
    m = (lam >= lo) & (lam <= hi) & (lam != 0)
    if np.count_nonzero(m) < 3:
        raise ValueError("fewer than 3 heights inside the interval")
    d = _lambda_derivatives(p)
    g = p.slices[0].grid
    dens = np.array([energy_norm(p.slices[i]) ** 2
                     + float(np.sum(np.abs(d[i]) ** 2) * g.cell_volume) for i in range(lam.size)])
    tot = 0.0
    for side in (lam < 0, lam > 0):
        idx = np.where(m & side)[0]
        if idx.size >= 2:
            tot += float(np.dot(weighted_hat_weights(lam[idx], p.s), dens[idx]))
    return math.sqrt(tot)


@dataclass
class TestFunction:
    """``Phi(lambda, x, t) = phi(lambda) psi(x, t)``."""

    phi: Callable
    dphi: Callable
    psi: Field
    support: tuple


def bump(center: float, halfwidth: float):
    """Smooth compactly supported bump and its derivative."""
    def phi(lam):
        y = (np.asarray(lam, dtype=float) - center) / halfwidth
        out = np.zeros_like(y)
        m = np.abs(y) < 1
        out[m] = np.exp(1.0 - 1.0 / (1.0 - y[m] ** 2))
        return out

    def dphi(lam):
        y = (np.asarray(lam, dtype=float) - center) / halfwidth
        out = np.zeros_like(y)
        m = np.abs(y) < 1
        ym = y[m]
        out[m] = np.exp(1.0 - 1.0 / (1.0 - ym ** 2)) * (-2.0 * ym / (1.0 - ym ** 2) ** 2) / halfwidth
        return out

    return phi, dphi


def weak_residual(p: TwoSidedProfile, op: ParabolicOperator, s: float,
                  test_functions: Sequence[TestFunction], traditional: bool = False,
                  dtn_field: Field | None = None) -> float:
    """Largest normalized residual of the weighted weak formulation.

    For each test function the residual is
    ``int [a(U, Phi) + <dU/dlambda, dPhi/dlambda>] |lambda|^{1-2s} d lambda``
    with ``a`` the form of ``op`` (``traditional=True`` moves the time
    derivative onto the test function).  The integrand is linear between
    heights and the weight is integrated exactly; the residual is divided by
    ``|Phi|_L2w |U|_W`` where both norms are taken over the support of ``phi``.

    The even reflection has a flux jump ``2 c_s H^s u`` at ``lambda = 0``, so a
    test function whose support contains 0 leaves ``2 phi(0) <c_s H^s u, psi>``.
    That term vanishes where ``H^s u = 0`` on the support of ``psi``; passing
    ``dtn_field`` (the field ``c_s H^s u``) subtracts it for general ``u``.
    """
    lam = p.lambdas
    if not np.all(np.diff(lam) > 0):
        raise ValueError("heights must increase")
    d = _lambda_derivatives(p)
    g = p.slices[0].grid
    worst = 0.0
    for tf in test_functions:
        lo, hi = tf.support
        if lo <= lam[0] or hi >= lam[-1]:
            raise ValueError("test function support must lie inside the height range")
        ph, dph = tf.phi(lam), tf.dphi(lam)
        active = np.where((ph != 0) | (dph != 0))[0]
        if active.size == 0:
            continue
        i0, i1 = max(active[0] - 1, 0), min(active[-1] + 1, lam.size - 1)
        idx = np.arange(i0, i1 + 1)
        integrand = np.zeros(idx.size, dtype=complex)
        for k, i in enumerate(idx):
            if ph[i] == 0 and dph[i] == 0:
                continue
            ui = p.slices[i]
            if traditional:
                a = op.form_traditional(ui, tf.psi)
            else:
                a = op.form(ui, tf.psi)
            b = l2_inner(Field(g, d[i]), tf.psi)
            integrand[k] = ph[i] * a + dph[i] * b
        w = _two_sided_weights(lam[idx], s)
        total = np.dot(w, integrand)
        if dtn_field is not None:
            total -= 2.0 * float(tf.phi(np.array([0.0]))[0]) * l2_inner(dtn_field, tf.psi)
        res = abs(total)
        # normalization
        psi_e = energy_norm(tf.psi)
        dens_phi = (ph[idx] ** 2 + dph[idx] ** 2) * psi_e ** 2
        dens_u = np.array([energy_norm(p.slices[i]) ** 2 + float(np.sum(np.abs(d[i]) ** 2) * g.cell_volume)
                           for i in idx])
        nphi = math.sqrt(abs(np.dot(w, dens_phi)))
        nu = math.sqrt(abs(np.dot(w, dens_u)))
        if nphi * nu > 0:
            worst = max(worst, res / (nphi * nu))
    return worst


def _two_sided_weights(x, s):
    x = np.asarray(x, dtype=float)
    if x[0] < 0 < x[-1] and not np.any(x == 0):
        raise ValueError("height grid crossing 0 must contain 0")
    w = np.zeros_like(x)
    neg = x <= 0
    pos = x >= 0
    if np.count_nonzero(neg) >= 2:
        w[neg] += weighted_hat_weights(x[neg], s)
    if np.count_nonzero(pos) >= 2:
        w[pos] += weighted_hat_weights(x[pos], s)
    return w


# ---------------------------------------------------------------------------
# direct solve of the weighted two-point problem in lambda

def solve_extension_bvp(op: ParabolicOperator, u: Field, s: float, lambda_max: float, nlambda: int,
                        cfg: YosidaConfig | None = None, family: SemigroupFamily | None = None,
                        far_field: Field | None = None) -> ExtensionProfile:
    """Finite-volume solve of ``(lambda^{1-2s} U')' = lambda^{1-2s} H U``.

    Uniform heights ``lambda_i = i h``, ``h = lambda_max / nlambda``.  The flux
    between neighbours is ``(U_{i+1} - U_i) / rho_i`` with
    ``rho_i = int lambda^{2s-1}`` over the interval, which is exact for the
    constant-flux profiles that dominate near ``lambda = 0``.  Cell masses are
    ``m_i = int lambda^{1-2s}`` over the dual cell.  ``U(0) = u`` and
    ``U(lambda_max)`` is taken from :func:`extension_profile` unless
    ``far_field`` is given.  The coupled system is solved by GMRES,
    preconditioned by diagonalizing the ``lambda`` operator and dividing by the
    mean-coefficient symbol in space-time.
    """
    _check_s(s)
    if nlambda < 16:
        raise ValueError("nlambda must be at least 16")
    g = u.grid
    N = nlambda
    h = lambda_max / N
    lam = h * np.arange(N + 1)
    rho = (lam[1:] ** (2 * s) - lam[:-1] ** (2 * s)) / (2 * s)
    half = np.concatenate([[0.0], 0.5 * (lam[:-1] + lam[1:]), [lam[-1]]])
    mass = (half[2:-1] ** (2 - 2 * s) - half[1:-2] ** (2 - 2 * s)) / (2 - 2 * s)
    # interior unknowns i = 1..N-1; L U = -(flux_{i+1/2} - flux_{i-1/2}) / m_i
    n_in = N - 1
    T = np.zeros((n_in, n_in))
    for k in range(n_in):
        i = k + 1
        T[k, k] = 1.0 / rho[i] + 1.0 / rho[i - 1]
        if k > 0:
            T[k, k - 1] = -1.0 / rho[i - 1]
        if k < n_in - 1:
            T[k, k + 1] = -1.0 / rho[i]
    msq = np.sqrt(mass)
    Ssym = T / np.outer(msq, msq)
    ev, Q = np.linalg.eigh(Ssym)
    if far_field is None:
        prof = extension_profile(op, u, s, [lambda_max], cfg=cfg, family=family)
        far_field = prof.slices[0]
    rhs = np.zeros((n_in,) + g.shape, dtype=complex)
    rhs[0] = u.values / (rho[0] * mass[0])
    rhs[-1] += far_field.values / (rho[N - 1] * mass[-1])
    Lmat = T / mass[:, None]
    shape = (n_in,) + g.shape

    def matvec(x):
        X = x.reshape(shape)
        out = np.tensordot(Lmat, X, axes=(1, 0))
        for k in range(n_in):
            out[k] += op._apply_array(X[k])
        return out.ravel()

    zsym = op.symbol()
    fwd = Q.T * msq[None, :]
    back = Q / msq[:, None]

    def prec(x):
        X = x.reshape(shape)
        Y = np.tensordot(fwd, X, axes=(1, 0))
        Y = np.fft.fftn(Y, axes=tuple(range(1, Y.ndim)))
        Y = Y / (ev.reshape((-1,) + (1,) * len(g.shape)) + zsym[None])
        Y = np.fft.ifftn(Y, axes=tuple(range(1, Y.ndim)))
        return np.tensordot(back, Y, axes=(1, 0)).ravel()

    size = n_in * g.size
    A = LinearOperator((size, size), matvec=matvec, dtype=complex)
    M = LinearOperator((size, size), matvec=prec, dtype=complex)
    b = rhs.ravel()
    x0 = prec(b)
    tol = op.solver_tol
    res = np.linalg.norm(matvec(x0) - b) / np.linalg.norm(b)
    x = x0
    if res > tol:
        x, info = gmres(A, b, x0=x0, rtol=0.5 * tol, atol=0.0, restart=60,
                        maxiter=max(1, op.solver_max_iter // 60 + 1), M=M)
        res = np.linalg.norm(matvec(x) - b) / np.linalg.norm(b)
        if res > tol:
            raise SolverError(f"extension system stalled at relative residual {res:.3e}", res)
    X = x.reshape(shape)
    slices = [Field(g, X[k]) for k in range(n_in)] + [far_field]
    return ExtensionProfile(s, lam[1:], slices, u, {"residual": float(res), "h": h})
