"""Acceptance suite: nine quantitative checks with fixed settings and tolerances."""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .coefficients import CoefficientField
from .extension import dtn_limit, extension_profile, profile_weight_total
from .fractional import QuadratureSpec, c_s, hs_balakrishnan, hs_fourier, hs_semigroup, kato_ratio
from .grid import Field, Grid, Lcg64, ParabolicCube, ParabolicPoint, l2_norm, random_field, sup_norm
from .kernels import chapman_kolmogorov_defect, fundamental_solution_column, gaussian_bound_fit
from .operator import ParabolicOperator, check_accretivity
from .regularity import (NonlocalDirichletProblem, harnack_ratio, holder_exponent_estimate,
                         hs_dense_matrix, rough_exterior, sigma_doubling_study, solve_nonlocal_dirichlet)
from .semigroup import YosidaConfig, semigroup_law_defect


@dataclass
class CriterionResult:
    number: int
    title: str
    passed: bool
    measured: str
    threshold: str
    seconds: float = 0.0

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"criterion {self.number} [{status}] {self.title}: {self.measured} (required {self.threshold})"


def _g(x) -> str:
    return f"{x:.3e}"


def _route_grid():
    g = Grid(1, 64, 64)
    return g, ParabolicOperator(CoefficientField.identity(g), solver_tol=1e-10)


def criterion_1() -> CriterionResult:
    """Balakrishnan and semigroup routes against the Fourier multiplier."""
    t0 = time.perf_counter()
    g, op = _route_grid()
    u = random_field(g, 11, "smooth")
    eb, es = [], []
    for s in (0.25, 0.5, 0.75):
        f = hs_fourier(u, s, op)
        nf = l2_norm(f)
        eb.append(l2_norm(hs_balakrishnan(op, u, s, QuadratureSpec("log-trapezoid", 200)) - f) / nf)
        es.append(l2_norm(hs_semigroup(op, u, s) - f) / nf)
    sec = time.perf_counter() - t0
    ok = max(eb) <= 1e-6 and max(es) <= 1e-4 and sec <= 120
    return CriterionResult(1, "route agreement", ok,
                           f"balakrishnan {_g(max(eb))}, semigroup {_g(max(es))}, {sec:.1f} s",
                           "1e-6, 1e-4, 120 s", sec)


def criterion_2() -> CriterionResult:
    """Extrapolated Neumann limit against ``c_s H^s u``; ladder errors must decrease."""
    t0 = time.perf_counter()
    g, op = _route_grid()
    u = random_field(g, 11, "smooth")
    errs, mono = [], True
    for s in (0.25, 0.5, 0.75):
        ref = hs_fourier(u, s, op) * c_s(s)
        r = dtn_limit(op, u, s)
        errs.append(l2_norm(r.field - ref) / l2_norm(ref))
        lad = r.ladder_errors(ref)
        mono &= len(lad) >= 3 and bool(np.all(np.diff(lad) < 0))
    ok = max(errs) <= 1e-3 and mono
    return CriterionResult(2, "DtN limit", ok, f"rel err {_g(max(errs))}, ladder monotone {mono}",
                           "1e-3, monotone over >= 3 rungs", time.perf_counter() - t0)


def criterion_3() -> CriterionResult:
    """Profile of the constant field, and the kernel normalization behind it."""
    t0 = time.perf_counter()
    g, op = _route_grid()
    one = Field.constant(g, 1.0)
    lams = np.array([1e-3, 1e-2, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0])
    dev = 0.0
    for s in (0.25, 0.5, 0.75):
        p = extension_profile(op, one, s, lams)
        dev = max(dev, max(sup_norm(v - one) for v in p.slices))
        dev = max(dev, max(abs(profile_weight_total(s, lam) - 1.0) for lam in lams))
    return CriterionResult(3, "Gamma identity", dev <= 1e-8, f"max deviation {_g(dev)}", "1e-8",
                           time.perf_counter() - t0)


def criterion_4() -> CriterionResult:
    """Contraction and semigroup law on 20 smooth fields, variable nonsymmetric ``A``."""
    t0 = time.perf_counter()
    g = Grid(1, 32, 32)
    coeffs = CoefficientField.builtin("rotating-nonsymmetric", g)
    op = ParabolicOperator(coeffs)
    cfg = YosidaConfig(sigma=20.0)
    worst_excess, worst_ratio = -np.inf, 0.0
    for seed in range(20):
        d = semigroup_law_defect(op, cfg, 0.3, 0.5, random_field(g, 100 + seed, "smooth"))
        worst_excess = max(worst_excess, d.contraction_excess)
        worst_ratio = max(worst_ratio, d.defect / d.bound)
    ok = (worst_excess <= 1e-9 and worst_ratio <= 1.0
          and math.isclose(coeffs.c1, 0.5) and math.isclose(coeffs.c2, 2.0))
    return CriterionResult(4, "semigroup invariants", ok,
                           f"contraction excess {_g(worst_excess)}, defect/bound {_g(worst_ratio)}",
                           "excess <= 1e-9, defect <= bound", time.perf_counter() - t0)


def criterion_5() -> CriterionResult:
    """Conservation, Gaussian decay, nonnegativity and Chapman-Kolmogorov for the heat kernel."""
    t0 = time.perf_counter()
    g = Grid(1, 128, 128)
    mass_dev, neg, cs = 0.0, 0.0, {}
    for scale in (1.0, 2.0):
        op = ParabolicOperator(CoefficientField.identity(g, scale))
        col = fundamental_solution_column(op, ((64,), 0), t_horizon=2.0, substeps=4)
        mass_dev = max(mass_dev, float(np.max(np.abs(col.spatial_mass()[col.causal_mask] - 1.0))))
        v = col.values.values.real
        neg = min(neg, float(np.min(v)) / float(np.max(v)))
        cs[scale] = gaussian_bound_fit(col).c
    gc = Grid(1, 64, 64)
    opc = ParabolicOperator(CoefficientField.identity(gc))
    d1 = chapman_kolmogorov_defect(opc, (32,), 0.0, 0.3, 0.7, 16)
    d2 = chapman_kolmogorov_defect(opc, (32,), 0.0, 0.3, 0.7, 32)
    ck = d2 / d1
    e1 = abs(cs[1.0] / 0.25 - 1)
    e2 = abs(cs[2.0] / 0.125 - 1)
    ok = mass_dev <= 1e-8 and e1 <= 0.1 and e2 <= 0.1 and neg >= -1e-12 and ck <= 0.6
    return CriterionResult(5, "kernel checks", ok,
                           f"mass {_g(mass_dev)}, c {cs[1.0]:.4f} / {cs[2.0]:.4f}, min/max {_g(neg)}, CK ratio {ck:.3f}",
                           "1e-8, 10% of 1/4 and 1/8, >= -1e-12, <= 0.6", time.perf_counter() - t0)


def criterion_6() -> CriterionResult:
    """Accretivity over 100 random fields and the resolvent bound over 20 trials."""
    t0 = time.perf_counter()
    g = Grid(1, 64, 64)
    op = ParabolicOperator(CoefficientField.builtin("rotating-nonsymmetric", g))
    rep = check_accretivity(op, trials=100, seed=7, kind="full")
    rng = Lcg64(2024)
    worst = 0.0
    for k in range(20):
        sigma = float(10.0 ** (rng.uniform(1)[0] * 3 - 1))
        f = random_field(g, 500 + k, "full")
        worst = max(worst, l2_norm(op.resolvent_solve(sigma, f)) * sigma / l2_norm(f))
    ok = rep.min_ratio >= -1e-10 and worst <= 1 + 1e-8
    return CriterionResult(6, "accretivity and resolvent", ok,
                           f"min Re<Hu,u>/|u|^2 {_g(rep.min_ratio)}, max sigma|R f|/|f| {worst:.12f}",
                           ">= -1e-10, <= 1 + 1e-8", time.perf_counter() - t0)


def criterion_7() -> CriterionResult:
    """Per-mode Kato ratio on full-spectrum random fields."""
    t0 = time.perf_counter()
    g = Grid(1, 64, 64)
    lo, hi = np.inf, -np.inf
    for seed in range(5):
        rep = kato_ratio(random_field(g, 300 + seed, "full"))
        lo, hi = min(lo, rep.mode_min), max(hi, rep.mode_max)
    ok = lo >= 2 ** -0.25 - 1e-10 and hi <= 1 + 1e-10
    return CriterionResult(7, "Kato ratio", ok, f"per-mode range [{lo:.12f}, {hi:.12f}]",
                           f"[{2 ** -0.25 - 1e-10:.12f}, {1 + 1e-10:.12f}]", time.perf_counter() - t0)


REGULARITY_CUBE = ParabolicCube(ParabolicPoint((1.0,), 0.25), 0.45)


def regularity_study(seeds=range(5), sizes=(32, 64), s: float = 0.5):
    """Hölder and Harnack measurements on nonlocal-Dirichlet solutions at two resolutions.

    Grid ``Lx = 2``, ``Lt = 0.5``, ``A = I``, backward time differences.
    Returns ``{seed: [(alpha, ratio, min_u), ...]}`` ordered as ``sizes``.
    """
    d_min = 2 * 2.0 / sizes[0]
    out = {sd: [] for sd in seeds}
    for n in sizes:
        g = Grid(1, n, n, 2.0, 0.5)
        op = ParabolicOperator(CoefficientField.identity(g), "backward")
        M = hs_dense_matrix(op, s)
        for sd in seeds:
            p = NonlocalDirichletProblem(s, REGULARITY_CUBE, rough_exterior(sd, g))
            u = solve_nonlocal_dirichlet(p, op, M)
            h = holder_exponent_estimate(u, REGULARITY_CUBE, d_min=d_min)
            hr = harnack_ratio(u, REGULARITY_CUBE)
            inner = REGULARITY_CUBE.mask(g)
            out[sd].append((h.alpha_estimate, hr.harnack_ratio, float(np.min(u.values.real[inner]))))
    return out


def criterion_8() -> CriterionResult:
    """Regularity probes on five seeded solutions, one refinement."""
    t0 = time.perf_counter()
    res = regularity_study()
    worst_a, worst_h, min_u, ok = 0.0, 0.0, np.inf, True
    for (a0, h0, m0), (a1, h1, m1) in res.values():
        if a0 is None or a1 is None or h0 is None or h1 is None:
            ok = False
            continue
        ok &= a0 > 0 and a1 > 0 and h0 >= 1 and h1 >= 1 and math.isfinite(h0) and math.isfinite(h1)
        worst_a = max(worst_a, abs(a1 - a0) / a0)
        worst_h = max(worst_h, abs(h1 - h0) / h0)
        min_u = min(min_u, m0, m1)
    ok = ok and worst_a <= 0.2 and worst_h <= 0.2 and min_u >= -1e-8
    return CriterionResult(8, "regularity probes", ok,
                           f"alpha drift {worst_a:.3f}, Harnack drift {worst_h:.3f}, min interior u {min_u:.4f}",
                           "alpha > 0, ratio >= 1, drifts <= 0.2, u >= -1e-8", time.perf_counter() - t0)


def criterion_9() -> CriterionResult:
    """Yosida profile discrepancy when sigma doubles."""
    t0 = time.perf_counter()
    g, op = _route_grid()
    u = random_field(g, 11, "smooth")
    worst = 0.0
    for s in (0.25, 0.5, 0.75):
        _, _, ratio = sigma_doubling_study(op, u, s, np.linspace(0.1, 2.0, 20))
        worst = max(worst, ratio)
    return CriterionResult(9, "sigma doubling", worst <= 0.6, f"max ratio {worst:.4f}", "<= 0.6",
                           time.perf_counter() - t0)


CRITERIA = {1: criterion_1, 2: criterion_2, 3: criterion_3, 4: criterion_4, 5: criterion_5,
            6: criterion_6, 7: criterion_7, 8: criterion_8, 9: criterion_9}


def run_acceptance(numbers=None) -> list:
    """Run the selected criteria (all by default) and return their results."""
    return [CRITERIA[n]() for n in (numbers or sorted(CRITERIA))]
