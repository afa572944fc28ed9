"""End-to-end acceptance criteria.

Each test appends one ``PASS``/``FAIL`` line to the terminal summary.
"""

import itertools
import math
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, make_builtin
from lagflow.analysis import feasibility_envelope, fit_feasibility_rate, fit_rate, zero_dynamics_compare
from lagflow.cli import FIG2_INITS, FIG2_SEED
from lagflow.constants import ConstantsReport, certificate_checks, kappa, threshold
from lagflow.errors import IntegrationError, StiffnessError
from lagflow.flows import FlowSpec
from lagflow.geometry import gram, projector, tangent_basis
from lagflow.integrate import IntegrateConfig, integrate, solve_ode, suggested_config
from lagflow.problem import builtin, validate_derivatives


def record(number, title, passed, detail):
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] criterion {number}: {title} -- {detail}")
    return passed


@pytest.fixture(scope="module")
def fig2_points(illus):
    return illus.sample(FIG2_INITS, FIG2_SEED)


@pytest.fixture(scope="module")
def fl_runs(illus, fig2_points):
    return {k: [integrate(illus, FlowSpec.fl(k), x0) for x0 in fig2_points] for k in (1.0, 10.0)}


def test_c1_reproduction(illus, illus_golden, fig2_points, fl_runs):
    x_star, _, _ = illus_golden
    start = time.perf_counter()
    pi = FlowSpec.pi(100.0, 1.0)
    runs = {"FL(k=1)": fl_runs[1.0], "FL(k=10)": fl_runs[10.0],
            "PI(k_p=100)": [integrate(illus, pi, x0, cfg=suggested_config(pi)) for x0 in fig2_points]}
    pdgd = [integrate(illus, FlowSpec.pdgd(), x0, cfg=IntegrateConfig(t_max=500.0)) for x0 in fig2_points]
    elapsed = time.perf_counter() - start
    worst_err = max(np.linalg.norm(tr.final_x - x_star) for trs in runs.values() for tr in trs)
    worst_res = max(tr.kkt_residuals[-1] for trs in runs.values() for tr in trs)
    converged = all(tr.outcome == "converged" for trs in runs.values() for tr in trs)
    diverged = all(tr.outcome == "diverged" for tr in pdgd)
    ok = converged and diverged and worst_err <= 1e-4 and worst_res < 1e-6 and elapsed < 60.0
    record(1, "illustrative sweep", ok,
           f"{sum(len(v) for v in runs.values())} FL/PI runs converged={converged}, max |x-x*|={worst_err:.2e}, "
           f"max KKT residual={worst_res:.2e}; PDGD diverged={diverged} ({len(pdgd)} runs); {elapsed:.1f} s")
    assert ok


def _relative_tracking(tr, k):
    pred = np.exp(-k * tr.times) * tr.feasibility[0]
    rel = np.abs(tr.feasibility - pred) / pred
    i = int(np.argmax(rel))
    return float(rel[i]), float(tr.times[i]), float(tr.feasibility[i]), float(abs(tr.feasibility[i] - pred[i]))


@pytest.mark.xfail(strict=True, reason="relative 1e-3 tracking is below integrator resolution once ||h|| "
                                       "falls under rel_tol * ||x||; see the envelope check")
def test_c2_output_exactness_relative(fl_runs):
    worst = {k: max(_relative_tracking(tr, k) for tr in trs) for k, trs in fl_runs.items()}
    ok = all(w[0] <= 1e-3 for w in worst.values())
    detail = "; ".join(f"k={k:g}: max rel dev {w[0]:.2e} at t={w[1]:.3g} (||h||={w[2]:.1e}, abs dev {w[3]:.1e})"
                       for k, w in worst.items())
    record(2, "FL output tracks e^{-kt}||h0|| to relative 1e-3 (literal)", ok, detail)
    assert ok


def test_c2_output_envelope(fl_runs):
    checks = [(k, feasibility_envelope(tr, k, tol=1e-3)) for k, trs in fl_runs.items() for tr in trs]
    ok = all(c.passed for _, c in checks)
    worst = max(checks, key=lambda kc: kc[1].max_excess)[1]
    lost = []
    for k, trs in fl_runs.items():
        for tr in trs:
            floor = tr.meta["abs_tol"] + tr.meta["rel_tol"] * np.abs(tr.x).max()
            sel = tr.feasibility > 100 * floor
            pred = np.exp(-k * tr.times[sel]) * tr.feasibility[0]
            lost.append(float(np.max(np.abs(tr.feasibility[sel] - pred) / pred)))
    resolved = max(lost)
    ok = ok and resolved <= 1e-3
    record("2b", "FL output envelope with integrator noise floor", ok,
           f"{len(checks)} runs, worst excess {worst.max_excess:.2e} (floor {worst.abs_floor:.1e}); "
           f"max rel dev where ||h|| > 100 x floor: {resolved:.2e}")
    assert ok


def test_c3_zero_dynamics(illus, quad):
    cases = [(illus, illus.chart.lift(s)) for s in (-2.5, -1.0, 0.0, 0.5)] + [(quad, np.array([1.0, 2.0])),
                                                                               (quad, np.array([1.0, -1.5]))]
    results = [zero_dynamics_compare(p, x0) for p, x0 in cases]
    within = all(r.within_contract for r in results)
    worst = max(results, key=lambda r: r.max_deviation / r.tolerance)
    tols = np.array([1e-7, 1e-8, 1e-9])
    devs = [zero_dynamics_compare(illus, [0.0, 1.0], IntegrateConfig(t_max=10.0, rel_tol=rt, abs_tol=rt * 1e-2))
            .max_deviation for rt in tols]
    slope = float(np.polyfit(np.log10(tols), np.log10(devs), 1)[0])
    ok = within and 0.7 <= slope <= 1.3
    record(3, "zero dynamics equal the projected gradient flow", ok,
           f"{len(results)} starts, worst deviation {worst.max_deviation:.2e} = "
           f"{worst.max_deviation / worst.tolerance:.2f} x tol; log-log slope over rel_tol 1e-7..1e-9: {slope:.3f}")
    assert ok


def test_c4_rate_structure():
    p = builtin("quadratic_affine", Q=[[1.0, 0.0], [0.0, 4.0]])
    cfg = IntegrateConfig(abs_tol=1e-12, converge_tol=1e-8)
    fast = fit_rate(integrate(p, FlowSpec.fl(10.0), [3.0, 2.0], cfg=cfg), [1.0, 0.0])
    slow = fit_feasibility_rate(integrate(p, FlowSpec.fl(0.5), [3.0, 2.0], cfg=cfg))
    ok = 3.6 <= fast.rho_hat <= 4.4 and abs(slow.rho_hat - 0.5) <= 0.02 * 0.5
    record(4, "rate capped by rho_eta, feasibility rate equals k", ok,
           f"k=10 primal rate {fast.rho_hat:.5f} (R^2 {fast.r_squared:.6f}); "
           f"k=0.5 feasibility rate {slow.rho_hat:.5f}")
    assert ok


def test_c5_threshold(illus_report):
    unit = ConstantsReport("unit", m_lower=1.0, L_r=1.0, L_1_sampled=1.0, L_1_formula=1.0, rho_eta=1.0)
    th = threshold(unit, k=1.0)
    vals = [0.25, 0.5, 1.0, 2.0, 4.0]
    monotone = all(
        kappa(2 * a, b, c, d) > kappa(a, b, c, d) and kappa(a, 2 * b, c, d) > kappa(a, b, c, d)
        and kappa(a, b, 2 * c, d) < kappa(a, b, c, d) and kappa(a, b, c, 2 * d) < kappa(a, b, c, d)
        for a, b, c, d in itertools.product(vals, repeat=4))
    r = illus_report
    cap_exact = r.k_i_cap == r.m_lower * r.k_p_star**2 / 2 and th.k_i_cap == th.k_p_star**2 / 2
    in_range = 1.94e13 <= r.k_p_star <= 1.94e17
    ok = th.kappa == 212.0 and monotone and cap_exact and in_range
    record(5, "threshold arithmetic", ok,
           f"kappa(1,1,1,1)={th.kappa:g}, lattice monotone={monotone}, k_i cap exact={cap_exact}, "
           f"illustrative k_p*={r.k_p_star:.4g} (ratio to 1.94e15: {r.k_p_star / 1.94e15:.3g})")
    assert ok


def test_c6_certificates(builtin_reports):
    parts, ok = [], True
    for case, r in sorted(builtin_reports.items()):
        k_p = max(2.0 / r.m_lower, r.kappa)
        res = certificate_checks(make_builtin(case), r, k_p, k=1.0, samples=500)
        ok &= res.passed and res.min_residual_margin is not None
        parts.append(f"{case}: psi {res.min_psi_bar_margin:.3g}, schur {res.min_schur_margin:.3g}, "
                     f"residual {res.min_residual_margin:.3g}")
    record(6, "certificate inequalities at 500 samples per builtin", ok, "; ".join(parts))
    assert ok


def test_c7_stiff_pi(illus, illus_golden, illus_report, fig2_points):
    x_star, _, _ = illus_golden
    spec = FlowSpec.pi(illus_report.k_p_star, 1.0)
    start = time.perf_counter()
    trs = [integrate(illus, spec, x0, cfg=suggested_config(spec, t_max=100.0)) for x0 in fig2_points]
    elapsed = time.perf_counter() - start
    err = max(np.linalg.norm(tr.final_x - x_star) for tr in trs)
    explicit = {}
    for method in ("rk45_adaptive", "rk4_fixed"):
        cfg = IntegrateConfig(method=method, dt=1e-3, t_max=1.0)
        try:
            explicit[method] = integrate(illus, spec, fig2_points[0], cfg=cfg).outcome
        except (StiffnessError, IntegrationError) as exc:
            explicit[method] = type(exc).__name__
    explicit_fails = explicit == {"rk45_adaptive": "StiffnessError", "rk4_fixed": "IntegrationError"}
    ok = all(tr.outcome == "converged" for tr in trs) and err <= 1e-3 and elapsed < 300 and explicit_fails
    record(7, "semi-implicit PI at k_p = k_p*", ok,
           f"k_p={spec.k_p:.4g}, {len(trs)} runs, max |x-x*|={err:.2e}, {elapsed:.1f} s; explicit: {explicit}")
    assert ok


def test_c8_properties(builtin_reports):
    failures = []
    for case in sorted(builtin_reports):
        p = make_builtin(case)
        if not validate_derivatives(p, samples=100, seed=0).passed:
            failures.append(f"{case}: derivatives")
        for x in p.sample(500, seed=5):
            P, Q, J = projector(p, x), tangent_basis(p, x).Q, gram(p, x).J
            if max(np.abs(P @ P - P).max(), np.abs(P - P.T).max(), np.abs(P @ J.T).max()) > 1e-10:
                failures.append(f"{case}: projector at {x}")
                break
            if max(np.abs(Q.T @ Q - np.eye(p.n - p.m)).max(), np.abs(J @ Q).max()) > 1e-10:
                failures.append(f"{case}: basis at {x}")
                break
        r = builtin_reports[case]
        if r.L_2_sampled > r.L_2_formula * (1 + 1e-9) + 1e-9 or r.L_1_sampled > r.L_1_formula * (1 + 1e-9) + 1e-9:
            failures.append(f"{case}: sampled > formula")
    errs = []
    for dt in (0.1, 0.05, 0.025):
        t, ys, *_ = solve_ode(lambda y: -y, [1.0], IntegrateConfig(method="rk4_fixed", dt=dt, t_max=10.0))
        errs.append(abs(ys[-1, 0] - math.exp(-t[-1])))
    ratios = [a / b for a, b in zip(errs, errs[1:])]
    if not all(abs(q / 16.0 - 1.0) <= 0.2 for q in ratios):
        failures.append(f"rk4 order ratios {ratios}")
    ok = not failures
    record(8, "property suite", ok,
           f"{len(builtin_reports)} builtins x 500 samples; rk4 error ratios "
           f"{', '.join(f'{q:.2f}' for q in ratios)}" + ("" if ok else f"; failures: {failures}"))
    assert ok
