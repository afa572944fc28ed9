import json
import math

import numpy as np
import pytest

from lagflow.errors import StiffnessError
from lagflow.flows import FlowSpec, FlowState, pi_rhs
from lagflow.integrate import (IntegrateConfig, integrate, semi_implicit_step, solve_ode,
                               suggested_config)
from lagflow.problem import builtin


def decay(y):
    return -y


class TestConfig:
    @pytest.mark.parametrize("kwargs", [dict(method="euler"), dict(dt=0.0), dict(rel_tol=-1.0),
                                        dict(t_max=0.0), dict(converge_tol=0.0), dict(record_stride=0)])
    def test_invalid(self, kwargs):
        with pytest.raises(ValueError):
            IntegrateConfig(**kwargs)

    def test_radius_must_exceed_box(self, illus):
        with pytest.raises(ValueError, match="diverge_radius"):
            integrate(illus, FlowSpec.fl(1.0), [0.0, 1.0], cfg=IntegrateConfig(diverge_radius=2.0))

    def test_suggested(self):
        assert suggested_config(FlowSpec.fl(10.0)).method == "rk45_adaptive"
        cfg = suggested_config(FlowSpec.pi(100.0))
        assert (cfg.method, cfg.t_max, cfg.rel_tol) == ("semi_implicit", 2000.0, 1e-6)
        assert suggested_config(FlowSpec.pi(1e15)).t_max == 1e4
        assert suggested_config(FlowSpec.pi(1e15), t_max=5.0).t_max == 5.0


class TestLinearTest:
    def test_rk45_exponential(self):
        t, ys, _, outcome, _ = solve_ode(decay, [2.0], IntegrateConfig(t_max=10.0))
        assert t[-1] == 10.0 and outcome == "horizon_reached"
        assert abs(ys[-1, 0] - 2.0 * math.exp(-10.0)) <= 1e-8

    def test_rk4_fourth_order(self):
        errs = []
        for dt in (0.1, 0.05, 0.025):
            t, ys, *_ = solve_ode(decay, [1.0], IntegrateConfig(method="rk4_fixed", dt=dt, t_max=10.0))
            errs.append(abs(ys[-1, 0] - math.exp(-t[-1])))
        for a, b in zip(errs, errs[1:]):
            assert a / b == pytest.approx(16.0, rel=0.2)

    @pytest.mark.parametrize("rel_tol", [1e-4, 1e-6, 1e-8])
    def test_tolerance_halving(self, rel_tol):
        def err(rt):
            _, ys, *_ = solve_ode(decay, [1.0], IntegrateConfig(rel_tol=rt, abs_tol=1e-14, t_max=10.0))
            return abs(ys[-1, 0] - math.exp(-10.0))
        assert err(rel_tol / 2) <= 0.5 * err(rel_tol)

    def test_times_strictly_increasing(self):
        t, *_ = solve_ode(decay, [1.0, -3.0], IntegrateConfig(t_max=5.0, record_stride=3))
        assert np.all(np.diff(t) > 0)
        assert t[-1] == 5.0

    def test_semi_implicit_needs_problem(self):
        with pytest.raises(ValueError):
            solve_ode(decay, [1.0], IntegrateConfig(method="semi_implicit"))


class TestOutcomes:
    def test_pi_100_reaches_minimizer(self, illus, illus_golden):
        x_star, _, _ = illus_golden
        spec = FlowSpec.pi(100.0)
        tr = integrate(illus, spec, [-2.0, 2.0], cfg=suggested_config(spec))
        assert tr.outcome == "converged"
        assert np.linalg.norm(tr.final_x - x_star) <= 1e-4
        assert tr.kkt_residuals[-1] < 1e-6

    def test_pdgd_diverges(self, illus):
        tr = integrate(illus, FlowSpec.pdgd(), [-2.0, 2.0], cfg=IntegrateConfig(t_max=500.0))
        assert tr.outcome == "diverged"
        assert np.linalg.norm(tr.final_x) > tr.meta["diverge_radius"]

    def test_fl_converges_and_respects_envelope(self, illus, illus_golden):
        x_star, _, _ = illus_golden
        k = 1.0
        tr = integrate(illus, FlowSpec.fl(k), [2.0, -2.0])
        assert tr.outcome == "converged"
        assert np.linalg.norm(tr.final_x - x_star) <= 1e-4
        bound = 1.01 * np.exp(-k * tr.times) * tr.feasibility[0]
        assert np.all(tr.feasibility <= bound)

    def test_starting_at_kkt_point(self, quad):
        tr = integrate(quad, FlowSpec.pi(1.0), [1.0, 0.0], z0=[-1.0])
        assert tr.outcome == "converged" and tr.stats["steps"] == 0

    def test_horizon(self, quad):
        tr = integrate(quad, FlowSpec.fl(1.0), [0.0, 3.0], cfg=IntegrateConfig(t_max=0.5))
        assert tr.outcome == "horizon_reached"
        assert tr.times[-1] == 0.5

    def test_deterministic(self, illus):
        spec = FlowSpec.pi(3.0, 2.0)
        a = integrate(illus, spec, [1.0, 1.0], cfg=IntegrateConfig(t_max=20.0))
        b = integrate(illus, spec, [1.0, 1.0], cfg=IntegrateConfig(t_max=20.0))
        for name in ("times", "x", "z", "stationarity", "feasibility"):
            assert np.array_equal(getattr(a, name), getattr(b, name))
        assert a.stats == b.stats

    def test_fl_rejects_z0(self, quad):
        with pytest.raises(ValueError):
            integrate(quad, FlowSpec.fl(1.0), [0.0, 0.0], z0=[0.0])

    def test_fl_rejects_semi_implicit(self, quad):
        with pytest.raises(ValueError):
            integrate(quad, FlowSpec.fl(1.0), [0.0, 0.0], cfg=IntegrateConfig(method="semi_implicit"))

    def test_stiffness_reported(self, quad):
        cfg = IntegrateConfig(min_step=1e-6, t_max=1.0)
        with pytest.raises(StiffnessError, match="semi_implicit"):
            integrate(quad, FlowSpec.pi(1e12), [0.0, 1.0], cfg=cfg)

    def test_huge_gain_semi_implicit(self, illus, illus_golden):
        x_star, _, _ = illus_golden
        spec = FlowSpec.pi(1e15)
        tr = integrate(illus, spec, [-2.0, 2.0], cfg=suggested_config(spec, t_max=100.0))
        assert tr.outcome == "converged"
        assert np.linalg.norm(tr.final_x - x_star) <= 1e-4


class TestSemiImplicitStep:
    def test_feasibility_non_increasing_at_huge_gain(self, quad):
        spec = FlowSpec.pi(1e12)
        s = FlowState(np.array([3.0, 2.0]), np.zeros(1))
        prev = abs(quad.h(s.x)[0])
        for _ in range(50):
            s = semi_implicit_step(quad, spec, s, 1e-2)
            cur = abs(quad.h(s.x)[0])
            assert cur <= prev + 1e-15
            prev = cur

    def test_matches_small_step_reference(self, quad):
        # at moderate gain a tiny-step rk4 run is the reference
        spec = FlowSpec.pi(50.0)
        s = FlowState(np.array([3.0, 2.0]), np.zeros(1))
        dt, steps = 1e-3, 200
        for _ in range(steps):
            s = semi_implicit_step(quad, spec, s, dt)
        fun = lambda y: pi_rhs(quad, FlowState(y[:2], y[2:]), 50.0, 1.0).pack()
        _, ys, *_ = solve_ode(fun, [3.0, 2.0, 0.0], IntegrateConfig(method="rk4_fixed", dt=1e-5, t_max=dt * steps))
        assert np.abs(s.pack() - ys[-1]).max() <= 1e-3

    def test_explicit_euler_limit(self, illus):
        spec = FlowSpec.pdgd()
        x, z = np.array([0.4, 1.1]), np.array([0.3])
        d = pi_rhs(illus, FlowState(x, z), 0.0, 1.0)
        gaps = []
        for dt in (1e-2, 5e-3, 2.5e-3):
            s = semi_implicit_step(illus, spec, FlowState(x, z), dt)
            gaps.append(np.abs(s.pack() - (np.concatenate([x, z]) + dt * d.pack())).max())
        assert gaps[0] / gaps[1] == pytest.approx(4.0, rel=0.1)
        assert gaps[1] / gaps[2] == pytest.approx(4.0, rel=0.1)

    def test_frozen_linear_model_stable(self, quad):
        # on an affine constraint the frozen step is exact for the linear model y' = -k_p y
        k_p, dt = 1e8, 1e-2  # dt k_p = 1e6
        spec = FlowSpec.pi(k_p)
        x = np.array([2.0, 0.0])
        s = semi_implicit_step(quad, spec, FlowState(x, np.zeros(1)), dt, frozen=True)
        factor = quad.h(s.x)[0] / quad.h(x)[0]
        assert abs(factor) <= 1.0

    def test_rejects_fl(self, quad):
        with pytest.raises(ValueError):
            semi_implicit_step(quad, FlowSpec.fl(1.0), FlowState(np.zeros(2)), 1e-2)


class TestExport:
    def test_csv_schema(self, illus, tmp_path):
        tr = integrate(illus, FlowSpec.pi(2.0), [0.5, 0.5], cfg=IntegrateConfig(t_max=1.0))
        path = tmp_path / "run.csv"
        tr.to_csv(path)
        lines = path.read_text().splitlines()
        assert lines[0] == "t,x_1,x_2,z_1,stationarity,feasibility"
        assert len(lines) == len(tr.times) + 1
        side = json.loads((tmp_path / "run.json").read_text())
        assert side["outcome"] == tr.outcome and side["stats"]["steps"] == tr.stats["steps"]

    def test_fl_csv_has_no_z(self, illus, tmp_path):
        tr = integrate(illus, FlowSpec.fl(1.0), [0.5, 0.5], cfg=IntegrateConfig(t_max=0.5))
        tr.to_csv(tmp_path / "fl.csv")
        assert (tmp_path / "fl.csv").read_text().splitlines()[0] == "t,x_1,x_2,stationarity,feasibility"


def test_rk4_overflow_reported(illus):
    from lagflow.errors import IntegrationError
    cfg = IntegrateConfig(method="rk4_fixed", dt=1e-3, t_max=1.0)
    with pytest.raises(IntegrationError, match="semi_implicit"):
        integrate(illus, FlowSpec.pi(1e16), [-2.0, 2.0], cfg=cfg)
