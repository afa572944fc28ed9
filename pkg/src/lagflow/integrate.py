"""Time integration of the flows with convergence and divergence detection.

Three methods are available:

``rk4_fixed``
    classical fourth-order Runge-Kutta with constant step ``dt``;
``rk45_adaptive``
    Dormand-Prince 5(4) via :class:`scipy.integrate.RK45`, stepped manually
    so that termination can be checked after every accepted step;
``semi_implicit``
    semi-implicit Euler for the PI family. The multiplier feedback
    ``-grad h (k_p h + k_i z)`` and ``z' = h`` are implicit, ``grad f`` is
    explicit. Step size is controlled by step doubling. This is the only
    method usable for very large ``k_p`` (explicit steps must stay below
    ``~1/(k_p m_upper)``).

:func:`suggested_config` picks a method and horizon for a flow.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Callable

import numpy as np
from scipy.integrate import RK45

from .errors import IntegrationError, RankDeficiencyError, StiffnessError
from .flows import FlowSpec, FlowState, vector_field
from .geometry import gram
from .problem import Problem

__all__ = [
    "IntegrateConfig",
    "Trajectory",
    "integrate",
    "solve_ode",
    "semi_implicit_step",
    "kkt_monitor",
    "suggested_config",
]

METHODS = ("rk4_fixed", "rk45_adaptive", "semi_implicit")
OUTCOMES = ("converged", "diverged", "horizon_reached")


@dataclass(frozen=True)
class IntegrateConfig:
    method: str = "rk45_adaptive"
    dt: float = 1e-2
    abs_tol: float = 1e-10
    rel_tol: float = 1e-8
    t_max: float = 100.0
    converge_tol: float = 1e-6
    diverge_radius: float | None = None
    record_stride: int = 1
    min_step: float = 1e-12
    max_step: float = math.inf
    max_steps: int = 5_000_000

    def __post_init__(self):
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}, got {self.method!r}")
        if not (self.dt > 0 and self.abs_tol > 0 and self.rel_tol > 0 and self.t_max > 0):
            raise ValueError("dt, tolerances and t_max must be positive")
        if self.converge_tol <= 0 or self.record_stride < 1:
            raise ValueError("converge_tol must be > 0 and record_stride >= 1")

    def replace(self, **changes) -> IntegrateConfig:
        return IntegrateConfig(**{**asdict(self), **changes})


@dataclass
class Trajectory:
    """Recorded solution of one integration run."""

    times: np.ndarray
    x: np.ndarray
    z: np.ndarray | None
    stationarity: np.ndarray
    feasibility: np.ndarray
    outcome: str
    stats: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def final_x(self) -> np.ndarray:
        return self.x[-1]

    @property
    def final_z(self) -> np.ndarray | None:
        return None if self.z is None else self.z[-1]

    @property
    def states(self) -> list[FlowState]:
        if self.z is None:
            return [FlowState(x) for x in self.x]
        return [FlowState(x, z) for x, z in zip(self.x, self.z)]

    @property
    def kkt_residuals(self) -> np.ndarray:
        return np.maximum(self.stationarity, self.feasibility)

    def header(self) -> list[str]:
        cols = ["t"] + [f"x_{i + 1}" for i in range(self.x.shape[1])]
        if self.z is not None:
            cols += [f"z_{i + 1}" for i in range(self.z.shape[1])]
        return cols + ["stationarity", "feasibility"]

    def rows(self):
        for j, t in enumerate(self.times):
            vals = [t, *self.x[j]]
            if self.z is not None:
                vals += list(self.z[j])
            vals += [self.stationarity[j], self.feasibility[j]]
            yield [repr(float(v)) for v in vals]

    def to_csv(self, path) -> None:
        """Write the trajectory CSV and a ``.json`` sidecar with outcome and stats."""
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.header())
            w.writerows(self.rows())
        sidecar = str(path)[:-4] + ".json" if str(path).endswith(".csv") else str(path) + ".json"
        with open(sidecar, "w") as fh:
            json.dump({"outcome": self.outcome, "stats": self.stats, **self.meta}, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# steppers


class _RK4:
    def __init__(self, fun, y0, cfg: IntegrateConfig):
        self.fun, self.y, self.t, self.dt = fun, np.array(y0, dtype=float), 0.0, cfg.dt
        self.t_max = cfg.t_max
        self.nfev = self.rejected = 0

    def step(self):
        h = min(self.dt, self.t_max - self.t)
        y, f = self.y, self.fun
        k1 = f(y)
        k2 = f(y + 0.5 * h * k1)
        k3 = f(y + 0.5 * h * k2)
        k4 = f(y + h * k3)
        self.y = y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
        self.t = self.t_max if h == self.t_max - self.t else self.t + h
        self.nfev += 4
        return h


class _DOPRI:
    def __init__(self, fun, y0, cfg: IntegrateConfig):
        self._s = RK45(lambda t, y: fun(y), 0.0, np.array(y0, dtype=float), cfg.t_max,
                       rtol=cfg.rel_tol, atol=cfg.abs_tol, max_step=cfg.max_step,
                       first_step=None)
        self.rejected = 0

    @property
    def t(self):
        return self._s.t

    @property
    def y(self):
        return self._s.y

    @property
    def nfev(self):
        return self._s.nfev

    def step(self):
        t_old = self._s.t
        msg = self._s.step()
        if self._s.status == "failed":
            raise StiffnessError(f"rk45 step failed at t={t_old:.6g}: {msg}; use semi_implicit")
        return self._s.t - t_old


def semi_implicit_step(p: Problem, spec: FlowSpec, state: FlowState, dt: float,
                       sweeps: int = 8, max_iter: int = 30, xtol: float = 1e-12,
                       frozen: bool = False) -> FlowState:
    """One semi-implicit Euler step of the PI family.

    ``grad f`` is explicit; the constraint terms are implicit::

        x+ - x = -dt (g(x) + J(x+)^T lam),   lam = k_p h(x+) + k_i z+
        z+ - z = dt h(x+)

    With ``mu = dt lam``, ``c = dt (k_p + dt k_i)`` and ``r = -dt g`` this
    reads ``x+ = x + r - J(x+)^T mu`` and ``h(x+) + k_i z / (k_p + dt k_i) = mu / c``.
    A few cheap sweeps linearize ``h`` at the current iterate and solve in
    Woodbury form ``mu = (H + I/c)^{-1} (J r + h~ + k_i z / (k_p + dt k_i))``,
    which never forms a ``k_p h`` product and so stays accurate for gains
    near machine range. If the sweeps stall (far from the constraint set,
    where the curvature of ``h`` matters) a damped Newton solve with a
    finite-difference constraint Hessian finishes the step.

    ``frozen=True`` stops after the first sweep: the linearly implicit
    Euler step on the model frozen at ``x``, unconditionally stable for that
    linear model but inexact off it.
    """
    if not spec.pi_family:
        raise ValueError("semi-implicit step is defined for the PI family only")
    x, z = state.x, state.z
    k_p, k_i = spec.k_p, spec.k_i
    denom = k_p + dt * k_i
    c = dt * denom
    r = -dt * np.asarray(p.grad_f(x), dtype=float)
    zterm = k_i * z / denom

    def hj(u):
        return np.atleast_1d(np.asarray(p.h(u), dtype=float))

    def Jj(u):
        return np.asarray(p.jac_h(u), dtype=float).reshape(p.m, p.n)

    xj, done = x, False
    for _ in range(1 if frozen else sweeps):
        J = Jj(xj)
        mu = np.linalg.solve(J @ J.T + np.eye(p.m) / c, J @ r + hj(xj) + J @ (x - xj) + zterm)
        x_new = x + r - J.T @ mu
        done = np.linalg.norm(x_new - xj) <= xtol * (1.0 + np.linalg.norm(x_new))
        xj = x_new
        if done:
            break
    if not (done or frozen):
        xj, mu = _newton_constraint_step(x, r, zterm, c, xj, mu, hj, Jj, max_iter, xtol)
    return FlowState(xj, z + dt * (mu / c - zterm))


def _newton_constraint_step(x, r, zterm, c, u, mu, hj, Jj, max_iter, xtol):
    n, m = len(x), len(mu)

    def residual(u, mu):
        return np.concatenate([u - x - r + Jj(u).T @ mu, hj(u) + zterm - mu / c])

    F = residual(u, mu)
    scale = 1.0 + np.linalg.norm(x) + np.linalg.norm(r)
    for _ in range(max_iter):
        J = Jj(u)
        W = np.empty((n, n))
        for k in range(n):
            eps = 1e-6 * max(1.0, abs(u[k]))
            e = np.zeros(n)
            e[k] = eps
            W[:, k] = (Jj(u + e) - Jj(u - e)).T @ mu / (2 * eps)
        K = np.block([[np.eye(n) + W, J.T], [J, -np.eye(m) / c]])
        delta = np.linalg.solve(K, -F)
        step, fnorm = 1.0, np.linalg.norm(F)
        while True:
            u2, mu2 = u + step * delta[:n], mu + step * delta[n:]
            F2 = residual(u2, mu2)
            if np.linalg.norm(F2) < fnorm or step < 1e-4:
                break
            step *= 0.5
        moved = np.linalg.norm(u2 - u)
        u, mu, F = u2, mu2, F2
        if moved <= xtol * (1.0 + np.linalg.norm(u)) or np.linalg.norm(F) <= 1e-15 * scale:
            return u, mu
    raise np.linalg.LinAlgError("semi-implicit constraint solve did not converge")


class _SemiImplicit:
    """Step-doubling controller around :func:`semi_implicit_step`."""

    max_retries = 10

    def __init__(self, p, spec, y0, cfg: IntegrateConfig):
        self.p, self.spec, self.cfg = p, spec, cfg
        self.y, self.t, self.dt = np.array(y0, dtype=float), 0.0, cfg.dt
        self.nfev = self.rejected = 0

    def _one(self, y, dt):
        n = self.p.n
        s = semi_implicit_step(self.p, self.spec, FlowState(y[:n], y[n:]), dt)
        self.nfev += 1
        return s.pack()

    def step(self):
        cfg = self.cfg
        retries = 0
        while True:
            dt = min(self.dt, cfg.max_step, cfg.t_max - self.t)
            try:
                full = self._one(self.y, dt)
                half = self._one(self._one(self.y, 0.5 * dt), 0.5 * dt)
            except (np.linalg.LinAlgError, RankDeficiencyError):
                retries += 1
                if retries > self.max_retries:
                    raise
                self.dt *= 0.5
                self.rejected += 1
                continue
            scale = cfg.abs_tol + cfg.rel_tol * np.maximum(np.abs(self.y), np.abs(half))
            err = float(np.sqrt(np.mean(((full - half) / scale) ** 2)))
            if not np.isfinite(err):
                err = np.inf
            factor = 5.0 if err == 0 else min(5.0, max(0.2, 0.9 / math.sqrt(err)))
            if err <= 1.0:
                self.y = half
                self.t = cfg.t_max if dt == cfg.t_max - self.t else self.t + dt
                self.dt = dt * factor
                return dt
            self.rejected += 1
            self.dt = dt * factor
            if self.dt < cfg.min_step:
                raise StiffnessError(f"semi-implicit step size underflow at t={self.t:.6g}")


# ---------------------------------------------------------------------------
# driver


Monitor = Callable[[np.ndarray], tuple[float, float]]


def solve_ode(fun: Callable[[np.ndarray], np.ndarray], y0, cfg: IntegrateConfig,
              monitor: Monitor | None = None, stepper=None, n_primal: int | None = None,
              diverge_radius: float = math.inf):
    """Integrate ``y' = fun(y)`` from ``t = 0`` and return ``(times, ys, residuals, outcome, stats)``.

    ``monitor(y)`` returns ``(stationarity, feasibility)``; the run is
    declared converged when both fall below ``cfg.converge_tol``. Divergence
    is ``||y[:n_primal]|| > diverge_radius``.
    """
    y0 = np.asarray(y0, dtype=float)
    if stepper is None:
        if cfg.method == "rk4_fixed":
            stepper = _RK4(fun, y0, cfg)
        elif cfg.method == "rk45_adaptive":
            stepper = _DOPRI(fun, y0, cfg)
        else:
            raise ValueError("semi_implicit needs a problem-specific stepper; use integrate()")
    npx = len(y0) if n_primal is None else n_primal
    mon = monitor or (lambda y: (math.nan, math.nan))

    times, ys, res = [0.0], [y0.copy()], [mon(y0)]
    outcome, steps = "horizon_reached", 0
    min_taken = math.inf
    tol = cfg.converge_tol
    if res[0][0] < tol and res[0][1] < tol:
        outcome = "converged"
    while outcome == "horizon_reached" and stepper.t < cfg.t_max:
        t_old = stepper.t
        try:
            h = stepper.step()
        except (OverflowError, FloatingPointError) as exc:
            raise IntegrationError(f"{cfg.method} step from t={t_old:.6g} overflowed ({exc}); "
                                   "the step is unstable for this field, use semi_implicit") from None
        steps += 1
        y = stepper.y
        if not np.all(np.isfinite(y)):
            raise IntegrationError(f"non-finite state at t={stepper.t:.6g}")
        if stepper.t < cfg.t_max and h < cfg.min_step:
            raise StiffnessError(
                f"{cfg.method} step size {h:.3e} below min_step {cfg.min_step:.1e} at t={stepper.t:.6g}; "
                "use semi_implicit")
        min_taken = min(min_taken, h)
        r = mon(y)
        if np.linalg.norm(y[:npx]) > diverge_radius:
            outcome = "diverged"
        elif r[0] < tol and r[1] < tol:
            outcome = "converged"
        if steps % cfg.record_stride == 0 or outcome != "horizon_reached" or stepper.t >= cfg.t_max:
            times.append(float(stepper.t))
            ys.append(np.array(y, dtype=float))
            res.append(r)
        if steps >= cfg.max_steps:
            raise IntegrationError(f"max_steps={cfg.max_steps} reached at t={stepper.t:.6g}")
    stats = {"steps": steps, "rejected": int(stepper.rejected), "nfev": int(stepper.nfev),
             "min_step_taken": None if steps == 0 else float(min_taken), "t_final": float(stepper.t)}
    return np.array(times), np.array(ys), np.array(res, dtype=float), outcome, stats


def suggested_config(spec: FlowSpec, **overrides) -> IntegrateConfig:
    """Method and horizon suited to ``spec``.

    PI-family flows with ``k_p >= 10`` are stiff in the normal direction and
    use ``semi_implicit`` (``rel_tol=1e-6``, ``abs_tol=1e-8``). Their slowest
    mode decays like ``exp(-k_i t / k_p)``, so the horizon is
    ``20 k_p / k_i`` clipped to ``[100, 1e4]``. Everything else runs
    ``rk45_adaptive`` with ``t_max=100``.
    """
    base: dict = {}
    if spec.pi_family and spec.k_p >= 10.0:
        base = {"method": "semi_implicit", "rel_tol": 1e-6, "abs_tol": 1e-8,
                "t_max": float(min(max(100.0, 20.0 * spec.k_p / spec.k_i), 1e4))}
    return IntegrateConfig(**{**base, **overrides})


def kkt_monitor(p: Problem) -> Monitor:
    """Residuals of the primal point with its least-squares multiplier.

    Stationarity is ``min over lam of ||grad f + grad h lam|| = ||P grad f||``,
    which does not depend on the internal multiplier state of a flow.
    """
    n = p.n

    def monitor(y):
        x = y[:n]
        try:
            G = gram(p, x)
        except RankDeficiencyError:
            return math.inf, float(np.linalg.norm(p.h(x)))
        g = np.asarray(p.grad_f(x), dtype=float)
        stat = float(np.linalg.norm(g - G.J.T @ G.solve(G.J @ g)))
        return stat, float(np.linalg.norm(p.h(x)))

    return monitor


def integrate(p: Problem, spec: FlowSpec, x0, z0=None, cfg: IntegrateConfig | None = None) -> Trajectory:
    """Integrate a flow from ``x0`` (and ``z0`` for the PI family, default zeros)."""
    cfg = cfg or IntegrateConfig()
    x0 = np.asarray(x0, dtype=float).reshape(p.n)
    if not np.all(np.isfinite(x0)):
        raise ValueError("x0 must be finite")
    if spec.kind == "FL":
        if z0 is not None:
            raise ValueError("FL carries no multiplier state; z0 must be omitted")
        y0 = x0
    else:
        z0 = np.zeros(p.m) if z0 is None else np.asarray(z0, dtype=float).reshape(p.m)
        y0 = np.concatenate([x0, z0])
    radius = cfg.diverge_radius if cfg.diverge_radius is not None else 10.0 * p.box_diagonal
    max_extent = float(np.abs(p.box).max())
    if radius <= max_extent:
        raise ValueError(f"diverge_radius {radius:g} must exceed the box extent {max_extent:g}")

    stepper = None
    if cfg.method == "semi_implicit":
        if not spec.pi_family:
            raise ValueError("semi_implicit applies to the PI family (PI, PDGD, ALM)")
        stepper = _SemiImplicit(p, spec, y0, cfg)
    times, ys, res, outcome, stats = solve_ode(
        vector_field(p, spec), y0, cfg, kkt_monitor(p), stepper=stepper, n_primal=p.n,
        diverge_radius=radius)
    meta = {"problem": p.name, "flow": spec.label, "kind": spec.kind, "k_p": spec.k_p,
            "k_i": spec.k_i, "k": spec.k, "method": cfg.method, "rel_tol": cfg.rel_tol,
            "abs_tol": cfg.abs_tol, "x0": x0.tolist(),
            "diverge_radius": radius}
    return Trajectory(times, ys[:, :p.n], None if spec.kind == "FL" else ys[:, p.n:],
                      res[:, 0], res[:, 1], outcome, stats, meta)
