"""Post-hoc diagnostics of integrated trajectories.

Rate fits, the feasibility envelope of FL, the zero-dynamics twin
comparison and sweep classification.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass

import numpy as np
from scipy.integrate import solve_ivp

from .flows import FlowSpec, fl_rhs
from .geometry import projected_gradient
from .integrate import IntegrateConfig, Trajectory
from .problem import Problem

__all__ = [
    "RateFit",
    "fit_rate",
    "fit_feasibility_rate",
    "EnvelopeCheck",
    "feasibility_envelope",
    "ZeroDynamicsResult",
    "zero_dynamics_compare",
    "SweepRow",
    "classify_sweep",
    "write_sweep_csv",
    "sweep_summary",
    "pi_error_coordinates",
]

ERROR_FLOOR = 1e-12


@dataclass(frozen=True)
class RateFit:
    """Least-squares fit ``log e(t) ~ log c_hat - rho_hat t`` over ``window``."""

    rho_hat: float
    c_hat: float
    r_squared: float
    window: tuple[float, float]
    samples: int


def _late_window(t: np.ndarray, e: np.ndarray, floor: float, late_fraction: float):
    below = np.flatnonzero(e < floor)
    stop = t[below[0] - 1] if below.size and below[0] > 0 else t[-1]
    return (t[0] + (1.0 - late_fraction) * (stop - t[0]), stop)


def _fit_log(t, e, window, floor, late_fraction, min_samples) -> RateFit:
    t = np.asarray(t, dtype=float)
    e = np.asarray(e, dtype=float)
    if window is None:
        window = _late_window(t, e, floor, late_fraction)
    lo, hi = float(window[0]), float(window[1])
    sel = (t >= lo) & (t <= hi)
    if sel.sum() < min_samples:
        raise ValueError(f"only {int(sel.sum())} samples in window [{lo:g}, {hi:g}]; need {min_samples}")
    if np.any(e[sel] < floor):
        raise ValueError(f"error falls below the numeric floor {floor:g} inside the window")
    ts, ly = t[sel], np.log(e[sel])
    slope, intercept = np.polyfit(ts, ly, 1)
    resid = ly - (slope * ts + intercept)
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else max(0.0, 1.0 - float(np.sum(resid**2)) / ss_tot)
    return RateFit(float(-slope), float(math.exp(intercept)), min(r2, 1.0), (lo, hi), int(sel.sum()))


def fit_rate(traj: Trajectory, x_star, window=None, floor: float = ERROR_FLOOR,
             late_fraction: float = 0.5, min_samples: int = 10,
             require_converged: bool = True) -> RateFit:
    """Exponential rate of ``||x(t) - x*||``.

    The default window is the last ``late_fraction`` of the trajectory before
    the error first drops below ``floor``, which keeps the initial transient
    out of the fit.

    Raises
    ------
    ValueError
        If the trajectory did not converge, the window holds fewer than
        ``min_samples`` samples, or the error underflows ``floor`` inside it.
    """
    if require_converged and traj.outcome != "converged":
        raise ValueError(f"rate fit needs a converged trajectory (outcome {traj.outcome!r})")
    err = np.linalg.norm(traj.x - np.asarray(x_star, dtype=float), axis=1)
    return _fit_log(traj.times, err, window, floor, late_fraction, min_samples)


def fit_feasibility_rate(traj: Trajectory, window=None, floor: float = ERROR_FLOOR,
                         late_fraction: float = 0.5, min_samples: int = 10) -> RateFit:
    """Exponential rate of ``||h(x(t))||``."""
    return _fit_log(traj.times, traj.feasibility, window, floor, late_fraction, min_samples)


@dataclass(frozen=True)
class EnvelopeCheck:
    passed: bool
    max_excess: float
    worst_time: float
    tol: float
    abs_floor: float


def feasibility_envelope(traj: Trajectory, k: float, tol: float = 1e-3,
                         abs_floor: float | None = None) -> EnvelopeCheck:
    """Check ``||h(x(t))|| <= (1 + tol) e^{-kt} ||h(x(0))|| + abs_floor`` at every recorded time.

    ``abs_floor`` defaults to the error the integrator was asked to hold,
    ``abs_tol + rel_tol * max ||x||`` (``1e-12`` if the tolerances are
    unknown): below it the recorded ``h`` is integration noise. The envelope is an identity for FL trajectories only;
    PI trajectories generally fail it. ``max_excess`` is the largest value of
    ``||h(t)|| - bound(t)`` (negative when the check passes everywhere).
    """
    if abs_floor is None:
        scale = float(np.abs(traj.x).max())
        abs_floor = float(traj.meta.get("abs_tol", 1e-12) + traj.meta.get("rel_tol", 0.0) * scale)
    t = traj.times
    hn = traj.feasibility
    bound = (1.0 + tol) * np.exp(-k * (t - t[0])) * hn[0] + abs_floor
    excess = hn - bound
    i = int(np.argmax(excess))
    return EnvelopeCheck(bool(excess[i] <= 0.0), float(excess[i]), float(t[i]), tol, abs_floor)


@dataclass(frozen=True)
class ZeroDynamicsResult:
    max_deviation: float
    worst_time: float
    tolerance: float
    times: np.ndarray
    x_fl: np.ndarray
    x_pg: np.ndarray

    @property
    def within_contract(self) -> bool:
        return self.max_deviation <= 10.0 * self.tolerance


def zero_dynamics_compare(p: Problem, x0, cfg: IntegrateConfig | None = None, k: float = 1.0,
                          samples: int = 1001, manifold_tol: float = 1e-10) -> ZeroDynamicsResult:
    """Twin integration of FL and the projected-gradient flow ``x' = -P(x) grad f(x)``.

    Both flows start from the same on-manifold ``x0`` and are integrated by
    the same adaptive Dormand-Prince scheme with the tolerances of ``cfg``
    over ``[0, cfg.t_max]``; dense output is compared on ``samples``
    uniform times. The reported ``tolerance`` is
    ``max(abs_tol, rel_tol * max ||x||)``.
    """
    cfg = cfg or IntegrateConfig(t_max=10.0)
    x0 = np.asarray(x0, dtype=float).reshape(p.n)
    off = float(np.linalg.norm(p.h(x0)))
    if off > manifold_tol:
        raise ValueError(f"x0 is not on the constraint set (||h(x0)|| = {off:.3e})")
    FlowSpec.fl(k)  # validates k
    opts = dict(method="RK45", rtol=cfg.rel_tol, atol=cfg.abs_tol, dense_output=True)
    span = (0.0, cfg.t_max)
    a = solve_ivp(lambda _, x: fl_rhs(p, x, k), span, x0, **opts)
    b = solve_ivp(lambda _, x: projected_gradient(p, x), span, x0, **opts)
    if not (a.success and b.success):
        raise RuntimeError(f"twin integration failed: {a.message or b.message}")
    t = np.linspace(0.0, cfg.t_max, samples)
    xa, xb = a.sol(t).T, b.sol(t).T
    dev = np.linalg.norm(xa - xb, axis=1)
    i = int(np.argmax(dev))
    scale = max(np.abs(xa).max(), np.abs(xb).max(), 1e-300)
    tol = max(cfg.abs_tol, cfg.rel_tol * scale)
    return ZeroDynamicsResult(float(dev[i]), float(t[i]), tol, t, xa, xb)


def pi_error_coordinates(traj: Trajectory, lambda_star, k_i: float):
    """Normal-form error coordinates of a PI trajectory.

    Returns ``(||y||, w)`` with ``y = h(x(t))`` and
    ``w = lam - k_p y - lam* = k_i z - lam*``, where ``lam = k_p h + k_i z``.
    """
    if traj.z is None:
        raise ValueError("PI error coordinates need the integral state z")
    w = k_i * traj.z - np.atleast_1d(np.asarray(lambda_star, dtype=float))
    return traj.feasibility.copy(), w


@dataclass(frozen=True)
class SweepRow:
    flow: str
    kind: str
    k_p: float
    k_i: float
    k: float | None
    x0: tuple
    outcome: str
    stationarity: float
    feasibility: float
    t_final: float
    error: float | None
    rho_hat: float | None

    def sort_key(self):
        return (self.kind, self.k_p, self.k_i, -1.0 if self.k is None else self.k, self.x0)


def classify_sweep(trajs, x_star=None) -> list[SweepRow]:
    """One row per trajectory, sorted by (flow, gains, initial point).

    ``rho_hat`` is the late-window fit of ``||x - x*||`` for converged runs
    when ``x_star`` is given, and ``None`` when unavailable.
    """
    trajs = list(trajs)
    if not trajs:
        raise ValueError("classify_sweep needs at least one trajectory")
    rows = []
    for tr in trajs:
        m = tr.meta
        err = rho = None
        if x_star is not None:
            err = float(np.linalg.norm(tr.final_x - np.asarray(x_star, dtype=float)))
            if tr.outcome == "converged":
                try:
                    rho = fit_rate(tr, x_star).rho_hat
                except ValueError:
                    rho = None
        rows.append(SweepRow(m.get("flow", "?"), m.get("kind", "?"), float(m.get("k_p", 0.0)),
                             float(m.get("k_i", 1.0)), m.get("k"), tuple(float(v) for v in tr.x[0]),
                             tr.outcome, float(tr.stationarity[-1]), float(tr.feasibility[-1]),
                             float(tr.times[-1]), err, rho))
    return sorted(rows, key=SweepRow.sort_key)


def _fmt(v):
    if v is None:
        return "unavailable"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, tuple):
        return " ".join(repr(float(c)) for c in v)
    return str(v)


def write_sweep_csv(rows, path) -> None:
    cols = [f.name for f in SweepRow.__dataclass_fields__.values()]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(cols)
        for r in rows:
            d = asdict(r)
            w.writerow([_fmt(d[c]) for c in cols])


def sweep_summary(rows) -> dict:
    """Outcome counts per flow label."""
    out: dict = {}
    for r in rows:
        entry = out.setdefault(r.flow, {"converged": 0, "diverged": 0, "horizon_reached": 0})
        entry[r.outcome] += 1
    return out


def summary_json(rows) -> str:
    return json.dumps(sweep_summary(rows), indent=2, sort_keys=True) + "\n"
