"""Sampling estimates of the problem constants and the explicit PI gain threshold.

All constants are localized to the problem box. Sampled Lipschitz constants
are maximal difference quotients over near pairs (finite-difference
Jacobians at spacing ``near_step`` box units) and seeded far pairs. Formula
variants are the closed-form sufficient conditions built from the sampled
bounds; wherever both exist the threshold uses the smaller one.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from scipy.integrate import cumulative_trapezoid, solve_ivp

from .errors import AssumptionViolation, RankDeficiencyError, UnsupportedProblemError
from .geometry import RANK_RTOL
from .problem import Problem, reference_solution

__all__ = [
    "SamplingPlan",
    "ConstantsReport",
    "Threshold",
    "CertificateResult",
    "estimate_bounds",
    "estimate_rho_eta",
    "formula_constants",
    "threshold",
    "kappa",
    "certificate_checks",
    "constants_report",
]


@dataclass(frozen=True)
class SamplingPlan:
    """Deterministic sampling layout for :func:`estimate_bounds`.

    ``grid`` is the number of points per axis of a regular tensor grid over
    the box; ``far_pairs`` random grid-point pairs are drawn with ``seed``.
    """

    grid: tuple[int, ...] = (200, 200)
    seed: int = 0
    near_step: float = 1e-3
    far_pairs: int = 20_000
    fiber_curves: int = 200
    fiber_points: int = 200
    m_safety: float = 0.99
    rho_safety: float = 0.95
    rho_points: int = 20_001

    def points(self, p: Problem) -> np.ndarray:
        grid = self.grid if len(self.grid) == p.n else (self.grid[0],) * p.n
        axes = [np.linspace(lo, hi, k) for (lo, hi), k in zip(p.box, grid)]
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m_.ravel() for m_ in mesh], axis=1)
        if len(pts) < 1000:
            raise ValueError(f"sampling grid has {len(pts)} points; need at least 1000")
        return pts


@dataclass
class ConstantsReport:
    """Estimated and derived constants with per-constant provenance."""

    problem: str
    m_lower: float | None = None
    m_upper: float | None = None
    B_f: float | None = None
    B_h: float | None = None
    L_f: float | None = None
    L_h: float | None = None
    L_2_sampled: float | None = None
    L_2_formula: float | None = None
    L_Phi: float | None = None
    L_Psi: float | None = None
    L_q: float | None = None
    L_1_sampled: float | None = None
    L_1_formula: float | None = None
    L_r: float | None = None
    rho_eta: float | None = None
    kappa: float | None = None
    k_p_star: float | None = None
    k_i_cap: float | None = None
    provenance: dict = field(default_factory=dict)
    grid: dict = field(default_factory=dict)
    safety: dict = field(default_factory=dict)
    intermediates: dict = field(default_factory=dict)
    witnesses: dict = field(default_factory=dict)
    certificate: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    @property
    def L_2(self) -> float | None:
        return _tighter(self.L_2_sampled, self.L_2_formula)

    @property
    def L_1(self) -> float | None:
        return _tighter(self.L_1_sampled, self.L_1_formula)

    def constant_names(self) -> list[str]:
        skip = {"problem", "provenance", "grid", "safety", "intermediates", "witnesses",
                "certificate", "warnings"}
        return [f_.name for f_ in fields(self) if f_.name not in skip]

    def to_dict(self) -> dict:
        constants = {name: {"value": getattr(self, name), "variant": self.provenance.get(name)}
                     for name in self.constant_names()}
        return {"problem": self.problem, "constants": constants, "grid": self.grid,
                "safety": self.safety, "intermediates": self.intermediates,
                "witnesses": self.witnesses, "certificate": self.certificate,
                "warnings": list(self.warnings)}

    def to_json(self) -> str:
        return json.dumps(_plain(self.to_dict()), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> ConstantsReport:
        r = cls(doc["problem"])
        for name, entry in doc["constants"].items():
            setattr(r, name, entry["value"])
            if entry.get("variant") is not None:
                r.provenance[name] = entry["variant"]
        for key in ("grid", "safety", "intermediates", "witnesses", "certificate"):
            setattr(r, key, dict(doc.get(key, {})))
        r.warnings = list(doc.get("warnings", []))
        return r

    @classmethod
    def from_json(cls, text: str) -> ConstantsReport:
        return cls.from_dict(json.loads(text))

    def table(self) -> str:
        lines = [f"constants for {self.problem}"]
        for name in self.constant_names():
            val = getattr(self, name)
            txt = "n/a" if val is None else f"{val:.6g}"
            lines.append(f"  {name:<12} {txt:>14}  {self.provenance.get(name, '')}")
        return "\n".join(lines)


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return repr(obj)
    return obj


def _tighter(a, b):
    vals = [v for v in (a, b) if v is not None]
    return min(vals) if vals else None


# ---------------------------------------------------------------------------
# batched pointwise quantities


def _evaluate(p: Problem, pts: np.ndarray):
    g = np.array([p.grad_f(x) for x in pts], dtype=float).reshape(len(pts), p.n)
    J = np.array([p.jac_h(x) for x in pts], dtype=float).reshape(len(pts), p.m, p.n)
    return g, J


def _gram_batch(J: np.ndarray, pts: np.ndarray):
    H = J @ np.swapaxes(J, 1, 2)
    ev = np.linalg.eigvalsh(H)
    bad = (ev[:, 0] <= RANK_RTOL * ev[:, -1]) | (ev[:, -1] <= 0) | ~np.isfinite(ev).all(axis=1)
    if bad.any():
        i = int(np.flatnonzero(bad)[0])
        raise RankDeficiencyError(
            f"constraint Jacobian loses full row rank at x={pts[i].tolist()}", point=pts[i])
    return H, ev


def _phi_batch(g, J, H):
    return -np.linalg.solve(H, (J @ g[..., None]))[..., 0]


def _tangent_batch(J: np.ndarray) -> np.ndarray:
    m = J.shape[1]
    _, _, vt = np.linalg.svd(J, full_matrices=True)
    return np.swapaxes(vt[:, m:, :], 1, 2)


def _align_batch(Q: np.ndarray, anchor: np.ndarray) -> np.ndarray:
    """Procrustes-align each ``Q[i]`` to ``anchor[i]``."""
    u, _, vt = np.linalg.svd(np.swapaxes(Q, 1, 2) @ anchor)
    return Q @ (u @ vt)


def _spectral(A: np.ndarray) -> np.ndarray:
    if A.ndim == 2:
        return np.linalg.norm(A, axis=1)
    return np.linalg.norm(A, ord=2, axis=(1, 2))


# ---------------------------------------------------------------------------
# estimation


def estimate_bounds(p: Problem, plan: SamplingPlan | None = None) -> ConstantsReport:
    """Sample Gram-eigenvalue bounds, gradient bounds and Lipschitz constants on the box."""
    plan = plan or SamplingPlan()
    pts = plan.points(p)
    N = len(pts)
    g, J = _evaluate(p, pts)
    if not (np.isfinite(g).all() and np.isfinite(J).all()):
        i = int(np.flatnonzero(~(np.isfinite(g).all(1) & np.isfinite(J).all((1, 2))))[0])
        raise AssumptionViolation(f"non-finite derivatives at x={pts[i].tolist()}", point=pts[i])
    H, ev = _gram_batch(J, pts)
    phi = _phi_batch(g, J, H)
    Q = _tangent_batch(J)

    r = ConstantsReport(p.name)
    i_lo, i_hi = int(np.argmin(ev[:, 0])), int(np.argmax(ev[:, -1]))
    # safety factors compensate sampling error; a constant Gram matrix is exact
    r.m_lower = float(ev[i_lo, 0] * (1.0 if p.affine else plan.m_safety))
    r.m_upper = float(ev[i_hi, -1])
    r.B_f = float(np.linalg.norm(g, axis=1).max())
    r.B_h = float(np.sqrt(ev[:, -1].max()))
    r.witnesses.update(m_lower=pts[i_lo], m_upper=pts[i_hi])

    # near pairs: finite-difference Jacobians along each axis
    width = p.box[:, 1] - p.box[:, 0]
    dgs, dphis, dJ_norms, dQ_norms = [], [], [], []
    for j in range(p.n):
        step = plan.near_step * width[j]
        shifted = pts.copy()
        sign = np.where(pts[:, j] + step <= p.box[j, 1], 1.0, -1.0)
        shifted[:, j] += sign * step
        g2, J2 = _evaluate(p, shifted)
        H2, _ = _gram_batch(J2, shifted)
        phi2 = _phi_batch(g2, J2, H2)
        Q2 = _align_batch(_tangent_batch(J2), Q)
        scale = (sign * step)[:, None]
        dgs.append((g2 - g) / scale)
        dphis.append((phi2 - phi) / scale)
        dJ_norms.append(_spectral(J2 - J) / step)
        dQ_norms.append(_spectral(Q2 - Q) / step)
    hess = np.stack(dgs, axis=2)
    dphi = np.stack(dphis, axis=2)
    L_f_near = _spectral(hess).max()
    L_2_near = _spectral(dphi).max()
    L_h_near = np.max(dJ_norms)
    L_q_near = np.max(dQ_norms)

    # far pairs
    rng = np.random.default_rng(plan.seed)
    a = rng.integers(0, N, plan.far_pairs)
    b = rng.integers(0, N, plan.far_pairs)
    keep = a != b
    a, b = a[keep], b[keep]
    dist = np.linalg.norm(pts[a] - pts[b], axis=1)
    L_f_far = (np.linalg.norm(g[a] - g[b], axis=1) / dist).max(initial=0.0)
    L_2_far = (np.linalg.norm(phi[a] - phi[b], axis=1) / dist).max(initial=0.0)
    L_h_far = (_spectral(J[a] - J[b]) / dist).max(initial=0.0)
    L_q_far = (_spectral(_align_batch(Q[b], Q[a]) - Q[a]) / dist).max(initial=0.0)

    r.L_f = float(max(L_f_near, L_f_far))
    r.L_h = float(max(L_h_near, L_h_far))
    r.L_2_sampled = float(max(L_2_near, L_2_far))
    r.L_q = float(max(L_q_near, L_q_far))
    for name in ("m_lower", "m_upper", "B_f", "B_h", "L_f", "L_h", "L_2_sampled", "L_q"):
        r.provenance[name] = "sampled"
    if p.affine:
        r.provenance["m_lower"] = r.provenance["m_upper"] = "exact (constant Gram matrix)"

    try:
        r.L_1_sampled, w = _sample_L1(p, plan)
        r.provenance["L_1_sampled"] = "sampled"
        r.witnesses["L_1_sampled"] = w
    except UnsupportedProblemError as exc:
        msg = f"L_1 sampling unavailable ({exc}); formula variant only"
        warnings.warn(msg, stacklevel=2)
        r.warnings.append(msg)

    r.grid = {"shape": list(plan.grid if len(plan.grid) == p.n else (plan.grid[0],) * p.n),
              "points": int(N), "near_step": plan.near_step, "far_pairs": int(len(a)),
              "seed": plan.seed, "box": p.box.tolist(), "fiber_curves": plan.fiber_curves,
              "fiber_points": plan.fiber_points}
    r.safety = {"m_lower": plan.m_safety, "rho_eta": plan.rho_safety}
    return r


def _transverse(p: Problem, x, anchor_Q):
    """``Q(x)^T grad f(x)`` with ``Q(x)`` aligned to ``anchor_Q``."""
    J = np.asarray(p.jac_h(x), dtype=float).reshape(1, p.m, p.n)
    Qx = _align_batch(_tangent_batch(J), anchor_Q[None])[0]
    return Qx.T @ np.asarray(p.grad_f(x), dtype=float)


def _sample_L1(p: Problem, plan: SamplingPlan):
    """Max of ``||Q^T grad f (x~) - Q^T grad f (p)|| / ||h(x~)||`` over points sharing a fiber.

    Fibers of the normal-form chart are the curves traced by moving along
    ``range(grad h)``: along them the tangential coordinate is constant. For
    affine constraints they are straight lines; for a single nonlinear
    constraint they are integral curves of ``grad h / ||grad h||^2``, on
    which ``h`` grows at unit rate.
    """
    if p.affine:
        return _sample_L1_affine(p, plan)
    if p.chart is None or p.m != 1:
        raise UnsupportedProblemError("chart unavailable")

    def normal_field(_, x):
        gh = np.asarray(p.jac_h(x), dtype=float).reshape(p.n)
        return gh / (gh @ gh)

    lo, hi = p.chart.param_range
    best, witness = 0.0, None
    span = 2.0 * p.box_diagonal
    for s in np.linspace(lo, hi, plan.fiber_curves):
        base = p.chart.lift(s)
        Jb = np.asarray(p.jac_h(base), dtype=float).reshape(1, p.m, p.n)
        Qb = _tangent_batch(Jb)[0]
        tb = Qb.T @ np.asarray(p.grad_f(base), dtype=float)
        for direction in (1.0, -1.0):
            def leave(_, x):
                return float(np.min(np.concatenate([x - p.box[:, 0], p.box[:, 1] - x])))
            leave.terminal = True
            sol = solve_ivp(normal_field, (0.0, direction * span), base, rtol=1e-10, atol=1e-12,
                            dense_output=True, events=leave, max_step=span / plan.fiber_points)
            t_end = sol.t[-1]
            for y in np.linspace(0.0, t_end, plan.fiber_points + 1)[1:]:
                x = sol.sol(y)
                if not p.in_box(x):
                    continue
                yv = abs(float(np.atleast_1d(p.h(x))[0]))
                if yv < 1e-9:
                    continue
                q = float(np.linalg.norm(_transverse(p, x, Qb) - tb)) / yv
                if q > best:
                    best, witness = q, x
    return best, witness


def _sample_L1_affine(p: Problem, plan: SamplingPlan):
    rng = np.random.default_rng(plan.seed + 1)
    A = np.asarray(p.jac_h(p.box.mean(axis=1)), dtype=float).reshape(p.m, p.n)
    pinv = A.T @ np.linalg.inv(A @ A.T)
    Q0 = _tangent_batch(A[None])[0]
    best, witness = 0.0, None
    starts = p.sample(plan.fiber_curves, plan.seed + 2)
    for x in starts:
        base = x - pinv @ np.atleast_1d(p.h(x))
        tb = Q0.T @ np.asarray(p.grad_f(base), dtype=float)
        for _ in range(plan.fiber_points // 20 + 1):
            y = rng.standard_normal(p.m)
            y *= rng.uniform(0.01, 1.0) * p.box_diagonal / np.linalg.norm(pinv @ y)
            xt = base + pinv @ y
            q = float(np.linalg.norm(Q0.T @ np.asarray(p.grad_f(xt), dtype=float) - tb)) / np.linalg.norm(y)
            if q > best:
                best, witness = q, xt
    return best, witness


def _arclength_profile(p: Problem, points: int):
    """Arclength ``s``, restricted slope ``df/ds`` and curvature ``d2f/ds2`` along the chart."""
    lo, hi = p.chart.param_range
    t = np.linspace(lo, hi, points)
    d = np.array([p.chart.lift_derivative(v) for v in t])
    speed = np.linalg.norm(d, axis=1)
    s = cumulative_trapezoid(speed, t, initial=0.0)
    slope = np.array([np.asarray(p.grad_f(p.chart.lift(v)), dtype=float) @ dv
                      for v, dv in zip(t, d)]) / speed
    curv = np.gradient(slope, t) / speed
    return t, s, slope, curv


def estimate_rho_eta(p: Problem, variant: str = "hessian", points: int = 20_001,
                     safety: float = 0.95) -> float:
    """Strong-convexity constant of ``f`` restricted to the feasible set.

    ``variant="hessian"`` takes the minimum second derivative of ``f`` along
    the arclength of the chart (central differences of the restricted slope);
    ``variant="secant"`` takes the minimum of ``f'(s) / (s - s*)``, i.e. the
    best constant in ``f'(s)(s - s*) >= rho (s - s*)^2``. Sampled results are
    multiplied by ``safety``. Quadratic-affine problems use the exact reduced
    Hessian for both variants, without deflation.

    Raises
    ------
    AssumptionViolation
        If the minimum is not positive (witness point attached).
    UnsupportedProblemError
        For problems without a chart or quadratic data.
    """
    if variant not in ("hessian", "secant"):
        raise ValueError("variant must be 'hessian' or 'secant'")
    if p.quadratic is not None:
        q = p.quadratic
        _, _, vt = np.linalg.svd(q.A)
        Z = vt[p.m:].T
        val = float(np.linalg.eigvalsh(Z.T @ q.Q @ Z).min())
        witness = p.box.mean(axis=1)
        safety = 1.0
    elif p.chart is not None:
        t, s, slope, curv = _arclength_profile(p, points)
        if variant == "hessian":
            i = int(np.argmin(curv[1:-1])) + 1
            val, witness = float(curv[i]), p.chart.lift(t[i])
        else:
            s_star = _slope_root(s, slope)
            ds = s - s_star
            mask = np.abs(ds) > 1e-9 * max(1.0, s[-1] - s[0])
            ratio = slope[mask] / ds[mask]
            i = int(np.argmin(ratio))
            val, witness = float(ratio[i]), p.chart.lift(t[mask][i])
    else:
        raise UnsupportedProblemError(f"{p.name}: chart unavailable for rho_eta estimation")
    if val <= 0:
        raise AssumptionViolation(
            f"restricted objective is not strongly convex ({variant} minimum {val:.4g} "
            f"at x={np.asarray(witness).tolist()})", point=witness)
    return val * safety


def _slope_root(s, slope) -> float:
    sign = np.flatnonzero((slope[:-1] < 0) & (slope[1:] >= 0))
    if sign.size != 1:
        raise AssumptionViolation("restricted objective has no unique stationary point on the chart")
    i = sign[0]
    return float(s[i] - slope[i] * (s[i + 1] - s[i]) / (slope[i + 1] - slope[i]))


def formula_constants(r: ConstantsReport) -> ConstantsReport:
    """Fill the closed-form constants from the sampled bounds.

    ``L_Phi = sqrt(B_h^2 + 1)``, ``L_Psi = B_h / m + 1``,
    ``L_2 = (B_h L_f + L_h B_f) / m + 2 B_h^2 L_h B_f / m^2``,
    ``L_1 = L_Psi (L_q B_f + L_f)`` and ``L_r = m_upper L_2 L_Psi``.
    """
    need = ("m_lower", "m_upper", "B_f", "B_h", "L_f", "L_h", "L_q")
    missing = [k for k in need if getattr(r, k) is None]
    if missing:
        raise ValueError(f"missing inputs for formula constants: {missing}")
    m = r.m_lower
    r.L_Phi = math.sqrt(r.B_h**2 + 1.0)
    r.L_Psi = r.B_h / m + 1.0
    r.L_2_formula = (r.B_h * r.L_f + r.L_h * r.B_f) / m + 2.0 * r.B_h**2 * r.L_h * r.B_f / m**2
    r.L_1_formula = r.L_Psi * (r.L_q * r.B_f + r.L_f)
    r.L_r = r.m_upper * r.L_2 * r.L_Psi
    for name in ("L_Phi", "L_Psi", "L_2_formula", "L_1_formula", "L_r"):
        r.provenance[name] = "formula"
    r.provenance["L_r"] = "formula (L_2 = min of sampled/formula)"
    return r


def kappa(L_r: float, L_1: float, rho_eta: float, m_lower: float) -> float:
    m, rho = m_lower, rho_eta
    return (12 * L_r / m + 64 * L_r**2 / m**2 + 8 * L_1**2 * L_r / (rho**2 * m)
            + 128 * L_1**2 * L_r**2 / (rho**2 * m**2))


@dataclass(frozen=True)
class Threshold:
    kappa: float
    k_p_star: float
    k_i_cap: float
    k: float
    c_bar_H: float
    C_y: float
    C_eta: float
    mu: float


def threshold(r: ConstantsReport, k: float = 1.0) -> Threshold:
    """Explicit PI gain threshold ``k_p* = max{1, 2k/m, kappa}`` and ``k_i <= m k_p*^2 / 2``.

    Also records the proof intermediates ``c_bar_H = m/8``, the bounds on
    ``C_y`` and ``C_eta`` and ``mu = 4 C_eta / rho``.
    """
    if r.rho_eta is None or not r.rho_eta > 0:
        raise ValueError("rho_eta > 0 is required for the threshold")
    if r.m_lower is None or not r.m_lower > 0 or not k > 0:
        raise ValueError("m_lower > 0 and k > 0 are required")
    if r.L_r is None or r.L_1 is None:
        raise ValueError("L_r and L_1 are required; run formula_constants first")
    m, L_r, L_1 = r.m_lower, r.L_r, r.L_1
    kap = kappa(L_r, L_1, r.rho_eta, m)
    kps = max(1.0, 2.0 * k / m, kap)
    C_y = 3 * L_r + 16 * L_r**2 / m
    C_eta = L_r + 16 * L_r**2 / m
    th = Threshold(kap, kps, m * kps**2 / 2.0, k, m / 8.0, C_y, C_eta, 4 * C_eta / r.rho_eta)
    r.kappa, r.k_p_star, r.k_i_cap = th.kappa, th.k_p_star, th.k_i_cap
    for name in ("kappa", "k_p_star", "k_i_cap"):
        r.provenance[name] = "formula"
    r.intermediates.update(k=k, c_bar_H=th.c_bar_H, C_y_bound=C_y, C_eta_bound=C_eta, mu=th.mu,
                           L_1_used=L_1, L_2_used=r.L_2)
    return th


@dataclass
class CertificateResult:
    passed: bool
    samples: int
    k_p: float
    k: float
    theta: float
    min_psi_bar_margin: float
    min_schur_margin: float
    min_residual_margin: float | None
    lemma5_applicable: bool
    failures: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return _plain(asdict(self))


def certificate_checks(p: Problem, r: ConstantsReport, k_p: float, k: float = 1.0,
                       samples: int = 500, seed: int = 0, x_star=None, lambda_star=None,
                       slack: float = 1e-9) -> CertificateResult:
    """Pointwise matrix inequalities of the PI stability argument.

    At each seeded sample with ``theta = 2 m / k``:

    * ``min eig(Psi_bar) >= m/8`` where
      ``Psi_bar = [[H - (k/k_p) I, H - m I], [H - m I, H]]``;
    * ``min eig(S) >= m - k/k_p`` with
      ``S = k (theta - 1/k_p) I - theta^2 k^2 / 4 H^{-1}``;
    * ``||H (phi(x*) - phi(x))|| <= m_upper L_2 ||x - x*||``.

    Failing samples are listed in ``failures`` with the witness point.
    """
    m = r.m_lower
    theta = 2.0 * m / k
    if x_star is None:
        try:
            ref = reference_solution(p)
            x_star, lambda_star = ref.x_star, ref.lambda_star
        except Exception:  # noqa: BLE001 - residual check is skipped without a reference
            x_star = None
    pts = p.sample(samples, seed)
    g, J = _evaluate(p, pts)
    H, _ = _gram_batch(J, pts)
    I = np.eye(p.m)
    top = np.concatenate([H - (k / k_p) * I, H - 0.5 * theta * k * I], axis=2)
    bot = np.concatenate([H - 0.5 * theta * k * I, H], axis=2)
    psi_bar = np.concatenate([top, bot], axis=1)
    psi_min = np.linalg.eigvalsh(psi_bar)[:, 0]
    S = k * (theta - 1.0 / k_p) * I - (theta**2 * k**2 / 4.0) * np.linalg.inv(H)
    s_min = np.linalg.eigvalsh(S)[:, 0]
    psi_margin = psi_min - m / 8.0
    s_margin = s_min - (m - k / k_p)
    failures = []
    for i in np.flatnonzero(psi_margin < -slack):
        failures.append({"check": "psi_bar", "x": pts[i].tolist(), "margin": float(psi_margin[i])})
    for i in np.flatnonzero(s_margin < -slack):
        failures.append({"check": "schur", "x": pts[i].tolist(), "margin": float(s_margin[i])})
    res_margin = None
    if x_star is not None:
        lam_star = np.atleast_1d(lambda_star)
        phi = _phi_batch(g, J, H)
        lhs = np.linalg.norm((H @ (lam_star - phi)[..., None])[..., 0], axis=1)
        rhs = r.m_upper * r.L_2 * np.linalg.norm(pts - x_star, axis=1)
        margin = rhs - lhs
        res_margin = float(margin.min())
        for i in np.flatnonzero(margin < -slack * np.maximum(1.0, rhs)):
            failures.append({"check": "residual_bound", "x": pts[i].tolist(), "margin": float(margin[i])})
    return CertificateResult(not failures, samples, float(k_p), float(k), theta,
                             float(psi_margin.min()), float(s_margin.min()), res_margin,
                             k_p >= 2.0 * k / m, failures)


def constants_report(p: Problem, plan: SamplingPlan | None = None, k: float = 1.0,
                     certificate_samples: int = 500) -> ConstantsReport:
    """Full pipeline: bounds, ``rho_eta``, formula constants, threshold, certificate.

    ``rho_eta`` is first estimated with the arclength-Hessian variant. If
    that minimum is not positive the violation is recorded and the secant
    variant (strong monotonicity of the restricted gradient about the
    minimizer) is used for the threshold instead. Problems without a chart
    stop before the threshold, with a warning.
    """
    plan = plan or SamplingPlan()
    r = estimate_bounds(p, plan)
    formula_constants(r)
    variants = {}
    for variant in ("hessian", "secant"):
        try:
            variants[variant] = estimate_rho_eta(p, variant, plan.rho_points, plan.rho_safety)
        except AssumptionViolation as exc:
            variants[variant] = None
            r.warnings.append(f"rho_eta ({variant}): {exc}")
            r.witnesses[f"rho_eta_{variant}"] = exc.point
        except UnsupportedProblemError as exc:
            r.warnings.append(f"rho_eta: {exc}; threshold not computed")
            return r
    r.intermediates.update(rho_eta_hessian=variants["hessian"], rho_eta_secant=variants["secant"])
    if p.quadratic is not None and variants["hessian"] is not None:
        r.rho_eta, r.provenance["rho_eta"] = variants["hessian"], "exact (reduced hessian)"
    elif variants["hessian"] is not None:
        r.rho_eta, r.provenance["rho_eta"] = variants["hessian"], "sampled (arclength hessian)"
    elif variants["secant"] is not None:
        r.rho_eta, r.provenance["rho_eta"] = variants["secant"], "sampled (secant about minimizer)"
    else:
        raise AssumptionViolation("restricted objective is not strongly convex on the box",
                                  point=r.witnesses.get("rho_eta_secant"))
    th = threshold(r, k)
    cert = certificate_checks(p, r, th.k_p_star, k, samples=certificate_samples, seed=plan.seed)
    r.certificate = cert.to_dict()
    return r
