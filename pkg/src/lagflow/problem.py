"""Equality-constrained problems ``min f(x) s.t. h(x) = 0`` and the builtin registry.

A :class:`Problem` bundles the objective, the constraint map and their first
derivatives together with an axis-aligned evaluation box. All sampling-based
estimates elsewhere in the package are localized to that box.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from typing import Callable

import numpy as np

from .errors import (
    AmbiguousSolutionError,
    DerivativeError,
    ProblemDefinitionError,
    UnsupportedProblemError,
)

__all__ = [
    "Problem",
    "KKTPoint",
    "Chart1D",
    "QuadraticData",
    "DerivativeReport",
    "builtin",
    "register_problem",
    "available_problems",
    "resolve_problem",
    "problem_from_json",
    "validate_derivatives",
    "kkt_residual",
    "reference_solution",
    "golden",
]


@dataclass(frozen=True)
class Chart1D:
    """Explicit parametrization of a one-dimensional feasible curve.

    ``lift(s)`` maps a scalar parameter to a point with ``h(lift(s)) = 0``.
    """

    param_range: tuple[float, float]
    lift: Callable[[float], np.ndarray]
    restricted_f: Callable[[float], float]

    def lift_derivative(self, s: float, step: float = 1e-6) -> np.ndarray:
        return (self.lift(s + step) - self.lift(s - step)) / (2.0 * step)


@dataclass(frozen=True)
class QuadraticData:
    Q: np.ndarray
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray


@dataclass(frozen=True, eq=False)
class Problem:
    """Smooth equality-constrained problem with analytic first derivatives.

    Parameters
    ----------
    name : str
        Identifier, used in reports and file names.
    n, m : int
        Primal and constraint dimensions, ``m < n``.
    f, grad_f : callable
        Objective ``R^n -> R`` and its gradient ``R^n -> R^n``.
    h, jac_h : callable
        Constraint map ``R^n -> R^m`` and its Jacobian ``R^n -> R^{m x n}``
        (rows are constraint gradients).
    box : array_like, shape (n, 2)
        Evaluation region ``[lo, hi]`` per coordinate.
    chart : Chart1D, optional
        Feasible-curve parametrization, available for graph and affine
        constraints with ``n - m = 1``.
    quadratic : QuadraticData, optional
        Present for ``quadratic_affine`` problems.
    affine : bool
        True when ``jac_h`` is constant.
    """

    name: str
    n: int
    m: int
    f: Callable[[np.ndarray], float]
    grad_f: Callable[[np.ndarray], np.ndarray]
    h: Callable[[np.ndarray], np.ndarray]
    jac_h: Callable[[np.ndarray], np.ndarray]
    box: np.ndarray
    chart: Chart1D | None = None
    quadratic: QuadraticData | None = None
    affine: bool = False
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        box = np.array(self.box, dtype=float).reshape(self.n, 2)
        box.setflags(write=False)
        object.__setattr__(self, "box", box)
        if not 0 < self.m < self.n:
            raise ProblemDefinitionError(f"need 0 < m < n, got n={self.n}, m={self.m}")
        if np.any(box[:, 1] <= box[:, 0]):
            raise ProblemDefinitionError("box must be nonempty in every coordinate")

    @property
    def box_diagonal(self) -> float:
        return float(np.linalg.norm(self.box[:, 1] - self.box[:, 0]))

    def sample(self, count: int, seed: int = 0) -> np.ndarray:
        """Uniform seeded samples from the box, shape ``(count, n)``."""
        rng = np.random.default_rng(seed)
        lo, hi = self.box[:, 0], self.box[:, 1]
        return lo + (hi - lo) * rng.random((count, self.n))

    def in_box(self, x: np.ndarray) -> bool:
        return bool(np.all(x >= self.box[:, 0]) and np.all(x <= self.box[:, 1]))


@dataclass(frozen=True)
class KKTPoint:
    x_star: np.ndarray
    lambda_star: np.ndarray
    stationarity_residual: float
    feasibility_residual: float
    certified: bool = False
    oracle: dict = field(default_factory=dict)


@dataclass(frozen=True)
class DerivativeReport:
    grad_f_error: float
    jac_h_error: float
    grad_f_worst: np.ndarray
    jac_h_worst: np.ndarray
    samples: int
    seed: int
    tol: float = 1e-6

    @property
    def passed(self) -> bool:
        return self.grad_f_error <= self.tol and self.jac_h_error <= self.tol


# ---------------------------------------------------------------------------
# derivative checks and residuals


def _fd_steps(x: np.ndarray, step: float) -> np.ndarray:
    return step * np.maximum(1.0, np.abs(x))


def _central_gradient(fun, x: np.ndarray, step: float) -> np.ndarray:
    steps = _fd_steps(x, step)
    cols = []
    for i, hi in enumerate(steps):
        e = np.zeros_like(x)
        e[i] = hi
        cols.append((np.asarray(fun(x + e), dtype=float) - np.asarray(fun(x - e), dtype=float)) / (2 * hi))
    return np.stack(cols, axis=-1)


def _relative_error(supplied: np.ndarray, reference: np.ndarray) -> float:
    scale = max(float(np.linalg.norm(reference)), 1e-6)
    return float(np.linalg.norm(supplied - reference)) / scale


def validate_derivatives(p: Problem, samples: int = 100, seed: int = 0, step: float = 1e-6,
                         tol: float = 1e-6) -> DerivativeReport:
    """Compare ``grad_f`` and ``jac_h`` against central differences at seeded box samples.

    The finite-difference step is ``step * max(1, |x_i|)`` per coordinate.
    Errors are relative to the norm of the finite-difference estimate.
    """
    if samples < 1:
        raise ValueError("samples must be >= 1")
    worst_g = worst_j = -1.0
    xg = xj = None
    for x in p.sample(samples, seed):
        fd_g = _central_gradient(p.f, x, step)
        g = np.asarray(p.grad_f(x), dtype=float)
        fd_j = _central_gradient(p.h, x, step).reshape(p.m, p.n)
        jac = np.asarray(p.jac_h(x), dtype=float).reshape(p.m, p.n)
        if not (np.all(np.isfinite(fd_g)) and np.all(np.isfinite(g))
                and np.all(np.isfinite(fd_j)) and np.all(np.isfinite(jac))):
            raise DerivativeError(f"non-finite evaluation at x={x.tolist()}", point=x)
        eg, ej = _relative_error(g, fd_g), _relative_error(jac, fd_j)
        if eg > worst_g:
            worst_g, xg = eg, x
        if ej > worst_j:
            worst_j, xj = ej, x
    return DerivativeReport(worst_g, worst_j, xg, xj, samples, seed, tol)


def kkt_residual(p: Problem, x, lam) -> tuple[float, float]:
    """Return ``(||grad f + grad h lam||, ||h(x)||)``."""
    x = np.asarray(x, dtype=float)
    lam = np.atleast_1d(np.asarray(lam, dtype=float))
    g = np.asarray(p.grad_f(x), dtype=float)
    J = np.asarray(p.jac_h(x), dtype=float).reshape(p.m, p.n)
    hx = np.atleast_1d(np.asarray(p.h(x), dtype=float))
    r = g + J.T @ lam
    if not (np.all(np.isfinite(r)) and np.all(np.isfinite(hx))):
        raise DerivativeError(f"non-finite evaluation at x={x.tolist()}", point=x)
    return float(np.linalg.norm(r)), float(np.linalg.norm(hx))


# ---------------------------------------------------------------------------
# builtin problems


def _illustrative_2d(box=((-3.0, 3.0), (-2.5, 2.5))) -> Problem:
    box = np.asarray(box, dtype=float)
    if box.shape != (2, 2) or np.any(box[:, 0] >= box[:, 1]):
        raise ProblemDefinitionError("box must be [[lo1, hi1], [lo2, hi2]] with lo < hi")

    def f(x):
        x1, x2 = x
        return ((x1**2 - x2**2 - 1) ** 2 + 0.7 * (x1**3 + x1 * x2**2)
                + 70.0 * math.exp(-2 * (x1 - 1) ** 2 - 2 * x2**2))

    def grad_f(x):
        x1, x2 = x
        a = x1**2 - x2**2 - 1
        bump = 70.0 * math.exp(-2 * (x1 - 1) ** 2 - 2 * x2**2)
        return np.array([
            4 * x1 * a + 0.7 * (3 * x1**2 + x2**2) - 4 * (x1 - 1) * bump,
            -4 * x2 * a + 1.4 * x1 * x2 - 4 * x2 * bump,
        ])

    def h(x):
        return np.array([x[1] - math.exp(x[0])])

    def jac_h(x):
        return np.array([[-math.exp(x[0]), 1.0]])

    def lift(s):
        return np.array([s, math.exp(s)])

    # feasible arc inside the box: lo2 <= e^s <= hi2
    lo = box[0, 0] if box[1, 0] <= 0 else max(box[0, 0], math.log(box[1, 0]))
    hi = box[0, 1] if box[1, 1] <= 0 else min(box[0, 1], math.log(box[1, 1]))
    if box[1, 1] <= 0 or lo >= hi:
        raise ProblemDefinitionError("feasible curve x2 = exp(x1) does not cross the box")
    chart = Chart1D((float(lo), float(hi)), lift, lambda s: f(lift(s)))
    return Problem("illustrative_2d", 2, 1, f, grad_f, h, jac_h, box, chart=chart)


def _as_matrix(value, shape_hint: int | None = None) -> np.ndarray:
    if isinstance(value, str) and value.strip().upper() == "I":
        if shape_hint is None:
            raise ProblemDefinitionError("identity shorthand needs a known dimension")
        return np.eye(shape_hint)
    return np.atleast_2d(np.asarray(value, dtype=float))


def _quadratic_affine(Q="I", c=0.0, A=((1.0, 0.0),), b=(1.0,), box=None, name=None) -> Problem:
    A = _as_matrix(A)
    m, n = A.shape
    Q = _as_matrix(Q, n)
    c = np.broadcast_to(np.asarray(c, dtype=float), (n,)).copy()
    b = np.broadcast_to(np.asarray(b, dtype=float), (m,)).copy()
    if Q.shape != (n, n):
        raise ProblemDefinitionError(f"Q must be {n}x{n}, got {Q.shape}")
    if not np.allclose(Q, Q.T):
        raise ProblemDefinitionError("Q must be symmetric")
    if np.linalg.eigvalsh(Q).min() < -1e-12:
        raise ProblemDefinitionError("Q must be positive semidefinite")
    if m >= n or np.linalg.matrix_rank(A) < m:
        raise ProblemDefinitionError("A must have full row rank with fewer rows than columns")
    for arr in (Q, c, A, b):
        arr.setflags(write=False)

    def f(x):
        return float(0.5 * x @ Q @ x + c @ x)

    def grad_f(x):
        return Q @ x + c

    def h(x):
        return A @ x - b

    def jac_h(x):
        return A

    chart = None
    if n - m == 1:
        # feasible set is the line x0 + s*d
        x0 = np.linalg.lstsq(A, b, rcond=None)[0]
        _, _, vt = np.linalg.svd(A)
        d = vt[-1]
        d = d if d[np.flatnonzero(np.abs(d) > 1e-12)[0]] > 0 else -d
        lo, hi = _line_range(x0, d, box if box is not None else _default_box(n, x0))

        def lift(s, x0=x0, d=d):
            return x0 + s * d

        chart = Chart1D((lo, hi), lift, lambda s: f(lift(s)))
    if box is None:
        box = _default_box(n, np.linalg.lstsq(A, b, rcond=None)[0])
    params = {"Q": Q.tolist(), "c": c.tolist(), "A": A.tolist(), "b": b.tolist()}
    return Problem(name or "quadratic_affine", n, m, f, grad_f, h, jac_h, np.asarray(box, dtype=float),
                   chart=chart, quadratic=QuadraticData(Q, c, A, b), affine=True, params=params)


def _default_box(n: int, center: np.ndarray) -> np.ndarray:
    return np.stack([center - 3.0, center + 3.0], axis=1)


def _line_range(x0, d, box) -> tuple[float, float]:
    box = np.asarray(box, dtype=float)
    lo, hi = -np.inf, np.inf
    for i in range(len(x0)):
        if abs(d[i]) < 1e-14:
            continue
        a, b = (box[i, 0] - x0[i]) / d[i], (box[i, 1] - x0[i]) / d[i]
        lo, hi = max(lo, min(a, b)), min(hi, max(a, b))
    if not np.isfinite(lo) or lo >= hi:
        raise ProblemDefinitionError("feasible line does not cross the box")
    return float(lo), float(hi)


def _graph_quadratic(Q="I", c=(0.0, 0.0), coeffs=(0.5, 0.0, 1.0), box=((-2.0, 2.0), (-1.0, 4.0))) -> Problem:
    """``f = x'Qx/2 + c'x`` subject to ``x2 = a x1^2 + b x1 + c0``."""
    Q = _as_matrix(Q, 2)
    c = np.asarray(c, dtype=float)
    a, b1, c0 = map(float, coeffs)

    def g(s):
        return a * s * s + b1 * s + c0

    def f(x):
        return float(0.5 * x @ Q @ x + c @ x)

    def grad_f(x):
        return Q @ x + c

    def h(x):
        return np.array([x[1] - g(x[0])])

    def jac_h(x):
        return np.array([[-(2 * a * x[0] + b1), 1.0]])

    def lift(s):
        return np.array([s, g(s)])

    box = np.asarray(box, dtype=float)
    chart = Chart1D(_graph_range(g, box), lift, lambda s: f(lift(s)))
    params = {"Q": Q.tolist(), "c": c.tolist(), "coeffs": [a, b1, c0]}
    return Problem("graph_quadratic", 2, 1, f, grad_f, h, jac_h, box, chart=chart, params=params)


def _graph_range(g, box) -> tuple[float, float]:
    s = np.linspace(box[0, 0], box[0, 1], 20001)
    inside = np.array([box[1, 0] <= g(v) <= box[1, 1] for v in s])
    if not inside.any():
        raise ProblemDefinitionError("feasible curve does not cross the box")
    idx = np.flatnonzero(inside)
    if np.any(np.diff(idx) != 1):
        raise ProblemDefinitionError("feasible curve leaves and re-enters the box")
    return float(s[idx[0]]), float(s[idx[-1]])


_REGISTRY: dict[str, Callable[..., Problem]] = {
    "illustrative_2d": _illustrative_2d,
    "quadratic_affine": _quadratic_affine,
    "graph_quadratic": _graph_quadratic,
}


def register_problem(name: str, factory: Callable[..., Problem]) -> None:
    """Make a user-coded problem factory resolvable by name (library API and CLI)."""
    _REGISTRY[name] = factory


def available_problems() -> list[str]:
    return sorted(_REGISTRY)


def builtin(name: str, /, **params) -> Problem:
    """Construct a registered problem.

    ``illustrative_2d`` is the two-dimensional non-convex example with the
    exponential constraint ``x2 = exp(x1)``. ``quadratic_affine`` takes
    ``Q, c, A, b``; ``graph_quadratic`` takes ``Q, c, coeffs=(a, b, c0)``.
    """
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise UnsupportedProblemError(
            f"unknown problem {name!r}; available: {', '.join(available_problems())}") from None
    return factory(**params)


_TOKEN = re.compile(r"\[[^\]]*\]|[^,]+")


def _parse_token(tok: str):
    tok = tok.strip()
    if tok.upper() == "I":
        return "I"
    if tok.startswith("["):
        rows = [r.split() for r in tok.strip("[]").split(";")]
        arr = np.array([[float(v) for v in r] for r in rows if r])
        return arr[0] if arr.shape[0] == 1 and ";" not in tok else arr
    return float(tok)


def resolve_problem(ref: str) -> Problem:
    """Resolve a problem reference used by the CLI.

    Accepts a registered name, ``quadratic_affine:Q,c,A,b`` shorthand
    (``I`` for identity, ``[1 0; 0 1]`` for matrices, scalars broadcast)
    or a path to a JSON problem document.
    """
    if ref.endswith(".json"):
        with open(ref) as fh:
            return problem_from_json(json.load(fh))
    if ":" in ref:
        name, args = ref.split(":", 1)
        tokens = [_parse_token(t) for t in _TOKEN.findall(args)]
        if name == "quadratic_affine":
            if len(tokens) != 4:
                raise ProblemDefinitionError("quadratic_affine shorthand needs Q,c,A,b")
            Q, c, A, b = tokens
            A = np.atleast_2d(A)
            return builtin(name, Q=Q, c=c, A=A, b=b)
        raise ProblemDefinitionError(f"no shorthand parameters for {name!r}")
    return builtin(ref)


def problem_from_json(doc: dict) -> Problem:
    """Build a problem from ``{"name", "n", "m", "box", "kind", "parameters"}``."""
    kind = doc.get("kind", "builtin")
    params = dict(doc.get("parameters", {}))
    if "box" in doc:
        params["box"] = doc["box"]
    if kind == "builtin":
        try:
            p = builtin(doc["name"], **params)
        except TypeError as exc:
            raise ProblemDefinitionError(f"bad parameters for {doc['name']!r}: {exc}") from None
    elif kind == "quadratic_affine":
        params.setdefault("name", doc.get("name"))
        try:
            p = builtin("quadratic_affine", **params)
        except TypeError as exc:
            raise ProblemDefinitionError(f"bad quadratic_affine parameters: {exc}") from None
    else:
        raise ProblemDefinitionError(f"unknown problem kind {kind!r}")
    for key in ("n", "m"):
        if key in doc and doc[key] != getattr(p, key):
            raise ProblemDefinitionError(f"declared {key}={doc[key]} but problem has {getattr(p, key)}")
    return p


# ---------------------------------------------------------------------------
# reference solutions


def reference_solution(p: Problem, grid_points: int = 20001, xtol: float = 1e-12) -> KKTPoint:
    """Global minimizer and multiplier by an oracle independent of the flows.

    Quadratic-affine problems use the linear KKT system. Charted problems use
    a dense grid over the chart parameter followed by golden-section
    refinement of the restricted objective. Comparing function values only
    locates the minimizer to about ``sqrt(eps)``, so the result is polished
    by a bracketed root of the restricted slope ``grad f . lift'``. The
    multiplier is the least-squares multiplier at the minimizer.
    """
    from .geometry import multiplier_ls

    if p.quadratic is not None:
        q = p.quadratic
        _, s, vt = np.linalg.svd(q.A)
        Z = vt[p.m:].T
        reduced = np.linalg.eigvalsh(Z.T @ q.Q @ Z)
        if reduced.min() <= 1e-12 * max(1.0, abs(reduced).max()):
            raise AmbiguousSolutionError("reduced Hessian is singular: minimizer not unique or unbounded")
        K = np.block([[q.Q, q.A.T], [q.A, np.zeros((p.m, p.m))]])
        sol = np.linalg.solve(K, np.concatenate([-q.c, q.b]))
        x, lam = sol[:p.n], sol[p.n:]
        oracle = {"method": "kkt_linear_solve"}
    elif p.chart is not None:
        lo, hi = p.chart.param_range
        if grid_points < 10_000:
            raise ValueError("grid oracle needs at least 10,000 points")
        s = np.linspace(lo, hi, grid_points)
        vals = np.array([p.chart.restricted_f(v) for v in s])
        i = int(np.argmin(vals))
        _check_unique_minimum(s, vals, i)
        a, b = s[max(i - 1, 0)], s[min(i + 1, grid_points - 1)]
        s_star = _golden_section(p.chart.restricted_f, a, b, xtol)
        s_star = _polish_slope_root(p, s_star, a, b, xtol)
        x = p.chart.lift(s_star)
        lam = multiplier_ls(p, x)
        oracle = {"method": "grid_golden_section", "grid_points": grid_points,
                  "param_range": [lo, hi], "xtol": xtol, "s_star": s_star,
                  "polish": "brentq on restricted slope"}
    else:
        raise UnsupportedProblemError(f"{p.name}: reference solution needs quadratic data or a chart")
    stat, feas = kkt_residual(p, x, lam)
    return KKTPoint(x, np.atleast_1d(lam), stat, feas, certified=max(stat, feas) <= 1e-8, oracle=oracle)


def _polish_slope_root(p: Problem, s0: float, a: float, b: float, xtol: float) -> float:
    from scipy.optimize import brentq

    def slope(v):
        return float(np.asarray(p.grad_f(p.chart.lift(v)), dtype=float) @ p.chart.lift_derivative(v))

    lo, hi = slope(a), slope(b)
    if not (lo < 0 < hi):
        return s0
    return brentq(slope, a, b, xtol=xtol, rtol=4 * np.finfo(float).eps)


def _golden_section(fun, a: float, b: float, xtol: float) -> float:
    invphi = (math.sqrt(5) - 1) / 2
    c, d = b - invphi * (b - a), a + invphi * (b - a)
    fc, fd = fun(c), fun(d)
    while b - a > xtol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - invphi * (b - a)
            fc = fun(c)
        else:
            a, c, fc = c, d, fd
            d = a + invphi * (b - a)
            fd = fun(d)
    return 0.5 * (a + b)


def _check_unique_minimum(s, vals, i, rel: float = 1e-9) -> None:
    fmin = vals[i]
    tol = rel * max(1.0, abs(fmin))
    near = np.flatnonzero(vals <= fmin + tol)
    if near.max() - near.min() + 1 > near.size:
        raise AmbiguousSolutionError(
            f"grid minimum not unique: values within {tol:.1e} at s={s[near[0]]:.6g} and s={s[near[-1]]:.6g}")
    if near.size > max(3, len(s) // 100):
        raise AmbiguousSolutionError("restricted objective is flat at the grid minimum")


def golden(name: str) -> dict:
    """Committed oracle data for a builtin problem (see ``data/golden.json``)."""
    text = resources.files("lagflow").joinpath("data/golden.json").read_text()
    data = json.loads(text)
    if name not in data:
        raise KeyError(f"no golden data for {name!r}")
    return data[name]
