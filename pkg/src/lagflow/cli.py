"""Command-line front end.

Subcommands::

    lagflow run        integrate one flow from several initial points
    lagflow constants  estimate constants and the PI gain threshold
    lagflow certify    pointwise matrix-inequality checks at a given k_p
    lagflow reproduce  the fixed illustrative sweep (``fig2``)

Exit codes: 0 success, 1 internal or configuration error, 2 unexpected
outcome, 3 assumption violation.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from pathlib import Path

import numpy as np

from .analysis import classify_sweep, summary_json, sweep_summary, write_sweep_csv
from .constants import (ConstantsReport, SamplingPlan, certificate_checks, constants_report)
from .errors import AssumptionViolation, LagflowError
from .flows import FlowSpec
from .integrate import IntegrateConfig, integrate, suggested_config
from .problem import reference_solution, resolve_problem

EXIT_OK, EXIT_ERROR, EXIT_UNEXPECTED, EXIT_ASSUMPTION = 0, 1, 2, 3

FIG2_SEED = 7
FIG2_INITS = 8
FIG2_PLOT_GRID = (121, 101)


class ConfigError(LagflowError):
    pass


# ---------------------------------------------------------------------------
# configuration


RUN_KEYS = {"problem", "flow", "kp", "ki", "k", "w", "inits", "x0", "seed", "tol", "tmax",
            "method", "out", "expect", "rel_tol", "abs_tol", "stride"}


def _load_config(path: str | None, allowed: set[str]) -> dict:
    """Read a JSON config; errors name the offending line."""
    if not path:
        return {}
    text = Path(path).read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}:1: config must be a JSON object")
    for key in doc:
        if key not in allowed:
            line = next((i + 1 for i, ln in enumerate(text.splitlines()) if f'"{key}"' in ln), 1)
            raise ConfigError(f"{path}:{line}: unknown config key {key!r}")
    return doc


def _merge(args: argparse.Namespace, cfg: dict, keys) -> dict:
    """Flags win over the config file; unset flags fall back to it."""
    out = dict(cfg)
    for key in keys:
        val = getattr(args, key, None)
        if val is not None:
            out[key] = val
    return out


def _flow_spec(c: dict) -> FlowSpec:
    flow = str(c.get("flow", "")).lower()
    if not flow:
        raise ConfigError("--flow is required (pdgd, pi, alm or fl)")
    if flow == "pdgd":
        return FlowSpec.pdgd()
    if flow == "pi":
        if c.get("kp") is None:
            raise ConfigError("--kp is required for --flow pi")
        return FlowSpec.pi(float(c["kp"]), float(c.get("ki", 1.0)))
    if flow == "alm":
        if c.get("w") is None:
            raise ConfigError("--w is required for --flow alm")
        return FlowSpec.alm(float(c["w"]))
    if flow == "fl":
        if c.get("k") is None:
            raise ConfigError("--k is required for --flow fl")
        return FlowSpec.fl(float(c["k"]))
    raise ConfigError(f"unknown --flow {flow!r} (expected pdgd, pi, alm or fl)")


def _integrate_config(spec: FlowSpec, c: dict) -> IntegrateConfig:
    over = {}
    if c.get("method") not in (None, "auto"):
        over["method"] = c["method"]
    for key, name in (("tol", "converge_tol"), ("tmax", "t_max"), ("rel_tol", "rel_tol"),
                      ("abs_tol", "abs_tol"), ("stride", "record_stride")):
        if c.get(key) is not None:
            over[name] = c[key]
    if over.get("method") == "rk45_adaptive" or over.get("method") == "rk4_fixed":
        base = IntegrateConfig()
        over.setdefault("rel_tol", base.rel_tol)
        over.setdefault("abs_tol", base.abs_tol)
    try:
        return suggested_config(spec, **over)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _initial_points(p, c: dict) -> np.ndarray:
    if c.get("x0"):
        pts = np.array([[float(v) for v in row.split(",")] for row in str(c["x0"]).split(";")])
        if pts.shape[1] != p.n:
            raise ConfigError(f"--x0 rows need {p.n} coordinates")
        return pts
    count = int(c.get("inits", 8))
    if count < 1:
        raise ConfigError("--inits must be at least 1")
    return p.sample(count, int(c.get("seed", 0)))


def _parse_grid(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.lower().split("x"))
    except ValueError:
        raise ConfigError(f"--grid expects e.g. 200x200, got {text!r}") from None


# ---------------------------------------------------------------------------
# commands


def _slug(label: str) -> str:
    return (label.replace("(", "_").replace(")", "").replace(",", "_").replace("=", "")
            .replace("+", "").lower())


def _run_flow(p, spec, cfg, points, out: Path, prefix: str):
    trajs = []
    for i, x0 in enumerate(points):
        tr = integrate(p, spec, x0, cfg=cfg)
        tr.to_csv(out / f"{prefix}_{i:02d}.csv")
        trajs.append(tr)
    return trajs


def cmd_run(args) -> int:
    c = _merge(args, _load_config(args.config, RUN_KEYS), RUN_KEYS)
    p = resolve_problem(c.get("problem", "illustrative_2d"))
    spec = _flow_spec(c)
    cfg = _integrate_config(spec, c)
    points = _initial_points(p, c)
    expect = c.get("expect", "converge")
    if expect not in ("converge", "diverge", "any"):
        raise ConfigError(f"--expect must be converge, diverge or any, got {expect!r}")
    out = Path(c.get("out") or "lagflow_run")
    out.mkdir(parents=True, exist_ok=True)
    trajs = _run_flow(p, spec, cfg, points, out, _slug(spec.label))
    x_star = None
    try:
        x_star = reference_solution(p).x_star
    except LagflowError:
        pass
    rows = classify_sweep(trajs, x_star)
    write_sweep_csv(rows, out / "classification.csv")
    summary = {"problem": p.name, "flow": spec.label, "method": cfg.method, "t_max": cfg.t_max,
               "expect": expect, "outcomes": [tr.outcome for tr in trajs],
               "counts": sweep_summary(rows)}
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    for tr, x0 in zip(trajs, points):
        print(f"{spec.label:<24} x0={np.array2string(x0, precision=4)}  {tr.outcome:<16} "
              f"t={tr.times[-1]:.4g}  stat={tr.stationarity[-1]:.2e}  feas={tr.feasibility[-1]:.2e}")
    want = {"converge": "converged", "diverge": "diverged"}.get(expect)
    if want and any(tr.outcome != want for tr in trajs):
        print(f"unexpected outcome: expected all {want}", file=sys.stderr)
        return EXIT_UNEXPECTED
    return EXIT_OK


def _plan(args) -> SamplingPlan:
    grid = _parse_grid(args.grid) if args.grid else SamplingPlan().grid
    return SamplingPlan(grid=grid, seed=args.seed if args.seed is not None else 0)


def cmd_constants(args) -> int:
    p = resolve_problem(args.problem)
    r = constants_report(p, _plan(args), k=args.k, certificate_samples=args.samples)
    text = r.to_json()
    out = Path(args.out or f"{p.name}_constants.json")
    out.write_text(text)
    print(r.table())
    for w in r.warnings:
        print(f"warning: {w}")
    print(f"certificate at k_p*: {'pass' if r.certificate.get('passed') else 'FAIL'}")
    print(f"report written to {out}")
    return EXIT_OK


def cmd_certify(args) -> int:
    p = resolve_problem(args.problem)
    if args.report:
        r = ConstantsReport.from_json(Path(args.report).read_text())
    else:
        r = constants_report(p, _plan(args), k=args.k, certificate_samples=args.samples)
    k_p = args.kp if args.kp is not None else r.k_p_star
    res = certificate_checks(p, r, k_p, args.k, samples=args.samples, seed=args.seed or 0)
    print(json.dumps(res.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK if res.passed else EXIT_UNEXPECTED


def fig2_sweep(k_p_star: float):
    """The fixed flow list of the illustrative sweep with its integrator settings."""
    return [
        (FlowSpec.fl(1.0), IntegrateConfig()),
        (FlowSpec.fl(10.0), IntegrateConfig()),
        (FlowSpec.pi(100.0, 1.0), suggested_config(FlowSpec.pi(100.0, 1.0))),
        (FlowSpec.pi(k_p_star, 1.0), suggested_config(FlowSpec.pi(k_p_star, 1.0), t_max=100.0)),
        (FlowSpec.pdgd(), IntegrateConfig(t_max=500.0)),
    ]


def write_plot_data(p, trajs, out: Path, shape=FIG2_PLOT_GRID) -> None:
    """Level-set samples ``x1,x2,f`` on a grid over the box, plus all trajectories."""
    xs = np.linspace(p.box[0, 0], p.box[0, 1], shape[0])
    ys = np.linspace(p.box[1, 0], p.box[1, 1], shape[1])
    with open(out / "plot_grid.csv", "w") as fh:
        fh.write("x1,x2,f\n")
        for a in xs.tolist():
            for b in ys.tolist():
                fh.write(f"{a!r},{b!r},{float(p.f(np.array([a, b])))!r}\n")
    with open(out / "plot_trajectories.csv", "w") as fh:
        fh.write("flow,run,t,x1,x2\n")
        for label, i, tr in trajs:
            for t, x in zip(tr.times, tr.x):
                fh.write(f"{label},{i},{float(t)!r},{float(x[0])!r},{float(x[1])!r}\n")


def cmd_reproduce(args) -> int:
    if args.figure != "fig2":
        raise ConfigError(f"unknown figure {args.figure!r}; only fig2 is available")
    p = resolve_problem("illustrative_2d")
    out = Path(args.out or "lagflow_fig2")
    (out / "trajectories").mkdir(parents=True, exist_ok=True)
    seed = FIG2_SEED if args.seed is None else args.seed
    points = p.sample(args.inits or FIG2_INITS, seed)
    ref = reference_solution(p)
    r = constants_report(p, _plan(args), k=1.0)
    (out / "constants.json").write_text(r.to_json())
    print(f"k_p* = {r.k_p_star:.4g}")
    all_trajs, labelled = [], []
    for spec, cfg in fig2_sweep(r.k_p_star):
        label = "PI(k_p=k_p*,k_i=1)" if spec.k_p == r.k_p_star else spec.label
        trajs = _run_flow(p, spec, cfg, points, out / "trajectories", _slug(label))
        all_trajs += trajs
        labelled += [(label, i, tr) for i, tr in enumerate(trajs)]
        counts = {o: sum(tr.outcome == o for tr in trajs) for o in ("converged", "diverged", "horizon_reached")}
        print(f"{label:<24} {counts}")
    rows = classify_sweep(all_trajs, ref.x_star)
    write_sweep_csv(rows, out / "classification.csv")
    (out / "summary.json").write_text(summary_json(rows))
    write_plot_data(p, labelled, out)
    ok = all((r_.outcome == "diverged") == (r_.kind == "PDGD") for r_ in rows)
    ok &= all(r_.outcome in ("converged", "diverged") for r_ in rows)
    return EXIT_OK if ok else EXIT_UNEXPECTED


# ---------------------------------------------------------------------------
# parser


class _Parser(argparse.ArgumentParser):
    """Usage errors exit with 1; 2 is reserved for unexpected outcomes."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_ERROR, f"{self.prog}: config error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="lagflow", description=__doc__.split("\n\n")[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    run = sub.add_parser("run", help="integrate a flow from several initial points")
    run.add_argument("--config", help="JSON config file; flags override it")
    run.add_argument("--problem")
    run.add_argument("--flow", choices=("pdgd", "pi", "alm", "fl"))
    run.add_argument("--kp", type=float)
    run.add_argument("--ki", type=float)
    run.add_argument("--k", type=float)
    run.add_argument("--w", type=float)
    run.add_argument("--inits", type=int)
    run.add_argument("--x0", help="explicit initial points, e.g. '1,0;0,1'")
    run.add_argument("--seed", type=int)
    run.add_argument("--tol", type=float, help="KKT residual convergence threshold")
    run.add_argument("--tmax", type=float)
    run.add_argument("--method", choices=("auto", "rk4_fixed", "rk45_adaptive", "semi_implicit"))
    run.add_argument("--out")
    run.add_argument("--expect", choices=("converge", "diverge", "any"))
    run.set_defaults(func=cmd_run)

    def constants_flags(sp):
        sp.add_argument("--problem", default="illustrative_2d")
        sp.add_argument("--grid", help="points per axis, e.g. 200x200")
        sp.add_argument("--k", type=float, default=1.0)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--samples", type=int, default=500)
        sp.add_argument("--out")

    cons = sub.add_parser("constants", help="estimate constants and the PI gain threshold")
    constants_flags(cons)
    cons.set_defaults(func=cmd_constants)

    cert = sub.add_parser("certify", help="pointwise certificate checks")
    constants_flags(cert)
    cert.add_argument("--kp", type=float, help="default: computed k_p*")
    cert.add_argument("--report", help="reuse a constants JSON report")
    cert.set_defaults(func=cmd_certify)

    rep = sub.add_parser("reproduce", help="run the fixed illustrative sweep")
    rep.add_argument("figure", choices=("fig2",))
    rep.add_argument("--out")
    rep.add_argument("--inits", type=int)
    rep.add_argument("--seed", type=int)
    rep.add_argument("--grid", help="constants grid, e.g. 200x200")
    rep.set_defaults(func=cmd_reproduce)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_ERROR
    except AssumptionViolation as exc:
        where = "" if exc.point is None else f" (witness x={exc.point.tolist()})"
        print(f"assumption violation: {exc}{where}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except Exception:  # noqa: BLE001 - stable exit code contract
        traceback.print_exc()
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
