"""Regenerate ``src/lagflow/data/golden.json`` from the independent oracles.

Run once after changing a builtin problem; the output is committed and tests
compare against it.
"""

import json
from pathlib import Path

import numpy as np

from lagflow.constants import _arclength_profile, _slope_root
from lagflow.problem import builtin, reference_solution

GRID, XTOL, RHO_POINTS = 20001, 1e-12, 20001
OUT = Path(__file__).resolve().parents[1] / "src" / "lagflow" / "data" / "golden.json"


def entry(name):
    p = builtin(name)
    ref = reference_solution(p, grid_points=GRID, xtol=XTOL)
    doc = {
        "x_star": ref.x_star.tolist(),
        "lambda_star": np.atleast_1d(ref.lambda_star).tolist(),
        "f_star": float(p.f(ref.x_star)),
        "oracle": {"method": ref.oracle, "grid_points": GRID, "xtol": XTOL},
    }
    if p.chart is not None and p.quadratic is None:
        t, s, slope, curv = _arclength_profile(p, RHO_POINTS)
        i = int(np.argmin(curv[1:-1])) + 1
        s_star = _slope_root(s, slope)
        ds = s - s_star
        mask = np.abs(ds) > 1e-9 * max(1.0, s[-1] - s[0])
        j = int(np.argmin(slope[mask] / ds[mask]))
        doc["rho_eta"] = {
            "points": RHO_POINTS,
            "hessian_min": float(curv[i]),
            "hessian_argmin": p.chart.lift(t[i]).tolist(),
            "secant_min": float(slope[mask][j] / ds[mask][j]),
            "curvature_at_minimizer": float(np.interp(s_star, s, curv)),
        }
    return doc


if __name__ == "__main__":
    data = {name: entry(name) for name in ("illustrative_2d", "graph_quadratic")}
    OUT.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")
    print(OUT.read_text())
