"""Command-line front end: single runs, table sweeps and spectral checks.

    ipmcontrol run   [--config FILE] [problem flags] --out DIR
    ipmcontrol sweep --table {1,2,3,4,6,partial} [axis overrides] --out DIR
    ipmcontrol verify --out DIR

All CSV files except the timing ones are deterministic: floats are written
with repr and rows come out in a fixed order regardless of SOLVER_THREADS.
"""

from __future__ import annotations

import argparse
import csv
import itertools
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .fem import ObservationRegion
from .ipm import SOLVERS, IpmNotConverged, IpmParams, ipm_solve
from .qp import (ControlProblem, build_qp, full_grid_control, l1_norm, load_config,
                 sparsity_metric)

log = logging.getLogger("ipmcontrol")

DEFAULTS = {
    "pde": "poisson", "ell": 5, "alpha": 1e-2, "beta": 1e-2, "sigma": 0.2, "solver": None,
    "ua": -2.0, "ub": 1.5, "ya": None, "yb": None, "obs_box": None, "eps": 1e-1,
    "tau": 0.04, "T": 1.0, "mass": "consistent", "time_rule": "rectangle",
    "lintol": 1e-10, "mu0": 1.0, "maxit": 100,
}
SETTING_FIELDS = tuple(DEFAULTS)
RESULT_FIELDS = ("nli", "av_li", "final_mu", "sparsity", "l1_norm", "converged",
                 "linear_failures", "max_lin_residual")
SUMMARY_FIELDS = SETTING_FIELDS + RESULT_FIELDS

MAX_ERROR = 2


class UsageError(ValueError):
    pass


# ---------------------------------------------------------------------------
# cells


def resolve(settings: dict) -> dict:
    """Fill defaults, pick a solver and reject invalid combinations."""
    s = dict(DEFAULTS)
    s.update({k: v for k, v in settings.items() if v is not None})
    unknown = set(s) - set(DEFAULTS)
    if unknown:
        raise UsageError(f"unknown settings: {sorted(unknown)}")
    partial = bool(s["obs_box"])
    if s["solver"] is None:
        s["solver"] = "gmres-ppi" if partial else "gmres-pt"
    if s["solver"] not in SOLVERS:
        raise UsageError(f"unknown solver {s['solver']!r}")
    if partial and s["solver"] in ("minres-pd", "gmres-pt"):
        raise UsageError(f"{s['solver']} cannot handle partial observation; use gmres-ppi")
    if s["pde"] == "heat":
        if s["solver"] == "gmres-ppi":
            raise UsageError("gmres-ppi is not available for the heat problem")
        if partial or s["ya"] is not None:
            raise UsageError("the heat problem supports control constraints only")
    if (s["ya"] is None) != (s["yb"] is None):
        raise UsageError("--ya and --yb must be given together")
    if partial:
        ObservationRegion.parse(s["obs_box"])
    return s


def make_problem(s: dict) -> ControlProblem:
    box = ObservationRegion.parse(s["obs_box"]) if s["obs_box"] else None
    return ControlProblem(pde=s["pde"], ell=int(s["ell"]), alpha=s["alpha"], beta=s["beta"],
                          ua=s["ua"], ub=s["ub"], ya=s["ya"], yb=s["yb"], obs_box=box,
                          eps=s["eps"], tau=s["tau"], T=s["T"], mass=s["mass"],
                          time_rule=s["time_rule"])


def make_params(s: dict) -> IpmParams:
    return IpmParams(sigma=s["sigma"], solver=s["solver"], lintol=s["lintol"], mu0=s["mu0"],
                     max_iterations=int(s["maxit"]))


def solve_cell(s: dict):
    """Run one configuration; returns (qp, solution, stats)."""
    qp = build_qp(make_problem(s))
    try:
        sol, stats = ipm_solve(qp, make_params(s))
    except IpmNotConverged as exc:
        sol, stats = exc.solution, exc.stats
        log.warning("no IPM convergence for %s", _label(s))
    return qp, sol, stats


def summarize(s: dict, qp, sol, stats) -> dict:
    u = full_grid_control(qp, sol.u)
    row = {k: s[k] for k in SETTING_FIELDS}
    row.update(
        nli=stats.nli, av_li=stats.av_li, final_mu=stats.final_mu,
        sparsity=sparsity_metric(u), l1_norm=l1_norm(sol.u), converged=stats.converged,
        linear_failures=stats.linear_failures,
        max_lin_residual=max((r.lin_residual for r in stats.records), default=0.0),
    )
    return row


def _cell_job(s: dict):
    qp, sol, stats = solve_cell(s)
    return summarize(s, qp, sol, stats), stats.av_cpu


def _label(s):
    return " ".join(f"{k}={s[k]}" for k in ("pde", "ell", "alpha", "beta", "solver"))


def _fmt(v):
    if v is None:
        return ""
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return v


def write_rows(path, fields, rows):
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(fields)
        for r in rows:
            wr.writerow([_fmt(r.get(k)) for k in fields])


def write_solution(path, qp, sol):
    grid = qp.grid
    x1, x2 = grid.full_coordinates()
    st = qp.meta.get("time")
    nt = st.nt if st is not None else 1
    U = np.asarray(sol.u).reshape(nt, grid.n)
    Y = np.asarray(sol.y).reshape(nt, grid.n)
    fields = (["t"] if st is not None else []) + ["x1", "x2", "u", "y"]
    rows = []
    for k in range(nt):
        u, y = grid.extend_by_zero(U[k]), grid.extend_by_zero(Y[k])
        for i in range(grid.n_full):
            r = {"x1": x1[i], "x2": x2[i], "u": u[i], "y": y[i]}
            if st is not None:
                r["t"] = (k + 1) * st.tau
            rows.append(r)
    write_rows(path, fields, rows)


def worker_count(ncells: int) -> int:
    raw = os.environ.get("SOLVER_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise UsageError(f"SOLVER_THREADS must be an integer, got {raw!r}")
    return max(1, min(n, ncells))


def run_cells(cells: list) -> list:
    """Solve cells, possibly in parallel; results follow the input order."""
    workers = worker_count(len(cells))
    if workers == 1 or len(cells) <= 1:
        return [_cell_job(c) for c in cells]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_cell_job, cells))


# ---------------------------------------------------------------------------
# table layouts


EXP = (1e-2, 1e-4, 1e-6)
TABLES = {
    "1": [dict(pde="poisson", ell=[5], alpha=EXP, beta=[1e-1, 1e-2, 1e-3], sigma=0.2)],
    "2": [dict(pde="poisson", ell=[6, 7, 8, 9], alpha=EXP, beta=[1e-2], sigma=0.2,
               solver=["gmres-pt", "minres-pd"])],
    "3": [dict(pde="convdiff", ell=[6, 7, 8, 9], alpha=EXP, beta=[1e-3], eps=[1e-1], sigma=0.25),
          dict(pde="convdiff", ell=[6, 7, 8, 9], alpha=EXP, beta=[1e-3], eps=[1e-2], sigma=0.4)],
    "4": [dict(pde="poisson", ell=[6, 7, 8, 9], alpha=EXP, beta=[1e-2], sigma=0.2,
               ya=-0.1, yb=0.8, ua=-1.0, ub=15.0)],
    "6": [dict(pde="heat", ell=[4, 5], alpha=EXP, beta=[1e-2], tau=[0.04, 0.02, 0.01],
               sigma=0.25)],
    "partial": [dict(pde="poisson", ell=[3, 4, 5], alpha=EXP, beta=[1e-3], sigma=0.25,
                     obs_box="0.2,0.4,0.4,0.9", solver=["gmres-ppi"])],
}
AXES = ("ell", "alpha", "beta", "eps", "tau", "solver")


def expand(layout: list, overrides: dict | None = None) -> list:
    """Cartesian product over the axes of each layout group, in fixed order."""
    overrides = overrides or {}
    cells = []
    for group in layout:
        fixed = {k: v for k, v in group.items() if k not in AXES}
        axes = {k: list(group.get(k, [DEFAULTS[k]])) for k in AXES}
        for k, v in overrides.items():
            if k in AXES:
                axes[k] = list(v)
            else:
                fixed[k] = v
        for combo in itertools.product(*(axes[k] for k in AXES)):
            cells.append({**fixed, **dict(zip(AXES, combo))})
    return cells


# ---------------------------------------------------------------------------
# commands


def _problem_flags(p: argparse.ArgumentParser, multi: bool = False):
    nargs = "*" if multi else None
    p.add_argument("--pde", choices=("poisson", "convdiff", "heat"))
    p.add_argument("--ell", type=int, nargs=nargs)
    p.add_argument("--alpha", type=float, nargs=nargs)
    p.add_argument("--beta", type=float, nargs=nargs)
    p.add_argument("--eps", type=float, nargs=nargs)
    p.add_argument("--tau", type=float, nargs=nargs)
    p.add_argument("--solver", choices=SOLVERS, nargs=nargs)
    p.add_argument("--sigma", type=float)
    p.add_argument("--ua", type=float)
    p.add_argument("--ub", type=float)
    p.add_argument("--ya", type=float)
    p.add_argument("--yb", type=float)
    p.add_argument("--obs-box", dest="obs_box", metavar="a1,b1,a2,b2")
    p.add_argument("--T", type=float)
    p.add_argument("--mass", choices=("consistent", "lumped"))
    p.add_argument("--time-rule", dest="time_rule", choices=("rectangle", "trapezoid"))
    p.add_argument("--lintol", type=float)
    p.add_argument("--mu0", type=float)
    p.add_argument("--maxit", type=int)
    p.add_argument("--out", type=Path, required=True)


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="ipmcontrol",
                                 description="Interior point solver for sparse PDE-constrained control")
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="solve one problem")
    run.add_argument("--config", type=Path, help="key = value file; flags override it")
    run.add_argument("--solution", action="store_true", help="also dump nodal u and y")
    _problem_flags(run)

    sw = sub.add_parser("sweep", help="run a table layout")
    sw.add_argument("--table", choices=sorted(TABLES), required=True)
    _problem_flags(sw, multi=True)

    ver = sub.add_parser("verify", help="dense spectral checks at small mesh sizes")
    ver.add_argument("--out", type=Path, required=True)
    ver.add_argument("--samples", type=int, default=20)
    return ap


def _given(ns, keys):
    return {k: getattr(ns, k) for k in keys if getattr(ns, k, None) is not None}


def cmd_run(ns) -> int:
    settings = load_config(ns.config) if ns.config else {}
    settings.pop("out", None)
    settings.update(_given(ns, SETTING_FIELDS))
    s = resolve(settings)
    ns.out.mkdir(parents=True, exist_ok=True)
    qp, sol, stats = solve_cell(s)
    extra = {"tau": s["tau"]} if s["pde"] == "heat" else None
    stats.write_csv(ns.out / "stats.csv", extra)
    row = summarize(s, qp, sol, stats)
    write_rows(ns.out / "summary.csv", SUMMARY_FIELDS, [row])
    write_rows(ns.out / "timing.csv", ("k", "cpu"), [{"k": r.k, "cpu": r.cpu} for r in stats.records])
    if ns.solution:
        write_solution(ns.out / "solution.csv", qp, sol)
    print(f"nli={row['nli']} av-li={row['av_li']:.2f} sparsity={row['sparsity']:.1f}% "
          f"|u|_1={row['l1_norm']:.3g} converged={row['converged']}")
    return 0 if stats.converged else 1


def cmd_sweep(ns) -> int:
    over = _given(ns, SETTING_FIELDS)
    cells = [resolve(c) for c in expand(TABLES[ns.table], over)]
    ns.out.mkdir(parents=True, exist_ok=True)
    results = run_cells(cells)
    rows = [r for r, _ in results]
    write_rows(ns.out / "sweep.csv", SUMMARY_FIELDS, rows)
    write_rows(ns.out / "sweep_timing.csv", ("cell", "av_cpu"),
               [{"cell": i, "av_cpu": c} for i, (_, c) in enumerate(results)])
    for r in rows:
        print(f"{_label(r)} nli={r['nli']} av-li={r['av_li']:.2f}")
    return 0 if all(r["converged"] for r in rows) else 1


def cmd_verify(ns) -> int:
    from . import spectral
    ns.out.mkdir(parents=True, exist_ok=True)
    reports = [
        spectral.verify_ideal_preconditioners(),
        spectral.verify_control_block_interval(samples=ns.samples),
        spectral.verify_schur_bound(samples=ns.samples),
    ]
    for pde in ("poisson", "convdiff"):
        qp, thetas = spectral.final_iteration_theta(ControlProblem(pde=pde, ell=4))
        ev = spectral.eigenvalue_scatter(qp, thetas[-1], tag=f"{pde}-final",
                                         path=ns.out / f"eig_{pde}.csv")
        frac = spectral.cluster_fraction(ev)
        reports.append(spectral.Report(f"clustering {pde}", frac >= 0.8, {"fraction": frac}))
    for r in reports:
        print(r.line())
    return 0 if all(r.passed for r in reports) else 1


def main(argv=None) -> int:
    ns = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(ns.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}[ns.command](ns)
    except (UsageError, ValueError) as exc:
        print(f"ipmcontrol: error: {exc}", file=sys.stderr)
        return MAX_ERROR


if __name__ == "__main__":
    sys.exit(main())
