"""Command-line front end.

Verbs: ``simulate``, ``sweep-k``, ``optimise``, ``verify`` and ``mesh``.
Exit status is 0 on success, 2 for configuration errors, 3 for solver
failures and 4 when a verification threshold is missed.
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from pathlib import Path

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_VERIFY = 0, 2, 3, 4

log = logging.getLogger("tidalopt")


def _set_threads(n: int) -> None:
    # must run before numpy/scipy load their BLAS
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ[var] = str(n)


def _outdir(args, cfg=None) -> Path:
    out = args.out or (cfg.data.get("output") if cfg is not None else None) or "out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _need_config(args):
    from .errors import ConfigError
    from .scenarios import load_config
    if not args.config:
        raise ConfigError("this command needs --config PATH (or the name of a shipped scenario)")
    return load_config(args.config)


def _solve(problem, friction):
    if problem.config.kappa == 1:
        return problem.solve_unsteady(friction)
    return problem.solve_steady(friction, keep_factor=False)


# ----------------------------------------------------------------- commands
def cmd_simulate(args) -> int:
    from .io import write_json, write_rows, write_vtk
    from .power import power_series, power_steady, power_unsteady
    from .turbine import FrictionField

    cfg = _need_config(args)
    out = _outdir(args, cfg)
    mesh, spaces, problem, farm = cfg.build()
    friction = FrictionField.build(farm, spaces)
    sol = _solve(problem, friction)
    if cfg.unsteady:
        J = power_unsteady(sol, friction, spaces, problem.config)
        series = power_series(sol, friction, spaces, problem.config)
        write_rows(out / "power.csv", ["t", "power_W"], zip(sol.times[1:], series))
        final = sol.states[-1]
    else:
        J = power_steady(sol, friction, spaces, problem.config)
        write_rows(out / "power.csv", ["t", "power_W"], [(0.0, J.value)])
        final = sol
    write_rows(out / "turbine_power.csv", ["index", "power_W"], enumerate(J.breakdown))
    write_vtk(out / "fields_final.vtk", spaces, final.z, farm, cfg.name)
    write_json(out / "summary.json", {"scenario": cfg.name, "power_W": J.value, "num_turbines": farm.num_turbines,
                                      "num_triangles": mesh.num_triangles, "num_dofs": spaces.ndof})
    print(f"{cfg.name}: power {J.value:.6e} W")
    return EXIT_OK


def cmd_sweep_k(args) -> int:
    import numpy as np

    from .errors import ConfigError, TidalOptError
    from .io import write_rows
    from .power import power_steady
    from .turbine import FrictionField, TurbineFarm

    cfg = _need_config(args)
    out = _outdir(args, cfg)
    if cfg.unsteady:
        raise ConfigError("sweep-k needs a steady scenario")
    _, spaces, problem, farm = cfg.build()
    if farm.num_turbines != 1:
        raise ConfigError(f"sweep-k needs a single-turbine scenario, got {farm.num_turbines} turbines")
    values = sorted(args.k if args.k else cfg.sweep_values)
    rows = []
    for K in values:
        f = TurbineFarm(farm.positions, K, farm.radius, farm.mode, farm.site)
        ct = FrictionField.build(f, spaces)
        try:
            J = power_steady(problem.solve_steady(ct, keep_factor=False), ct, spaces, problem.config).value
            status = "ok"
        except TidalOptError as exc:
            J, status = float("nan"), f"failed: {exc}"
            log.warning("K=%g failed: %s", K, exc)
        rows.append((float(K), J, status))
        print(f"K={K:g}  power={J:.6e} W")
    write_rows(out / "sweep.csv", ["K", "power_W", "status"], rows)
    good = [(k, j) for k, j, s in rows if s == "ok"]
    if good:
        k_best, j_best = max(good, key=lambda r: r[1])
        print(f"peak at K={k_best:g}: {j_best:.6e} W")
    return EXIT_OK if all(np.isfinite(r[1]) for r in rows) else EXIT_SOLVER


def cmd_optimise(args) -> int:
    import csv

    from .errors import LineSearchFailed
    from .io import write_json, write_layout, write_vtk
    from .optimise import LOG_COLUMNS, ReducedFunctional, sqp_optimise

    cfg = _need_config(args)
    out = _outdir(args, cfg)
    _, spaces, problem, farm = cfg.build()
    cons = cfg.constraints(farm)
    tol = args.tol if args.tol is not None else cfg.tol
    max_iter = args.max_iter if args.max_iter is not None else cfg.max_iter
    rf = ReducedFunctional(problem, farm, cons)
    write_layout(out / "layout_initial.csv", farm)

    fh = open(out / "iterations.csv", "w", newline="")
    writer = csv.DictWriter(fh, fieldnames=LOG_COLUMNS, extrasaction="ignore")
    writer.writeheader()

    def on_iter(record):
        writer.writerow(record)
        fh.flush()

    m0 = farm.to_params()
    try:
        res = sqp_optimise(rf, cons, m0, tol=tol, max_iter=max_iter, callback=on_iter)
    except LineSearchFailed as exc:
        fh.close()
        partial = exc.result
        if partial is not None:
            write_layout(out / "layout_final.csv", farm.with_params(partial.x))
        raise
    fh.close()
    write_layout(out / "layout_final.csv", res.farm)
    initial = rf.forward(m0)
    write_vtk(out / "fields_initial.vtk", spaces, _last_state(initial[1]).z, farm, cfg.name)
    final = rf.forward(res.m)
    write_vtk(out / "fields_final.vtk", spaces, _last_state(final[1]).z, res.farm, cfg.name)
    summary = {
        "scenario": cfg.name,
        "initial_power_W": res.initial_power,
        "final_power_W": res.final_power,
        "improvement": res.improvement,
        "iterations": res.sqp.iterations if res.sqp else len(res.history) - 1,
        "n_feval": res.n_feval,
        "n_geval": res.n_geval,
        "termination": res.reason,
        "max_constraint_violation": res.max_violation,
        "scale": res.scale,
    }
    write_json(out / "summary.json", summary)
    print(f"{cfg.name}: {res.initial_power:.6e} W -> {res.final_power:.6e} W "
          f"({100 * summary['improvement']:+.1f}%), {summary['iterations']} iterations, {res.reason}")
    return EXIT_OK


def _last_state(sol):
    return sol.states[-1] if hasattr(sol, "states") else sol


def cmd_verify(args) -> int:
    import numpy as np

    from .io import write_rows
    from .verify import MMSCase, run_mms_spatial, run_mms_temporal, taylor_test

    out = _outdir(args)
    case = MMSCase()
    if args.kind == "mms-spatial":
        study = run_mms_spatial(case, args.levels or [40.0, 20.0, 10.0])
        study.write_csv(out / "mms_spatial.csv")
        ok = study.order >= 1.9
        print(f"spatial order {study.order:.3f} (pairwise {', '.join(f'{o:.3f}' for o in study.pairwise)}), "
              f"dt sensitivity {study.extra.get('dt_sensitivity', float('nan')):.2%}")
    elif args.kind == "mms-temporal":
        study = run_mms_temporal(case, [case.T / n for n in args.levels] if args.levels else None)
        study.write_csv(out / "mms_temporal.csv")
        ok = 0.9 <= study.order <= 1.1
        print(f"temporal order {study.order:.3f} (pairwise {', '.join(f'{o:.3f}' for o in study.pairwise)})")
    else:
        from .optimise import ReducedFunctional
        cfg = _need_config(args)
        _, _, problem, farm = cfg.build()
        rf = ReducedFunctional(problem, farm)
        m = farm.to_params()
        rng = np.random.default_rng(args.seed)
        rows, worst = [], np.inf
        for d in range(args.directions):
            dm = rng.normal(size=m.size)
            o0, o1, r0, r1 = taylor_test(rf, m, dm, h0=args.h0)
            worst = min(worst, min(o1))
            rows += [(d, k, r0[k], r1[k], o0[k - 1] if k else float("nan"), o1[k - 1] if k else float("nan"))
                     for k in range(len(r0))]
            print(f"direction {d}: orders without gradient {np.round(o0, 3)}, with gradient {np.round(o1, 3)}")
        write_rows(out / "taylor.csv", ["direction", "level", "remainder0", "remainder1", "order0", "order1"], rows)
        ok = worst >= 1.9
    print("PASS" if ok else "FAIL")
    return EXIT_OK if ok else EXIT_VERIFY


def cmd_mesh(args) -> int:
    from .io import write_json
    from .mesh import mesh_stats, read_tfmesh, write_tfmesh

    out = _outdir(args)
    if args.import_path:
        mesh = read_tfmesh(args.import_path)
    else:
        cfg = _need_config(args)
        mesh = cfg.build_mesh()
        write_tfmesh(mesh, out / f"{cfg.name}.tfmesh")
    stats = {k: float(v) if not isinstance(v, int) else v for k, v in mesh_stats(mesh).items()}
    write_json(out / "mesh_stats.json", stats)
    print(", ".join(f"{k}={v:g}" for k, v in stats.items()))
    return EXIT_OK


# -------------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="scenario JSON file or the name of a shipped scenario")
    common.add_argument("--out", help="output directory (default: the config's 'output' or ./out)")
    common.add_argument("--threads", type=int, default=1, help="BLAS threads (default 1, reproducible)")
    common.add_argument("--tol", type=float, help="optimiser tolerance")
    common.add_argument("--max-iter", type=int, help="optimiser iteration limit")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="tidalopt", description="Tidal turbine array layout optimisation.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="forward solve and power report")
    sk = sub.add_parser("sweep-k", parents=[common], help="power against turbine friction coefficient")
    sk.add_argument("--k", type=float, nargs="+", help="K values (default: the config's sweep list)")
    sub.add_parser("optimise", parents=[common], help="optimise the turbine layout")
    v = sub.add_parser("verify", parents=[common], help="convergence and gradient checks")
    v.add_argument("kind", choices=["mms-spatial", "mms-temporal", "taylor"])
    v.add_argument("--levels", type=float, nargs="+",
                   help="cell sizes (mms-spatial) or divisions of T (mms-temporal)")
    v.add_argument("--directions", type=int, default=5)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--h0", type=float, default=0.005)
    mp = sub.add_parser("mesh", parents=[common], help="write a scenario mesh as tfmesh, or inspect one")
    mp.add_argument("--import", dest="import_path", help="tfmesh file to read and summarise")
    return p


COMMANDS = {"simulate": cmd_simulate, "sweep-k": cmd_sweep_k, "optimise": cmd_optimise,
            "verify": cmd_verify, "mesh": cmd_mesh}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    _set_threads(args.threads)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    from .errors import ConfigError, MeshError, TidalOptError

    try:
        return COMMANDS[args.command](args)
    except (ConfigError, MeshError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TidalOptError as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER


if __name__ == "__main__":
    sys.exit(main())
