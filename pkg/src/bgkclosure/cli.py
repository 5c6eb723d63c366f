"""Command-line entry point for data generation, solves, reference runs and
comparison.

Every command writes a ``run_manifest.json`` next to its outputs with the
full configuration echo, seeds, timings and any solver failure records; a
run is reproducible bit-for-bit from its manifest and the same binaries.
All randomness flows from the single ``--seed`` value: initial condition
``i`` uses ``numpy.random.default_rng([seed, i])``.

Exit codes: 0 success, 1 solver failure(s) recorded, 2 usage error.
``BGK_THREADS`` caps the worker pool for batch generation.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time as _time
from pathlib import Path

import numpy as np

from . import __version__
from . import datagen
from . import kinetic_dvm as dvm
from . import pathcons_solvers as ps
from .moment_core import Grid1D

__all__ = ["main", "dispatch", "relative_l2"]


def _worker_count() -> int:
    env = os.environ.get("BGK_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def _write_manifest(out_dir: Path, payload: dict) -> None:
    payload = dict(payload)
    payload["artifact_version"] = __version__
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump(payload, fh, indent=2, default=str)


def _moment_header(order: int, closing: bool = False) -> list:
    cols = ["x", "rho", "u", "theta"] + [f"f{k}" for k in range(3, order + 1)]
    if closing:
        cols.append(f"f{order + 1}")
    return cols


def _write_moment_csv(path: Path, x: np.ndarray, table: np.ndarray, header: list) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i in range(len(x)):
            writer.writerow([repr(float(x[i]))] + [repr(float(v)) for v in table[i]])


def _read_moment_csv(path: Path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    return header, rows


def relative_l2(a: np.ndarray, b: np.ndarray) -> float:
    """``||a - b||_2 / ||b||_2`` over cells."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = float(np.linalg.norm(b))
    return float(np.linalg.norm(a - b)) / denom if denom else float(np.linalg.norm(a - b))


def _initial_condition(args, grid: Grid1D, vgrid: dvm.VelocityGrid):
    rng = np.random.default_rng([args.seed, 0])
    if args.ic == "wave":
        params, field0 = datagen.sample_wave_ic(rng, grid, vgrid)
    else:
        params, field0 = datagen.sample_mix_ic(rng, grid, vgrid)
    return params, field0


def _save_times(t_final: float, n_saves: int) -> np.ndarray:
    return np.linspace(0.0, t_final, max(n_saves, 1) + 1)[1:]


# ---------------------------------------------------------------------------
# Subcommands
# ---------------------------------------------------------------------------


def _cmd_solve(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = Grid1D(args.domain[0], args.domain[1], args.nx, boundary=args.boundary)
    vgrid = dvm.VelocityGrid(args.vmax, args.nv)
    t0 = _time.perf_counter()
    params, field0 = _initial_condition(args, grid, vgrid)
    rho, u, theta, fs = field0.moments(args.moments)
    W0 = np.column_stack((rho, u, theta, fs))
    closure = ps.make_closure(args.closure, args.weights)
    config = ps.SolverConfig(scheme=args.scheme, cfl=args.cfl, collision=args.collision, tau=args.kn)
    result = ps.run(grid, W0, args.moments, closure, config, args.t_final, save_times=_save_times(args.t_final, args.saves))

    files = []
    header = _moment_header(args.moments)
    for t, st in zip(result.times, result.states):
        name = f"moments_{len(files):04d}.csv"
        _write_moment_csv(out_dir / name, grid.centers, st.primitive(), header)
        files.append({"file": name, "time": t})
    _write_manifest(
        out_dir,
        {
            "command": "solve",
            "argv": vars(args) | {"func": args.subcommand},
            "seed": args.seed,
            "ic_params": list(params.flat()),
            "n_steps": len(result.dt_history),
            "dt_history": result.dt_history,
            "wave_speed_history": result.speed_history,
            "roe_fallbacks": result.roe_fallbacks,
            "failures": result.failures,
            "outputs": files,
            "wall_seconds": _time.perf_counter() - t0,
        },
    )
    return 1 if result.failures else 0


def _cmd_dvm(args) -> int:
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    grid = Grid1D(args.domain[0], args.domain[1], args.nx, boundary=args.boundary)
    vgrid = dvm.VelocityGrid(args.vmax, args.nv)
    t0 = _time.perf_counter()
    params, field0 = _initial_condition(args, grid, vgrid)
    result = dvm.run_dvm(
        field0,
        args.kn,
        args.t_final,
        sample_times=_save_times(args.t_final, args.saves),
        max_order=args.moments + 1,
        cfl=args.cfl,
        keep_fields=bool(args.dump),
    )
    files = []
    header = _moment_header(args.moments, closing=True)
    for t, mom in zip(result.times, result.moments):
        name = f"moments_{len(files):04d}.csv"
        _write_moment_csv(out_dir / name, grid.centers, mom, header)
        files.append({"file": name, "time": t})
    if args.dump:
        dvm.write_distribution_dump(str(out_dir / "distribution.bin"), result)
    _write_manifest(
        out_dir,
        {
            "command": "dvm",
            "argv": vars(args) | {"func": args.subcommand},
            "seed": args.seed,
            "ic_params": list(params.flat()),
            "outputs": files,
            "wall_seconds": _time.perf_counter() - t0,
        },
    )
    return 0


def _cmd_gen_data(args) -> int:
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    grid = Grid1D(args.domain[0], args.domain[1], args.nx)
    vgrid = dvm.VelocityGrid(args.vmax, args.nv)
    t0 = _time.perf_counter()
    ds = datagen.generate_dataset(
        args.seed,
        args.n_ic,
        grid,
        vgrid,
        args.moments,
        generator=args.generator,
        kind=args.kind,
        t_final=args.t_final,
        n_saves=args.saves,
        tau=args.kn,
        workers=_worker_count(),
    )
    with open(out_path, "wb") as fh:
        datagen.write_dataset(ds, fh)
    _write_manifest(
        out_path.parent,
        {
            "command": "gen-data",
            "argv": vars(args) | {"func": args.subcommand},
            "seed": args.seed,
            "n_ic": args.n_ic,
            "taus": [rec.tau for rec in ds.records],
            "output": str(out_path),
            "wall_seconds": _time.perf_counter() - t0,
        },
    )
    return 0


def _latest_csv(path: Path) -> Path:
    if path.is_dir():
        manifest = path / "run_manifest.json"
        if manifest.exists():
            outputs = json.loads(manifest.read_text()).get("outputs", [])
            if outputs:
                return path / outputs[-1]["file"]
        files = sorted(path.glob("moments_*.csv"))
        if not files:
            raise FileNotFoundError(f"no moment CSVs under {path}")
        return files[-1]
    return path


def _cmd_compare(args) -> int:
    ref_header, ref = _read_moment_csv(_latest_csv(Path(args.ref)))
    test_header, test = _read_moment_csv(_latest_csv(Path(args.test)))
    fields = [f.strip() for f in args.fields.split(",") if f.strip()]
    rows = []
    for name in fields:
        if name not in ref_header or name not in test_header:
            print(f"error: field {name!r} missing from inputs", file=sys.stderr)
            return 2
        if ref.shape[0] != test.shape[0]:
            print("error: cell counts differ between inputs", file=sys.stderr)
            return 2
        err = relative_l2(test[:, test_header.index(name)], ref[:, ref_header.index(name)])
        rows.append((name, err))
    for name, err in rows:
        print(f"{name}: {err:.6e}")
    if args.out:
        out = Path(args.out)
        out.parent.mkdir(parents=True, exist_ok=True)
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["field", "relative_l2"])
            writer.writerows(rows)
    return 0


def _cmd_eigen_audit(args) -> int:
    run_dir = Path(args.trajectory)
    manifest = json.loads((run_dir / "run_manifest.json").read_text())
    closure = ps.make_closure(args.closure, args.weights)
    out_rows = []
    for entry in manifest["outputs"]:
        header, table = _read_moment_csv(run_dir / entry["file"])
        rho, u, theta = table[:, 1], table[:, 2], table[:, 3]
        fs = table[:, 4 : 4 + (len(header) - 4)]
        A = closure.matrices(rho, u, theta, fs)
        lam = np.sort(np.linalg.eigvals(A).real, axis=-1)
        gaps = np.diff(lam, axis=-1).min(axis=-1)
        out_rows.append((entry["time"], float(gaps.min()), int(np.argmin(gaps))))
    out = Path(args.out) if args.out else run_dir / "eigen_audit.csv"
    with open(out, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["time", "min_gap", "argmin_cell"])
        writer.writerows(out_rows)
    for t, g, c in out_rows:
        print(f"t={t:.6f} min_gap={g:.6e} cell={c}")
    return 0


# ---------------------------------------------------------------------------
# Argument parsing
# ---------------------------------------------------------------------------


def _add_common_grid(p: argparse.ArgumentParser, default_domain):
    p.add_argument("--nx", type=int, default=128)
    p.add_argument("--domain", type=float, nargs=2, default=default_domain, metavar=("XA", "XB"))
    p.add_argument("--boundary", choices=["periodic", "outflow"], default="periodic")
    p.add_argument("--nv", type=int, default=150)
    p.add_argument("--vmax", type=float, default=10.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ic", choices=["wave", "mix"], default="wave")
    p.add_argument("--kn", type=float, default=1.0, help="relaxation time tau")
    p.add_argument("--t-final", type=float, default=0.1)
    p.add_argument("--saves", type=int, default=1)
    p.add_argument("--cfl", type=float, default=0.5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bgkclosure", description=__doc__)
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p = sub.add_parser("solve", help="run a moment-closure solve")
    _add_common_grid(p, default_domain=[-0.5, 0.5])
    p.add_argument("--closure", choices=["grad", "hme", "ml", "ml_nonhyperbolic"], default="hme")
    p.add_argument("--weights", default=None, help="MLCW file for ml closures")
    p.add_argument("--moments", type=int, default=4, help="moment order M")
    p.add_argument("--scheme", choices=list(ps.SCHEMES), default="high_order_roe")
    p.add_argument("--collision", choices=["explicit", "split_exact"], default="explicit")
    p.add_argument("--out", default="solve_out")
    p.set_defaults(func=_cmd_solve)

    p = sub.add_parser("dvm", help="run the kinetic reference solver")
    _add_common_grid(p, default_domain=[0.0, 1.0])
    p.add_argument("--moments", type=int, default=4, help="extraction order M (f_{M+1} included)")
    p.add_argument("--dump", action="store_true", help="also dump raw distributions")
    p.add_argument("--out", default="dvm_out")
    p.set_defaults(func=_cmd_dvm)

    p = sub.add_parser("gen-data", help="generate a trajectory dataset")
    _add_common_grid(p, default_domain=[0.0, 1.0])
    p.add_argument("--moments", type=int, default=4)
    p.add_argument("--generator", choices=["hme", "dvm"], default="hme")
    p.add_argument("--kind", choices=["wave", "mix"], default="wave")
    p.add_argument("--n-ic", type=int, default=10)
    p.add_argument("--out", default="dataset.bgkd")
    p.set_defaults(func=_cmd_gen_data)
    # --kn None means: sample log-uniform per IC
    p.set_defaults(kn=None)

    p = sub.add_parser("compare", help="relative L2 error table between two runs")
    p.add_argument("--ref", required=True)
    p.add_argument("--test", required=True)
    p.add_argument("--fields", default="rho,u,theta")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("eigen-audit", help="minimum eigenvalue gap along a trajectory")
    p.add_argument("--closure", choices=["grad", "hme", "ml", "ml_nonhyperbolic"], required=True)
    p.add_argument("--weights", default=None)
    p.add_argument("--trajectory", required=True, help="directory of a solve/dvm run")
    p.add_argument("--out", default=None)
    p.set_defaults(func=_cmd_eigen_audit)
    return parser


def dispatch(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    return args.func(args)


def main() -> None:
    sys.exit(dispatch())


if __name__ == "__main__":
    main()
