"""Command line front end: ``table``, ``verify`` and ``solve``.

Every flag can also be set through an environment variable named
``BIHARMONIC_MG_<FLAG>`` (upper case, dashes replaced by underscores), e.g.
``BIHARMONIC_MG_SMOOTHER=mass``.  Explicit flags win over the environment.
"""

import argparse
import csv
import io
import json
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from .geometry import GeometryError, evaluate_point, get_geometry
from .multigrid import CYCLES, SMOOTHERS, CycleSpec, build_hierarchy, free_dimension, solve
from .splines import collocation_matrix
from . import verification

ENV_PREFIX = "BIHARMONIC_MG_"

TABLES = {
    "para2d": dict(d=2, geometry="unit-square", p=(3, 10), levels=(5, 8)),
    "para3d": dict(d=3, geometry="unit-cube", p=(3, 7), levels=(3, 6)),
    "geo2d": dict(d=2, geometry="quarter-annulus-2d", p=(3, 10), levels=(5, 8)),
    "geo3d": dict(d=3, geometry="quarter-annulus-3d", p=(3, 7), levels=(3, 6)),
}

CSV_COLUMNS = ["d", "geometry", "smoother", "p", "level", "dofs", "nnz", "iterations",
               "seconds", "converged"]


@dataclass
class ExperimentConfig:
    d: int = 2
    geometry: str = "unit-square"
    smoother: str = "gs"
    p_range: tuple = (3, 10)
    level_range: tuple = (5, 8)
    sigma: str = "paper"
    tau: float = 1.0
    tau_mass: float = None
    tol: float = 1e-8
    seed: int = 0
    cycle: str = "v"
    nu: int = 1
    max_memory_gb: float = 2.5
    level_min: int = None

    def __post_init__(self):
        if self.p_range[0] > self.p_range[1] or self.level_range[0] > self.level_range[1]:
            raise ValueError("empty p or level range")
        if self.smoother not in SMOOTHERS:
            raise ValueError(f"unknown smoother {self.smoother!r}")
        if self.sigma not in ("paper", "theory"):
            try:
                if float(self.sigma) <= 0:
                    raise ValueError
            except ValueError:
                raise ValueError(f"sigma must be 'paper', 'theory' or a positive number, "
                                 f"got {self.sigma!r}") from None


@dataclass
class CellResult:
    p: int
    level: int
    dofs: int = 0
    nnz: int = 0
    iterations: int = None
    seconds: float = None
    converged: bool = False
    status: str = "ok"


@dataclass
class TableResult:
    config: ExperimentConfig
    cells: dict = field(default_factory=dict)  # (level, p) -> CellResult

    def rows(self):
        c = self.config
        for (lv, p), cell in sorted(self.cells.items(), key=lambda kv: (kv[0][1], kv[0][0])):
            yield {"d": c.d, "geometry": c.geometry, "smoother": c.smoother, "p": p,
                   "level": lv, "dofs": cell.dofs, "nnz": cell.nnz,
                   "iterations": cell.iterations if cell.status == "ok" else cell.status,
                   "seconds": "" if cell.seconds is None else f"{cell.seconds:.3f}",
                   "converged": cell.converged}

    def to_csv(self):
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
        w.writeheader()
        for row in self.rows():
            w.writerow(row)
        return buf.getvalue()

    def to_markdown(self):
        c = self.config
        ps = list(range(c.p_range[0], c.p_range[1] + 1))
        lines = [f"{c.smoother} smoother, {c.geometry} (d={c.d})", "",
                 "| l \\ p | " + " | ".join(str(p) for p in ps) + " |",
                 "|---" * (len(ps) + 1) + "|"]
        for lv in range(c.level_range[0], c.level_range[1] + 1):
            vals = []
            for p in ps:
                cell = self.cells.get((lv, p))
                if cell is None:
                    vals.append("")
                elif cell.status != "ok":
                    vals.append(cell.status)
                else:
                    vals.append(str(cell.iterations) + ("" if cell.converged else "*"))
            lines.append(f"| {lv} | " + " | ".join(vals) + " |")
        return "\n".join(lines) + "\n"


def memory_estimate(d, p, level):
    """Rough bytes needed for the stiffness matrix (CSR plus assembly buffer)."""
    n = free_dimension(p, level)
    return (n ** d) * (2 * p + 1) ** d * 8 * 3


def run_cell(config, p, level, geometry=None):
    cell = CellResult(p=p, level=level, dofs=free_dimension(p, level) ** config.d)
    if memory_estimate(config.d, p, level) > config.max_memory_gb * 2 ** 30:
        cell.status = "skipped: memory"
        return cell
    G = get_geometry(config.geometry) if geometry is None else geometry
    t0 = time.perf_counter()
    H = build_hierarchy(p, level, level_min=config.level_min, d=config.d, geometry=G,
                        smoother_kind=config.smoother, sigma=config.sigma, tau=config.tau,
                        tau_mass=config.tau_mass)
    spec = CycleSpec(cycle=config.cycle, nu_pre=config.nu, nu_post=config.nu)
    res = solve(H, spec, seed=config.seed, rel_tol=config.tol)
    cell.seconds = time.perf_counter() - t0
    cell.nnz = int(H.fine_B.nnz)
    cell.iterations = res.iterations
    cell.converged = res.converged
    return cell


def run_table(config, progress=None):
    """Every (p, level) cell is run; failures are recorded and the sweep continues."""
    result = TableResult(config)
    G = get_geometry(config.geometry)
    if G.dim != config.d:
        raise GeometryError(f"geometry {config.geometry!r} has dimension {G.dim}, not {config.d}")
    for p in range(config.p_range[0], config.p_range[1] + 1):
        for lv in range(config.level_range[0], config.level_range[1] + 1):
            try:
                cell = run_cell(config, p, lv, G)
            except (ValueError, np.linalg.LinAlgError, MemoryError) as err:
                cell = CellResult(p=p, level=lv, status=f"failed: {err}")
            result.cells[(lv, p)] = cell
            if progress:
                progress(cell)
    return result


# -- solution export -------------------------------------------------------

def sample_solution(H, coeffs, npts):
    """Values of the discrete solution on a uniform ``npts^d`` parameter grid."""
    top = H.levels[-1]
    space = top.spaces[0]
    x = np.linspace(0.0, 1.0, npts)
    A = collocation_matrix(space.knots, space.p, x, 0)[:, top.frees[0]]
    U = coeffs.reshape(top.dims)
    for k in range(H.d):
        U = np.moveaxis(np.tensordot(A, U, axes=([1], [k])), 0, k)
    grid = np.stack(np.meshgrid(*([x] * H.d), indexing="ij"), axis=-1).reshape(-1, H.d)
    return grid, U.ravel()


def solve_once(config, p, level, npts=21):
    G = get_geometry(config.geometry)
    H = build_hierarchy(p, level, level_min=config.level_min, d=config.d, geometry=G,
                        smoother_kind=config.smoother, sigma=config.sigma, tau=config.tau,
                        tau_mass=config.tau_mass)
    spec = CycleSpec(cycle=config.cycle, nu_pre=config.nu, nu_post=config.nu)
    res = solve(H, spec, seed=config.seed, rel_tol=config.tol)
    grid, vals = sample_solution(H, res.u, npts)
    return H, res, grid, evaluate_point(G, grid), vals


# -- argument handling -----------------------------------------------------

def _env_default(name, default, cast=str):
    key = ENV_PREFIX + name.upper().replace("-", "_")
    if key in os.environ:
        try:
            return cast(os.environ[key])
        except ValueError:
            raise SystemExit(f"error: cannot parse {key}={os.environ[key]!r}") from None
    return default


def _common(sp):
    sp.add_argument("--d", type=int, default=_env_default("d", None, int))
    sp.add_argument("--geometry", default=_env_default("geometry", None),
                    help="built-in domain name or path to a geometry JSON file")
    sp.add_argument("--smoother", choices=SMOOTHERS, default=_env_default("smoother", "gs"))
    sp.add_argument("--sigma", default=_env_default("sigma", "paper"),
                    help="paper, theory, or c meaning sigma = c h^-4")
    sp.add_argument("--tau", type=float, default=_env_default("tau", 1.0, float))
    sp.add_argument("--tau-mass", type=float, default=_env_default("tau-mass", None, float))
    sp.add_argument("--tol", type=float, default=_env_default("tol", 1e-8, float))
    sp.add_argument("--seed", type=int, default=_env_default("seed", 0, int))
    sp.add_argument("--cycle", choices=CYCLES, default=_env_default("cycle", "v"))
    sp.add_argument("--nu", type=int, default=_env_default("nu", 1, int))
    sp.add_argument("--coarsest", type=int, default=_env_default("coarsest", None, int),
                    help="coarsest multigrid level (default: smallest admissible)")
    sp.add_argument("--out", default=_env_default("out", None))


def build_parser():
    ap = argparse.ArgumentParser(prog="biharmonic-mg",
                                 description="Multigrid solvers for the clamped biharmonic "
                                             "problem on tensor-product spline spaces.")
    sub = ap.add_subparsers(dest="command", required=True)

    t = sub.add_parser("table", help="iteration counts over a (p, level) grid")
    _common(t)
    t.add_argument("--table", choices=sorted(TABLES), default=_env_default("table", None))
    t.add_argument("--p-min", type=int, default=_env_default("p-min", None, int))
    t.add_argument("--p-max", type=int, default=_env_default("p-max", None, int))
    t.add_argument("--level-min", type=int, default=_env_default("level-min", None, int))
    t.add_argument("--level-max", type=int, default=_env_default("level-max", None, int))
    t.add_argument("--format", choices=("csv", "md"), default=_env_default("format", "csv"))
    t.add_argument("--max-memory-gb", type=float,
                   default=_env_default("max-memory-gb", 2.5, float))

    v = sub.add_parser("verify", help="run the inequality checks, write JSON lines")
    v.add_argument("--out", default=_env_default("out", None))
    v.add_argument("--seed", type=int, default=_env_default("seed", 0, int))
    v.add_argument("--inverse-bound", type=float, default=_env_default("inverse-bound", 144.0, float),
                   help="bound for lambda_max(M0^-1 B0) h^4")

    s = sub.add_parser("solve", help="one solve; export coefficients and sampled values")
    _common(s)
    s.add_argument("--p", type=int, default=_env_default("p", 3, int))
    s.add_argument("--level", type=int, default=_env_default("level", 5, int))
    s.add_argument("--samples", type=int, default=_env_default("samples", 21, int))
    return ap


def _config(args, p_range, level_range, max_memory_gb=2.5):
    d = args.d if args.d is not None else 2
    geometry = args.geometry or ("unit-square" if d == 2 else "unit-cube")
    return ExperimentConfig(d=d, geometry=geometry, smoother=args.smoother, p_range=p_range,
                            level_range=level_range, sigma=args.sigma, tau=args.tau,
                            tau_mass=args.tau_mass, tol=args.tol, seed=args.seed,
                            cycle=args.cycle, nu=args.nu, max_memory_gb=max_memory_gb,
                            level_min=args.coarsest)


def _emit(text, out):
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def cmd_table(args):
    preset = TABLES.get(args.table, {})
    if preset:
        args.d = args.d if args.d is not None else preset["d"]
        args.geometry = args.geometry or preset["geometry"]
    pr = preset.get("p", (3, 10))
    lr = preset.get("levels", (5, 8))
    p_range = (args.p_min if args.p_min is not None else pr[0],
               args.p_max if args.p_max is not None else pr[1])
    l_range = (args.level_min if args.level_min is not None else lr[0],
               args.level_max if args.level_max is not None else lr[1])
    config = _config(args, p_range, l_range, args.max_memory_gb)

    def progress(cell):
        msg = cell.status if cell.status != "ok" else f"{cell.iterations} iterations"
        print(f"p={cell.p} level={cell.level}: {msg}", file=sys.stderr, flush=True)

    result = run_table(config, progress)
    _emit(result.to_csv() if args.format == "csv" else result.to_markdown(), args.out)
    return 0


def cmd_verify(args):
    reports = verification.run_suite(inverse_bound=args.inverse_bound, seed=args.seed)
    text = "".join(r.to_json() + "\n" for r in reports)
    _emit(text, args.out)
    failed = [r for r in reports if not r.passed]
    for r in failed:
        print(f"FAIL {r.statement} {json.dumps(r.params)} measured={r.measured:.6g} "
              f"bound={r.bound:.6g}", file=sys.stderr)
    print(f"{len(reports) - len(failed)}/{len(reports)} checks passed", file=sys.stderr)
    return 1 if failed else 0


def cmd_solve(args):
    config = _config(args, (args.p, args.p), (args.level, args.level))
    H, res, grid, phys, vals = solve_once(config, args.p, args.level, args.samples)
    print(f"dofs={H.fine_B.shape[0]} iterations={res.iterations} converged={res.converged}",
          file=sys.stderr)
    d = config.d
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["kind", "index"] + [f"xhat{k}" for k in range(d)] + [f"x{k}" for k in range(d)]
               + ["value"])
    for i, c in enumerate(res.u):
        w.writerow(["coefficient", i] + [""] * (2 * d) + [repr(float(c))])
    for i in range(grid.shape[0]):
        w.writerow(["sample", i] + [repr(float(t)) for t in grid[i]]
                   + [repr(float(t)) for t in phys[i]] + [repr(float(vals[i]))])
    _emit(buf.getvalue(), args.out)
    return 0 if res.converged else 2


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return {"table": cmd_table, "verify": cmd_verify, "solve": cmd_solve}[args.command](args)
    except (ValueError, GeometryError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
