"""sweepvor command line: desk-scale reproduction of the structural and
convergence experiments (mesh generation, scheduler benchmarks, operator
structure dumps, convergence and source-iteration studies, SVG rendering).

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 internal verification failure.
"""

import argparse
import hashlib
import json
import math
import os
import sys
import time

import numpy as np

from . import bte, dg, meshio, render, scheduler
from .errors import (
    DimensionMismatch,
    EmptySubset,
    InsufficientData,
    IoError,
    NodeSetMismatch,
    NotCoercive,
    NotInflow,
    QuadratureFailure,
    SamplingExhausted,
    SchemaError,
    ScheduleInvalid,
    SingularBlock,
    SingularMatrix,
    SizeMismatch,
    SweepvorError,
    UnknownId,
    UnsupportedOrder,
    VerificationFailure,
)
from .geometry import DomainPolygon, build_voronoi, lloyd_relax, random_seeds, unit_square

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_VERIFICATION = 4

_CONFIG_ERRORS = (
    ValueError,
    KeyError,
    SchemaError,
    IoError,
    UnsupportedOrder,
    UnknownId,
    EmptySubset,
    DimensionMismatch,
)
_VERIFICATION_ERRORS = (VerificationFailure,)
_NUMERICAL_ERRORS = (
    NotCoercive,
    NotInflow,
    SingularBlock,
    SingularMatrix,
    QuadratureFailure,
    SamplingExhausted,
    ScheduleInvalid,
    SizeMismatch,
    NodeSetMismatch,
    InsufficientData,
    SweepvorError,
)


def _int_list(text):
    return [int(v) for v in str(text).split(",") if v != ""]


def _float_list(text):
    return [float(v) for v in str(text).split(",") if v != ""]


def _resolve(args, defaults):
    """Merge defaults < config file < explicit flags into one config dict."""
    cfg = dict(defaults)
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise IoError(f"cannot read config file: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ValueError(f"config file is not valid JSON: {exc}") from exc
        if not isinstance(file_cfg, dict):
            raise ValueError("config file must hold a JSON object")
        for key, value in file_cfg.items():
            if key not in defaults:
                raise ValueError(f"unknown config key: {key}")
            cfg[key] = value
    for key in defaults:
        flag = getattr(args, key, None)
        if flag is not None:
            cfg[key] = flag
    return cfg


def _config_hash(cfg):
    # identifies the run parameters; output locations do not change the data
    cfg = {k: v for k, v in cfg.items() if k not in ("out", "save_flux")}
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, default=str).encode()
    ).hexdigest()[:12]


def _write_csv(path, header, rows, config_hash):
    lines = [f"# config={config_hash}", header]
    lines.extend(rows)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def _domain_from(cfg):
    dom = cfg.get("domain")
    if dom is None:
        return unit_square()
    if isinstance(dom, str):
        with open(dom) as fh:
            dom = json.load(fh)
    return DomainPolygon(dom)


def _make_mesh(n, domain, rng_seed, lloyd_iters, preset="random"):
    if preset == "grid":
        k = math.isqrt(n)
        if k * k != n:
            raise ValueError(f"grid preset needs a square cell count, got {n}")
        lo = domain.vertices.min(axis=0)
        hi = domain.vertices.max(axis=0)
        ax = (np.arange(k) + 0.5) / k
        gx, gy = np.meshgrid(lo[0] + (hi[0] - lo[0]) * ax, lo[1] + (hi[1] - lo[1]) * ax)
        seeds = np.column_stack([gx.ravel(), gy.ravel()])
        if not np.all(domain.contains(seeds)):
            raise ValueError("grid preset seeds fall outside the domain")
    elif preset == "random":
        seeds = random_seeds(n, domain, rng_seed)
    else:
        raise ValueError(f"unknown preset: {preset}")
    if lloyd_iters:
        seeds = lloyd_relax(seeds, domain, lloyd_iters)
    return build_voronoi(seeds, domain)


# -- solution files --------------------------------------------------------


def dumps_solution(mesh, field):
    coeffs = ",".join(f"{v:.17g}" for v in field.coefficients)
    return (
        f'{{"mesh":{meshio.dumps_mesh(mesh).strip()},'
        f'"p":{field.space.p},"coefficients":[{coeffs}]}}\n'
    )


def write_solution(path, mesh, field):
    try:
        with open(path, "w") as fh:
            fh.write(dumps_solution(mesh, field))
    except OSError as exc:
        raise IoError(str(exc)) from exc


# -- subcommands -----------------------------------------------------------


def cmd_mesh_gen(args):
    defaults = {
        "n": 100,
        "preset": "random",
        "seed": 0,
        "lloyd": 0,
        "domain": None,
        "out": "mesh.json",
        "self_check": False,
    }
    cfg = _resolve(args, defaults)
    domain = _domain_from(cfg)
    mesh = _make_mesh(int(cfg["n"]), domain, int(cfg["seed"]), int(cfg["lloyd"]), cfg["preset"])
    meshio.write_mesh(mesh, cfg["out"])
    if cfg["self_check"]:
        reread = meshio.read_mesh(cfg["out"])
        reread.validate(n_probe=min(1000, 4 * mesh.n_cells))
        if meshio.dumps_mesh(reread) != meshio.dumps_mesh(mesh):
            raise VerificationFailure("mesh round trip is not byte stable")
    print(f"wrote {cfg['out']} ({mesh.n_cells} cells, {mesh.n_facets} facets)")
    return EXIT_OK


def schedule_timings(n_values, n_q, rng_seed=0, reps=3):
    """Best-of-reps wall time for scheduling n_q ordinate directions at each N.

    Timing covers the complete topological sort only (projection + argsort);
    centre generation is excluded.
    """
    dirs = bte.ordinates(n_q).directions
    rng = np.random.default_rng(rng_seed)
    out = []
    for n in n_values:
        centers = rng.random((int(n), 2))
        scheduler.schedule_centers(centers, dirs[0])  # warm pages and workspaces
        best = math.inf
        for _ in range(reps):
            t0 = time.perf_counter()
            for om in dirs:
                scheduler.schedule_centers(centers, om)
            best = min(best, time.perf_counter() - t0)
        out.append((int(n), best))
    return out


def cmd_schedule_bench(args):
    defaults = {
        "n": [1000, 4000, 16000, 64000],
        "nq": [2, 8],
        "seed": 0,
        "reps": 3,
        "out": ".",
        "verify": False,
        "domain": None,
    }
    cfg = _resolve(args, defaults)
    h = _config_hash(cfg)
    n_values = cfg["n"] if isinstance(cfg["n"], list) else [cfg["n"]]
    nq_values = cfg["nq"] if isinstance(cfg["nq"], list) else [cfg["nq"]]
    os.makedirs(cfg["out"], exist_ok=True)
    if cfg["verify"] and max(n_values) > 20000:
        raise ValueError("--verify builds meshes; keep N <= 20000")
    for nq in nq_values:
        rows = [
            f"{n},{t:.17g}"
            for n, t in schedule_timings(n_values, int(nq), int(cfg["seed"]), int(cfg["reps"]))
        ]
        path = os.path.join(cfg["out"], f"bench_nq{int(nq)}.csv")
        _write_csv(path, "n_elements,time", rows, h)
        print(f"wrote {path}")
    if cfg["verify"]:
        domain = _domain_from(cfg)
        for n in n_values:
            mesh = _make_mesh(int(n), domain, int(cfg["seed"]), 0)
            for nq in nq_values:
                for om in bte.ordinates(int(nq)).directions:
                    dual = scheduler.directed_dual(mesh, om)
                    if isinstance(scheduler.kahn_toposort(dual), scheduler.CycleWitness):
                        raise VerificationFailure(f"cycle witness at N={n}")
                    sched = scheduler.schedule_centers(mesh.centers(), om)
                    rep = scheduler.verify_schedule(sched, dual)
                    if rep.backward_edges:
                        raise VerificationFailure(
                            f"{rep.backward_edges} backward edges at N={n}"
                        )
        print("verification passed: all schedules acyclic and topologically valid")
    return EXIT_OK


def cmd_spy(args):
    defaults = {
        "n": 100,
        "nq": 4,
        "p": 0,
        "seed": 0,
        "lloyd": 2,
        "sigma_t": 1.0,
        "sigma_s": 0.7,
        "out": ".",
        "swept": False,
        "domain": None,
    }
    cfg = _resolve(args, defaults)
    h = _config_hash(cfg)
    n = int(cfg["n"])
    nq = int(cfg["nq"])
    p = int(cfg["p"])
    if n > 1000 or nq > 16:
        raise ValueError("spy dumps are meant for N <= 1000 and N_Q <= 16")
    os.makedirs(cfg["out"], exist_ok=True)
    domain = _domain_from(cfg)
    mesh = _make_mesh(n, domain, int(cfg["seed"]), int(cfg["lloyd"]))
    space = dg.DGSpace(mesh, p)
    ords = bte.ordinates(nq)
    kernel = bte.ScatteringKernel.isotropic(float(cfg["sigma_s"]))
    kmat = kernel.matrix(ords)
    mass = dg.mass_matrix(mesh, space)

    schedules = [scheduler.schedule_centers(mesh.centers(), om) for om in ords.directions]
    failures = 0
    for k, om in enumerate(ords.directions):
        op = dg.assemble_direction(mesh, space, om, float(cfg["sigma_t"]))
        r, c, v = op.to_coo()
        dg.write_coo(os.path.join(cfg["out"], f"A_k{k}.coo"), r, c, v, h)
        dg.write_coo(os.path.join(cfg["out"], f"A_k{k}.pattern"), r, c, None, h)
        if cfg["swept"]:
            swept, rep = dg.apply_permutation(op, schedules[k])
            r, c, v = swept.to_coo()
            dg.write_coo(os.path.join(cfg["out"], f"PA_k{k}.coo"), r, c, v, h)
            dg.write_coo(os.path.join(cfg["out"], f"PA_k{k}.pattern"), r, c, None, h)
            above = rep.entries_above_diagonal if p == 0 else rep.blocks_above_diagonal
            what = "entries" if p == 0 else "blocks"
            print(f"PA_k{k}: {above} above-diagonal {what}")
            if rep.blocks_above_diagonal or (p == 0 and rep.entries_above_diagonal):
                failures += 1
    b = space.n_local
    base = np.arange(b)
    for k in range(nq):
        for l in range(nq):
            rows = []
            cols = []
            vals = []
            for cell in range(mesh.n_cells):
                rr = cell if not cfg["swept"] else int(schedules[k].inverse[cell])
                cc = cell if not cfg["swept"] else int(schedules[l].inverse[cell])
                rows.append(np.repeat(base + rr * b, b))
                cols.append(np.tile(base + cc * b, b))
                vals.append((kmat[k, l] * mass[cell]).ravel())
            rows = np.concatenate(rows)
            cols = np.concatenate(cols)
            vals = np.concatenate(vals)
            keep = vals != 0.0
            rows, cols, vals = rows[keep], cols[keep], vals[keep]
            srt = np.lexsort((cols, rows))
            rows, cols, vals = rows[srt], cols[srt], vals[srt]
            tag = "PS" if cfg["swept"] else "S"
            dg.write_coo(os.path.join(cfg["out"], f"{tag}_k{k}_l{l}.coo"), rows, cols, vals, h)
            dg.write_coo(
                os.path.join(cfg["out"], f"{tag}_k{k}_l{l}.pattern"), rows, cols, None, h
            )
    if failures:
        raise VerificationFailure(f"{failures} permuted operators not lower triangular")
    print(f"wrote COO dumps for {nq} ordinates to {cfg['out']}")
    return EXIT_OK


def _mms_problem(ords, sigma_t, sigma_s):
    kernel = bte.ScatteringKernel.isotropic(sigma_s)

    def f(pts, k):
        return bte.mms_source(pts, k, ords, sigma_t, kernel)

    def g(pts, k):
        return bte.mms_inflow(pts, k, ords)

    return kernel, f, g


def cmd_converge(args):
    defaults = {
        "n": [25, 50, 100, 200],
        "nq": 16,
        "p": 0,
        "sigma_t": 1.0,
        "sigma_s": 0.7,
        "tol": 1e-10,
        "max_iter": 100,
        "seed": 0,
        "lloyd": 10,
        "out": ".",
        "parallel": False,
        "save_flux": None,
        "domain": None,
    }
    cfg = _resolve(args, defaults)
    h = _config_hash(cfg)
    os.makedirs(cfg["out"], exist_ok=True)
    n_values = cfg["n"] if isinstance(cfg["n"], list) else [cfg["n"]]
    nq = int(cfg["nq"])
    p = int(cfg["p"])
    domain = _domain_from(cfg)
    ords = bte.ordinates(nq)
    kernel, f, g = _mms_problem(ords, float(cfg["sigma_t"]), float(cfg["sigma_s"]))
    rows = []
    hs = []
    errs = []
    last = None
    for idx, n in enumerate(n_values):
        mesh = _make_mesh(int(n), domain, int(cfg["seed"]) + idx, int(cfg["lloyd"]))
        space = dg.DGSpace(mesh, p)
        flux, log = bte.source_iteration(
            mesh,
            space,
            ords,
            float(cfg["sigma_t"]),
            kernel,
            f,
            g,
            tol=float(cfg["tol"]),
            max_iter=int(cfg["max_iter"]),
            parallel=bool(cfg["parallel"]),
        )
        if not log.converged:
            print(f"warning: N={n} hit max_iter={cfg['max_iter']} (update {log.update_norms[-1]:.3e})")
        per_ord = [
            dg.energy_norm_error(
                flux.field(k),
                lambda pts, o=ords.directions[k]: bte.mms_exact(pts, o),
                ords.directions[k],
                log.sigma0,
            )
            for k in range(nq)
        ]
        boch = float(np.dot(ords.weights, per_ord))
        hval = mesh.max_diameter
        hs.append(hval)
        errs.append(boch)
        rows.append(
            f"{hval:.17g}," + ",".join(f"{e:.17g}" for e in per_ord) + f",{boch:.17g}"
        )
        print(f"N={n}: h={hval:.4f} bochner={boch:.6e} iters={log.iterations}")
        last = (mesh, flux)
    header = "h," + ",".join(f"e_{k}" for k in range(nq)) + ",bochner"
    path = os.path.join(cfg["out"], f"converge_p{p}.csv")
    _write_csv(path, header, rows, h)
    print(f"wrote {path}")
    if len(hs) >= 2:
        slope = float(np.polyfit(np.log(hs), np.log(errs), 1)[0])
        print(f"fitted EOC: {slope:.3f}")
    if cfg["save_flux"]:
        mesh, flux = last
        write_solution(cfg["save_flux"], mesh, bte.scalar_flux(flux, ords))
        print(f"wrote {cfg['save_flux']}")
    return EXIT_OK


def cmd_iterate(args):
    defaults = {
        "n": [25, 50, 100, 200],
        "nq": 64,
        "p": 0,
        "c": [0.7],
        "sigma_t": 1.0,
        "tol": 1e-10,
        "max_iter": 60,
        "seed": 0,
        "lloyd": 10,
        "out": ".",
        "parallel": False,
        "save_flux": None,
        "domain": None,
    }
    cfg = _resolve(args, defaults)
    h = _config_hash(cfg)
    os.makedirs(cfg["out"], exist_ok=True)
    n_values = cfg["n"] if isinstance(cfg["n"], list) else [cfg["n"]]
    c_values = cfg["c"] if isinstance(cfg["c"], list) else [cfg["c"]]
    nq = int(cfg["nq"])
    p = int(cfg["p"])
    sigma_t = float(cfg["sigma_t"])
    domain = _domain_from(cfg)
    ords = bte.ordinates(nq)
    factor_rows = []
    last = None
    for cval in c_values:
        if not cval < 1.0:
            raise ValueError(f"scattering ratio must be < 1, got {cval}")
        kernel, f, g = _mms_problem(ords, sigma_t, float(cval) * sigma_t)
        columns = {}
        for idx, n in enumerate(n_values):
            mesh = _make_mesh(int(n), domain, int(cfg["seed"]) + idx, int(cfg["lloyd"]))
            space = dg.DGSpace(mesh, p)
            common = dict(tol=float(cfg["tol"]), parallel=bool(cfg["parallel"]))
            ref, _ = bte.source_iteration(
                mesh, space, ords, sigma_t, kernel, f, g,
                max_iter=2 * int(cfg["max_iter"]), **common,
            )
            flux, log = bte.source_iteration(
                mesh, space, ords, sigma_t, kernel, f, g,
                max_iter=int(cfg["max_iter"]), reference=ref, **common,
            )
            columns[int(n)] = log.bochner_errors
            try:
                factor = bte.reduction_factor(log)
                factor_rows.append(f"{int(n)},{cval:.17g},{factor:.17g}")
                print(f"c={cval} N={n}: reduction factor {factor:.4f} "
                      f"({log.iterations} iterations)")
            except InsufficientData:
                factor_rows.append(f"{int(n)},{cval:.17g},nan")
                print(f"c={cval} N={n}: converged too fast to fit a factor")
            last = (mesh, flux)
        depth = max(len(v) for v in columns.values())
        rows = []
        for it in range(depth):
            vals = [
                f"{columns[int(n)][it]:.17g}" if it < len(columns[int(n)]) else ""
                for n in n_values
            ]
            rows.append(f"{it + 1}," + ",".join(vals))
        header = "iterates," + ",".join(str(int(n)) for n in n_values)
        tag = f"{cval}".replace(".", "_")
        path = os.path.join(cfg["out"], f"iterate_c{tag}.csv")
        _write_csv(path, header, rows, h)
        print(f"wrote {path}")
    _write_csv(
        os.path.join(cfg["out"], "iterate_factors.csv"),
        "n_elements,c,factor",
        factor_rows,
        h,
    )
    if cfg["save_flux"] and last is not None:
        mesh, flux = last
        write_solution(cfg["save_flux"], mesh, bte.scalar_flux(flux, ords))
        print(f"wrote {cfg['save_flux']}")
    return EXIT_OK


def cmd_render(args):
    defaults = {"input": None, "out": "out.svg"}
    cfg = _resolve(args, defaults)
    if not cfg["input"]:
        raise ValueError("render needs an input mesh or solution file")
    try:
        with open(cfg["input"]) as fh:
            text = fh.read()
    except OSError as exc:
        raise IoError(str(exc)) from exc
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"invalid JSON: {exc}") from exc
    if isinstance(doc, dict) and "coefficients" in doc:
        mesh = meshio.loads_mesh(json.dumps(_need_obj(doc, "mesh")))
        p = _need_obj(doc, "p")
        coeffs = np.asarray(_need_obj(doc, "coefficients"), dtype=float)
        space = dg.DGSpace(mesh, int(p))
        if len(coeffs) != space.n_dofs:
            raise SchemaError("coefficients length does not match mesh and degree")
        # centroid value of the centred basis = the degree-0 coefficient
        values = coeffs.reshape(mesh.n_cells, space.n_local)[:, 0]
        svg = render.render_svg(mesh, values)
    else:
        mesh = meshio.loads_mesh(text)
        svg = render.render_svg(mesh)
    render.save_svg(cfg["out"], svg)
    print(f"wrote {cfg['out']}")
    return EXIT_OK


def _need_obj(doc, key):
    if key not in doc:
        raise SchemaError(f"missing key {key}")
    return doc[key]


# -- parser ----------------------------------------------------------------


def build_parser():
    parser = argparse.ArgumentParser(prog="sweepvor", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(sp):
        sp.add_argument("--config", help="JSON config file; flags override its values")
        sp.add_argument("--seed", type=int, help="RNG seed")
        sp.add_argument("--out", help="output file or directory")

    sp = sub.add_parser("mesh-gen", help="generate a Voronoi mesh file")
    add_common(sp)
    sp.add_argument("--n", type=int, help="number of cells")
    sp.add_argument("--preset", choices=["random", "grid"])
    sp.add_argument("--lloyd", type=int, help="Lloyd relaxation iterations")
    sp.add_argument("--domain", help="JSON file with domain polygon vertices")
    sp.add_argument("--self-check", dest="self_check", action="store_const", const=True)
    sp.set_defaults(func=cmd_mesh_gen)

    sp = sub.add_parser("schedule-bench", help="time Algorithm-style scheduling")
    add_common(sp)
    sp.add_argument("--n", type=_int_list, help="comma-separated element counts")
    sp.add_argument("--nq", type=_int_list, help="comma-separated ordinate counts")
    sp.add_argument("--reps", type=int, help="timing repetitions (best-of)")
    sp.add_argument("--verify", action="store_const", const=True,
                    help="cross-check every schedule with Kahn's algorithm")
    sp.set_defaults(func=cmd_schedule_bench)

    sp = sub.add_parser("spy", help="dump operator structure as COO text")
    add_common(sp)
    sp.add_argument("--n", type=int)
    sp.add_argument("--nq", type=int)
    sp.add_argument("--p", type=int)
    sp.add_argument("--lloyd", type=int)
    sp.add_argument("--sigma-t", dest="sigma_t", type=float)
    sp.add_argument("--sigma-s", dest="sigma_s", type=float)
    sp.add_argument("--swept", action="store_const", const=True,
                    help="also dump permuted operators (indices post-permutation)")
    sp.set_defaults(func=cmd_spy)

    sp = sub.add_parser("converge", help="spatial convergence study (manufactured solution)")
    add_common(sp)
    sp.add_argument("--n", type=_int_list)
    sp.add_argument("--nq", type=int)
    sp.add_argument("--p", type=int)
    sp.add_argument("--sigma-t", dest="sigma_t", type=float)
    sp.add_argument("--sigma-s", dest="sigma_s", type=float)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--lloyd", type=int)
    sp.add_argument("--parallel", action="store_const", const=True)
    sp.add_argument("--save-flux", dest="save_flux", help="write final scalar flux JSON")
    sp.add_argument("--domain", help="JSON file with domain polygon vertices")
    sp.set_defaults(func=cmd_converge)

    sp = sub.add_parser("iterate", help="source-iteration convergence per scattering ratio")
    add_common(sp)
    sp.add_argument("--n", type=_int_list)
    sp.add_argument("--nq", type=int)
    sp.add_argument("--p", type=int)
    sp.add_argument("--c", type=_float_list, help="comma-separated scattering ratios")
    sp.add_argument("--sigma-t", dest="sigma_t", type=float)
    sp.add_argument("--tol", type=float)
    sp.add_argument("--max-iter", dest="max_iter", type=int)
    sp.add_argument("--lloyd", type=int)
    sp.add_argument("--parallel", action="store_const", const=True)
    sp.add_argument("--save-flux", dest="save_flux")
    sp.add_argument("--domain", help="JSON file with domain polygon vertices")
    sp.set_defaults(func=cmd_iterate)

    sp = sub.add_parser("render", help="render a mesh or solution file to SVG")
    sp.add_argument("input", nargs="?", help="mesh or solution JSON file")
    sp.add_argument("--config")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_render)

    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if exc.code is not None else EXIT_CONFIG
    try:
        return args.func(args)
    except _VERIFICATION_ERRORS as exc:
        print(f"verification failure: {exc}", file=sys.stderr)
        return EXIT_VERIFICATION
    except _CONFIG_ERRORS as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except _NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
