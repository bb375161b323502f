"""Command-line entry point: generate, diagnose, cover, brinkman, experiment.

Every command writes fixed file names under --out plus a manifest.json
recording the resolved configuration, seed and library versions. A JSON
config file may supply any flag (dashes become underscores); explicit
flags win. Exit codes: 0 success, 2 malformed input, 3 non-convergence.
"""

import argparse
import json
import os
import platform
import sys
from pathlib import Path

import numpy as np
import scipy

from . import __version__, brinkman, cloud as cloud_mod, homogenize
from .testfield import TestField

EXIT_INPUT = 2
EXIT_CONVERGENCE = 3


class InputError(ValueError):
    pass


def _floats(n):
    def parse(text):
        vals = [float(t) for t in str(text).replace(",", " ").split()]
        if len(vals) != n:
            raise argparse.ArgumentTypeError(f"expected {n} numbers, got {text!r}")
        return vals
    return parse


def _int_list(text):
    return [int(t) for t in str(text).replace(",", " ").split()]


def _box(args):
    if args.box_lo is None and args.box_hi is None:
        return None
    return cloud_mod.Box(args.box_lo or (0, 0, 0), args.box_hi or (1, 1, 1))


def _velocity(args):
    return None if args.velocity is None else tuple(args.velocity)


def _write(out, name, text):
    path = out / name
    path.write_text(text)
    return str(path)


def _thresholds(args):
    return cloud_mod.VerdictThresholds(args.a4_lower_min, args.a4_upper_max, args.a5_max)


def cmd_generate(args, out):
    kind = args.kind
    vel = _velocity(args)
    if kind == "periodic":
        c = cloud_mod.gen_periodic(args.n_per_axis, vel, _box(args))
    elif kind == "random":
        c = cloud_mod.gen_random_dilute(args.n, args.d_target, _box(args), args.seed, vel)
    elif kind == "pairs":
        c = cloud_mod.gen_counterexample_pairs(args.n, args.h, args.seed, args.axis, vel)
    elif kind == "clusters":
        c = cloud_mod.gen_counterexample_clusters(args.n, args.p, args.dm, _box(args), vel)
    else:
        raise InputError(f"unknown kind {kind!r}")
    files = [_write(out, "cloud.json", cloud_mod.to_json(c))]
    violations = cloud_mod.validate_a0(c)
    report = {"n": c.n, "a0_violations": [v.__dict__ for v in violations]}
    files.append(_write(out, "report.json", json.dumps(report, indent=1)))
    return files


def _load_cloud(args):
    if not args.cloud:
        raise InputError("--cloud is required")
    try:
        return cloud_mod.load(args.cloud)
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(str(exc)) from exc


def cmd_diagnose(args, out):
    c = _load_cloud(args)
    rep = cloud_mod.dilution_report(c, lam=args.lam, thresholds=_thresholds(args),
                                    grid_points_per_axis=args.grid_points)
    return [_write(out, "report.json", json.dumps(rep.as_dict(), indent=1))]


def cmd_cover(args, out):
    c = _load_cloud(args)
    lam = args.lam if args.lam is not None else cloud_mod.lambda_select(c)
    cov = homogenize.covering_for(c, lam, args.d + 1)
    return [_write(out, "covering.json", cov.to_json())]


def _grid(c, args):
    shape = args.grid if args.grid is not None else homogenize.default_grid(c).shape
    return brinkman.MacGrid(c.box, tuple(shape))


def cmd_brinkman(args, out):
    c = _load_cloud(args)
    grid = _grid(c, args)
    fields = brinkman.bin_empirical(c, grid, args.deposition)
    fld = brinkman.solve_brinkman(fields, grid, tol=args.tol, max_iter=args.max_iter)
    brinkman.dump_csv(fld, out / "brinkman.csv")
    args._extra_manifest = {"grid": json.loads(brinkman.grid_metadata(fld))}
    return [str(out / "brinkman.csv")]


def _test_field(args):
    if args.w_center is None:
        return homogenize.default_test_field()
    return TestField(args.w_center, args.w_scale, args.w_amplitude)


def cmd_experiment(args, out):
    w = _test_field(args)
    quad = homogenize.QuadConfig()
    reports = []
    if args.cloud:
        c = _load_cloud(args)
        grid = _grid(c, args)
        reports.append(homogenize.weak_form_experiment(c, w, args.delta, grid, quad, tol=args.tol))
    else:
        ladder = []
        for n in args.n_ladder:
            k = int(round(n ** (1.0 / 3.0)))
            if k**3 != n:
                raise InputError(f"periodic ladder needs perfect cubes, got {n}")
            ladder.append(k)
        vel = _velocity(args) or (1.0, 0.0, 0.0)
        reports = homogenize.periodic_ladder(ladder, w, args.delta, vel, tol=args.tol)
    homogenize.write_report_csv(reports, out / "experiment.csv")
    return [str(out / "experiment.csv")]


COMMANDS = {
    "generate": cmd_generate,
    "diagnose": cmd_diagnose,
    "cover": cmd_cover,
    "brinkman": cmd_brinkman,
    "experiment": cmd_experiment,
}


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with flag values")
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--seed", type=int, default=0, help="64-bit run seed")
    common.add_argument("--threads", type=int, default=1, help="recorded; computations are single-threaded")
    common.add_argument("--cloud", help="input cloud.json")
    common.add_argument("--velocity", type=_floats(3), help="constant particle velocity")
    common.add_argument("--box-lo", type=_floats(3))
    common.add_argument("--box-hi", type=_floats(3))
    common.add_argument("--lam", type=float, help="window size (default: selection rule)")
    common.add_argument("--tol", type=float, default=1e-8)
    common.add_argument("--max-iter", type=int, default=500)
    common.add_argument("--grid", type=_floats(3), help="Brinkman cells per axis")
    common.add_argument("--deposition", choices=("ngp", "cic"), default="ngp")

    parser = argparse.ArgumentParser(prog="stokes-homog", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", parents=[common], help="write a particle cloud")
    g.add_argument("--kind", choices=("periodic", "random", "pairs", "clusters"), default="periodic")
    g.add_argument("--n-per-axis", type=int, default=4)
    g.add_argument("--n", type=int, default=64)
    g.add_argument("--d-target", type=float, default=0.05)
    g.add_argument("--h", type=float, default=0.5)
    g.add_argument("--axis", type=_floats(3))
    g.add_argument("--p", type=int, default=8)
    g.add_argument("--dm", type=float, default=0.002)

    d = sub.add_parser("diagnose", parents=[common], help="dilution report for a cloud")
    defaults = cloud_mod.VerdictThresholds()
    d.add_argument("--a4-lower-min", type=float, default=defaults.a4_lower_min)
    d.add_argument("--a4-upper-max", type=float, default=defaults.a4_upper_max)
    d.add_argument("--a5-max", type=float, default=defaults.a5_max)
    d.add_argument("--grid-points", type=int, default=0, help="extra uniform candidates per axis for M")

    c = sub.add_parser("cover", parents=[common], help="measure-adapted covering of a cloud")
    c.add_argument("--d", type=int, default=homogenize.DEFAULT_DELTA - 1)

    sub.add_parser("brinkman", parents=[common], help="solve the Brinkman system for a binned cloud")

    e = sub.add_parser("experiment", parents=[common], help="weak-form comparison over clouds")
    e.add_argument("--n-ladder", type=_int_list, default=[64, 216, 512, 1000])
    e.add_argument("--delta", type=int, default=homogenize.DEFAULT_DELTA)
    e.add_argument("--w-center", type=_floats(3))
    e.add_argument("--w-scale", type=float, default=0.25)
    e.add_argument("--w-amplitude", type=_floats(3), default=[0.0, 0.0, 1.0])
    return parser


def _parse(argv):
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.config:
        try:
            config = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise InputError(f"cannot read config: {exc}") from exc
        if not isinstance(config, dict):
            raise InputError("config must be a JSON object")
        flat = {k.replace("-", "_"): v for k, v in config.items() if not isinstance(v, dict)}
        flat.update({k.replace("-", "_"): v for k, v in config.get(args.command, {}).items()})
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        unknown = set(flat) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        sub.set_defaults(**flat)
        args = parser.parse_args(argv)
    return args


def _manifest(args, argv, files):
    config = {k: v for k, v in vars(args).items() if not k.startswith("_")}
    doc = {
        "command": args.command,
        "argv": list(argv),
        "config": config,
        "seed": args.seed,
        "threads": args.threads,
        "versions": {"stokes_homog": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "python": platform.python_version()},
        "outputs": files,
    }
    doc.update(getattr(args, "_extra_manifest", {}))
    return json.dumps(doc, indent=1, default=str)


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    try:
        args = _parse(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else 0
    except InputError as exc:
        print(json.dumps({"error": "input", "message": str(exc)}), file=sys.stderr)
        return EXIT_INPUT
    out = Path(args.out)
    try:
        os.makedirs(out, exist_ok=True)
        files = COMMANDS[args.command](args, out)
    except brinkman.BrinkmanConvergenceError as exc:
        print(json.dumps({"error": "convergence", "message": str(exc), "history": exc.history[-10:]}),
              file=sys.stderr)
        return EXIT_CONVERGENCE
    except (InputError, ValueError, cloud_mod.PackingInfeasible) as exc:
        print(json.dumps({"error": "input", "message": str(exc)}), file=sys.stderr)
        return EXIT_INPUT
    files.append(_write(out, "manifest.json", _manifest(args, argv, files)))
    return 0


if __name__ == "__main__":
    sys.exit(main())
