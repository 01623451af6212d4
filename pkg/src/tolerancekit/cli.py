"""Command-line interface.

Exit codes: 0 Tolerance (or success for non-verdict commands), 1 NoTolerance,
2 Inconclusive, 64 usage, 65 bad input data, other values per error class
(see ``errors``).
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys as _sys
from pathlib import Path

from . import __version__
from .errors import PreconditionError, ToleranceKitError
from .estimates import bound_report, example2_condition_available, example2_constants, example2_tolerance_condition
from .geometry import CandidateClassifier, build_region_hatT, build_region_T, classify_excitable
from .integrate import IntegrationOptions, integrate, integrate_backward_to_axis
from .linear import analyze, tolerance_region, verdict_linear
from .render import Portrait, animation_frames, render_map, render_portrait
from .scan import THREADS_ENV, Cell, Grid, ToleranceMap, scan_grid, summarize
from .system import find_fixed_points, linear, load_system, node_report
from .tolerance import detect_tolerance, robustness_balls

log = logging.getLogger("tolerancekit")

EXIT_USAGE = 64
EXIT_DATA = 65
VERDICT_EXIT = {"Tolerance": 0, "NoTolerance": 1, "Inconclusive": 2}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(_sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- argument types


def _floats(text: str, n: int | None, what: str) -> list[float]:
    try:
        vals = [float(s) for s in str(text).split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"{what} must be comma-separated numbers, got {text!r}") from None
    if n is not None and len(vals) != n:
        raise argparse.ArgumentTypeError(f"{what} needs {n} numbers, got {len(vals)}")
    if not all(math.isfinite(v) for v in vals):
        raise argparse.ArgumentTypeError(f"{what} must be finite")
    return vals


def point(text: str) -> list[float]:
    return _floats(text, 2, "point")


def box(text: str) -> list[float]:
    vals = _floats(text, 4, "box (xmin,xmax,ymin,ymax)")
    if not (vals[1] > vals[0] and vals[3] > vals[2]):
        raise argparse.ArgumentTypeError("box needs xmin < xmax and ymin < ymax")
    return vals


def matrix(text: str) -> list[float]:
    return _floats(text, 4, "matrix (a11,a12,a21,a22)")


def number_list(text: str) -> list[float]:
    return _floats(text, None, "list")


def resolution(text: str) -> list[int]:
    parts = str(text).split(",")
    try:
        vals = [int(p) for p in parts]
    except ValueError:
        raise argparse.ArgumentTypeError(f"resolution must be N or NX,NY, got {text!r}") from None
    if len(vals) == 1:
        vals = vals * 2
    if len(vals) != 2 or min(vals) < 2:
        raise argparse.ArgumentTypeError("resolution must be at least 2 in each direction")
    return vals


# ---------------------------------------------------------------- parser


def _common(p: argparse.ArgumentParser, system: bool = True) -> None:
    if system:
        p.add_argument("--system", default="ex2", help="builtin name (ex1, ex2, ex3, ...) or a definition file")
    g = p.add_argument_group("integrator")
    g.add_argument("--horizon", type=float, default=100.0)
    g.add_argument("--rel-tol", type=float, default=1e-9)
    g.add_argument("--abs-tol", type=float, default=1e-12)
    g.add_argument("--eps-ball", type=float, default=1e-6)
    g.add_argument("--seed", type=int, default=0, help="seed for any sampling (echoed in the output)")
    p.add_argument("--json", action="store_true", help="machine-readable JSON on stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="tolerancekit", description="Tolerance analysis for planar systems.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--config", help="JSON config echoed by an earlier run; explicit flags win")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging on stderr")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    p = sub.add_parser("check", help="fixed-point inventory and the node assumption")
    _common(p)
    p.add_argument("--box", type=box, default=[-0.5, 5.0, -0.5, 5.0])
    p.add_argument("--grid", type=int, default=12)

    p = sub.add_parser("simulate", help="integrate one orbit")
    _common(p)
    p.add_argument("--start", type=point, required=True)
    p.add_argument("--backward", action="store_true", help="flow backward to the nearest axis")
    p.add_argument("--csv", help="write t,x,y samples here")
    p.add_argument("--events-json", help="write events and metadata here")

    p = sub.add_parser("verdict", help="decide tolerance for one pair")
    _common(p)
    p.add_argument("--ref", type=point, required=True)
    p.add_argument("--pert", type=point, required=True)
    p.add_argument("--robust", type=int, default=0, help="samples per robustness ball (0 = off)")
    p.add_argument("--radius", type=float, default=1e-3)
    p.add_argument("--predict", action="store_true", help="also report the geometric prediction")

    p = sub.add_parser("regions", help="excitability report and the guaranteed regions")
    _common(p)
    p.add_argument("--ref", type=point, required=True)
    p.add_argument("--grid", type=int, default=100, help="grid size for the f <= 0 check")
    p.add_argument("--y-top", type=float, default=None)
    p.add_argument("--per-step", type=int, default=8, help="boundary samples per integration step")
    p.add_argument("--svg", help="write a portrait with the regions here")

    p = sub.add_parser("scan", help="tolerance map over a grid of perturbed starts")
    _common(p)
    p.add_argument("--ref", type=point, required=True)
    p.add_argument("--box", type=box, required=True)
    p.add_argument("--res", type=resolution, default=[10, 10])
    p.add_argument("--no-predict", action="store_true")
    p.add_argument("--workers", type=int, default=None, help=f"process count (default: ${THREADS_ENV} or 1)")
    p.add_argument("--csv")
    p.add_argument("--map-json")
    p.add_argument("--svg")

    p = sub.add_parser("linear", help="closed-form analysis for x' = A x")
    _common(p, system=False)
    p.add_argument("--matrix", type=matrix, required=True)
    p.add_argument("--ref", type=point, required=True)
    p.add_argument("--pert", type=point, default=None)
    p.add_argument("--numeric", action="store_true", help="cross-check with the numerical detector")

    p = sub.add_parser("estimate", help="passage-time bounds")
    _common(p)
    p.add_argument("--ref", type=point, required=True)
    p.add_argument("--pert", type=point, required=True)
    p.add_argument("--x-f", type=float, default=None)

    p = sub.add_parser("render", help="SVG phase portrait or tolerance map")
    _common(p)
    p.add_argument("--box", type=box, default=[0.0, 8.0, 0.0, 25.0])
    p.add_argument("--levels", type=number_list, default=[], help="isocline levels C for f = C")
    p.add_argument("--ref", type=point, default=None)
    p.add_argument("--pert", type=point, action="append", default=[])
    p.add_argument("--regions", action="store_true", help="draw T and the strip above it (needs --ref)")
    p.add_argument("--map", help="render a map JSON written by 'scan --map-json'")
    p.add_argument("--frames", type=int, default=0, help="write N numbered SVGs instead of one")
    p.add_argument("--out", required=True)
    p.add_argument("--title", default=None)
    return parser


# ---------------------------------------------------------------- config echo

_NOT_ECHOED = {"config", "json", "verbose"}


def resolved_config(args: argparse.Namespace) -> dict:
    return {k: v for k, v in sorted(vars(args).items()) if k not in _NOT_ECHOED}


def _apply_config(parser: argparse.ArgumentParser, argv: list[str]) -> argparse.Namespace:
    pre, _ = _ConfigPeek().parse_known_args(argv)
    if not pre.config:
        return parser.parse_args(argv)
    try:
        cfg = json.loads(Path(pre.config).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise UsageError(f"cannot read config {pre.config}: {exc}") from exc
    if isinstance(cfg, dict) and isinstance(cfg.get("config"), dict):
        cfg = cfg["config"]  # the whole JSON output of an earlier run
    if not isinstance(cfg, dict) or "command" not in cfg:
        raise UsageError("config must be a JSON object with a 'command' key")
    cfg = dict(cfg)
    command = cfg.pop("command")
    subs = next(a for a in parser._actions if isinstance(a, argparse._SubParsersAction))
    if command not in subs.choices:
        raise UsageError(f"config names unknown command {command!r}")
    sp = subs.choices[command]
    known = {a.dest for a in sp._actions} - {"help"}
    unknown = sorted(set(cfg) - known)
    if unknown:
        raise UsageError(f"unknown config keys: {', '.join(unknown)}")
    sp.set_defaults(**cfg)
    # required options may come from the config instead of the command line
    for a in sp._actions:
        if a.dest in cfg:
            a.required = False
    if command not in argv:
        argv = _insert_command(argv, command)
    return parser.parse_args(argv)


class _ConfigPeek(argparse.ArgumentParser):
    def __init__(self):
        super().__init__(add_help=False)
        self.add_argument("--config")

    def error(self, message):
        raise UsageError(message)


def _insert_command(argv: list[str], command: str) -> list[str]:
    """Put the subcommand after the global options."""
    head, rest = [], list(argv)
    while rest:
        tok = rest[0]
        if tok in ("-v", "--verbose") or tok.startswith("--config="):
            head.append(rest.pop(0))
        elif tok == "--config":
            head += rest[:2]
            del rest[:2]
        else:
            break
    return head + [command] + rest


# ---------------------------------------------------------------- helpers


def _opts(args) -> IntegrationOptions:
    return IntegrationOptions(
        horizon=args.horizon, rel_tol=args.rel_tol, abs_tol=args.abs_tol, eps_ball=args.eps_ball
    )


def _emit(args, payload: dict, lines: list[str]) -> None:
    payload = {"config": resolved_config(args), **payload}
    if args.json:
        print(json.dumps(payload, indent=2, default=_json_default, allow_nan=False))
    else:
        for ln in lines:
            print(ln)


def _json_default(o):
    if isinstance(o, float):
        return None
    if isinstance(o, tuple):
        return list(o)
    return str(o)


def _clean(v):
    """Replace non-finite floats so the JSON stays strict."""
    if isinstance(v, float):
        if math.isnan(v):
            return None
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return v
    if isinstance(v, dict):
        return {k: _clean(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_clean(x) for x in v]
    return v


def _fmt(v) -> str:
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


# ---------------------------------------------------------------- commands


def cmd_check(args) -> int:
    sys = load_system(args.system)
    if sys.kind == "linear":
        fps = [node_report(sys)]
    else:
        fps = find_fixed_points(sys, tuple(args.box), args.grid)
    node = node_report(sys)
    payload = {"system": sys.name, "node": node.to_dict(), "fixed_points": [f.to_dict() for f in fps]}
    lines = [f"system {sys.name}"]
    lines += [f"  fixed point ({_fmt(f.location[0])}, {_fmt(f.location[1])}): {f.classification}" for f in fps]
    lines.append(f"node (0, 0): {node.classification}; A1 {'holds' if node.satisfies_A1 else 'fails'}")
    _emit(args, _clean(payload), lines)
    return 0 if node.satisfies_A1 else PreconditionError.exit_code


def cmd_simulate(args) -> int:
    sys = load_system(args.system)
    opts = _opts(args)
    if args.backward:
        traj = integrate_backward_to_axis(sys, tuple(args.start), opts)
    else:
        traj = integrate(sys, tuple(args.start), opts.with_(horizon=args.horizon))
    if args.csv:
        traj.write_csv(args.csv)
    if args.events_json:
        traj.write_events_json(args.events_json)
    d = traj.to_dict()
    payload = {"trajectory": _clean(d)}
    lines = [
        f"{traj.direction} orbit from ({_fmt(args.start[0])}, {_fmt(args.start[1])})",
        f"  ended at t = {_fmt(traj.t_end)}, point ({_fmt(traj.end[0])}, {_fmt(traj.end[1])}): {traj.termination}",
        f"  {len(traj)} samples",
    ]
    _emit(args, payload, lines)
    return 0


def cmd_verdict(args) -> int:
    sys = load_system(args.system)
    opts = _opts(args)
    r0, p0 = tuple(args.ref), tuple(args.pert)
    v = detect_tolerance(sys, r0, p0, opts)
    payload = {"verdict": v.to_dict()}
    lines = [f"{v.outcome}: {v.justification}"]
    if v.is_tolerance:
        lines.append(f"  window t1 = {_fmt(v.t1)}, deepest at tau = {_fmt(v.tau)}, t2 = {_fmt(v.t2)}, margin = {_fmt(v.margin)}")
    if args.predict:
        pred = CandidateClassifier(sys, r0, opts).classify(p0)
        payload["prediction"] = _clean(pred.to_dict())
        lines.append(f"  prediction: {pred}")
    if args.robust > 0 and v.is_tolerance:
        rb = robustness_balls(sys, r0, p0, v, n_samples=args.robust, radius=args.radius, seed=args.seed, opts=opts)
        payload["robustness"] = rb.to_dict()
        lines.append(f"  robustness: radius {_fmt(rb.radius)}, fraction kept {_fmt(rb.fraction)}")
    _emit(args, _clean(payload), lines)
    return VERDICT_EXIT[v.outcome]


def cmd_regions(args) -> int:
    sys = load_system(args.system)
    opts = _opts(args)
    rep = classify_excitable(sys, tuple(args.ref), opts)
    payload = {"excitability": _clean(rep.to_dict()), "regions": []}
    lines = [f"reference ({_fmt(args.ref[0])}, {_fmt(args.ref[1])}): n = {rep.n}, M = {_fmt(rep.M)}, t_r = {_fmt(rep.t_r)}"]
    if rep.reason:
        lines.append(f"  {rep.reason}")
    regions = []
    if rep.excitable:
        T = build_region_T(rep, per_step=args.per_step)
        hatT = build_region_hatT(sys, rep, opts, grid=args.grid, y_top=args.y_top, T=T)
        regions = [T, hatT]
        payload["regions"] = [_clean(T.to_dict()), _clean(hatT.to_dict())]
        lines.append(f"  T: bounded by the orbit on [0, t_r] and x = {_fmt(args.ref[0])}")
        lines.append(
            f"  T-hat: x in ({_fmt(hatT.x_lo)}, {_fmt(hatT.x_hi)}), y > {_fmt(hatT.y_low)}; "
            f"f <= 0 on {hatT.grid_checked} grid points: {hatT.f_nonpositive}"
        )
    if args.svg:
        traj = rep.trajectory
        xs, ys = (traj.x, traj.y) if traj is not None else ([], [])
        x1 = max(float(max(xs, default=args.ref[0])), rep.M) * 1.2 + 0.5
        y1 = float(max(ys, default=args.ref[1])) * 2.2 + 1.0
        p = Portrait(
            (0.0, x1, 0.0, y1), sys, [0.0], [("reference", xs, ys)], regions, [("r0", tuple(args.ref))]
        )
        Path(args.svg).write_text(render_portrait(p))
    _emit(args, payload, lines)
    return 0


def cmd_scan(args) -> int:
    sys = load_system(args.system)
    grid = Grid(*args.box, *args.res)
    tmap = scan_grid(sys, tuple(args.ref), grid, _opts(args), predict=not args.no_predict, workers=args.workers)
    if args.csv:
        tmap.write_csv(args.csv)
    if args.map_json:
        tmap.write_json(args.map_json)
    if args.svg:
        Path(args.svg).write_text(render_map(tmap))
    s = tmap.summary
    lines = [f"{s['cells']} cells: {s['outcomes']}", f"status: {s['status']}"]
    lines += [f"  predicted {pred}: {row}" for pred, row in sorted(s["confusion"].items())]
    lines.append("sound: no prediction contradicted" if tmap.sound else f"VIOLATIONS: {s['violations']}")
    _emit(args, {"summary": _clean(s)}, lines)
    return 0 if tmap.sound else 8


def cmd_linear(args) -> int:
    a = args.matrix
    A = ((a[0], a[1]), (a[2], a[3]))
    an = analyze(A)
    r0 = tuple(args.ref)
    payload = {"analysis": _clean(an.to_dict())}
    lines = [f"case {an.case}, eigenvalues {_fmt(an.lam1)}, {_fmt(an.lam2)}"]
    region = tolerance_region(an, r0)
    payload["region"] = _clean(region.to_dict())
    lines.append(f"  tolerance region: {len(region.planes)} half-plane(s), empty = {region.is_empty()}")
    code = 0
    if args.pert is not None:
        p0 = tuple(args.pert)
        v = verdict_linear(an, r0, p0)
        payload["verdict"] = _clean(v.to_dict())
        lines.append(f"  verdict {v.outcome}" + (f", T = {_fmt(v.T)}" if v.T is not None else ""))
        if v.max_depth is not None:
            lines.append(f"  depth bound {_fmt(v.max_depth)} at t = {_fmt(v.depth_time)}")
        code = 0 if v.outcome == "YesAfter" else 1
        if args.numeric:
            nv = detect_tolerance(linear(A), r0, p0, _opts(args))
            payload["numeric"] = nv.to_dict()
            lines.append(f"  numerical: {nv.outcome}, t1 = {_fmt(nv.t1)}")
    _emit(args, payload, lines)
    return code


def cmd_estimate(args) -> int:
    sys = load_system(args.system)
    opts = _opts(args)
    r0, p0 = tuple(args.ref), tuple(args.pert)
    rep = bound_report(sys, r0, p0, args.x_f, opts)
    payload = {"bounds": _clean(rep.to_dict())}
    lines = [
        f"lower bound on t_phi {_fmt(rep.lower_t_phi)} (actual {_fmt(rep.t_phi)})",
        f"upper bound on t_psi {_fmt(rep.upper_t_psi)} (actual {_fmt(rep.t_psi)})",
        f"sufficient condition upper < lower: {'holds' if rep.condition else 'fails'}",
    ]
    if example2_condition_available(sys):
        k = example2_constants(sys, r0, opts)
        cond = example2_tolerance_condition(sys, r0, p0, k["x_M"], k["x_f"], k["y_f"])
        payload["closed_form_condition"] = _clean({**cond.__dict__, "constants": k})
        lines.append(f"closed-form condition: {cond.status}" + (f" ({cond.reason})" if cond.reason else ""))
    _emit(args, payload, lines)
    return 0


def _load_map(path: str) -> ToleranceMap:
    d = json.loads(Path(path).read_text())
    cells = []
    for c in d["cells"]:
        m = c.get("margin")
        c = {**c, "margin": math.nan if m is None else (math.inf if m == "inf" else m)}
        cells.append(Cell(**c))
    return ToleranceMap(d["system"], tuple(d["r0"]), Grid(**d["grid"]), cells, summarize(cells))


def cmd_render(args) -> int:
    out = Path(args.out)
    if args.map:
        docs = [render_map(_load_map(args.map), args.title)]
    else:
        sys = load_system(args.system)
        opts = _opts(args)
        trajs, markers, regions = [], [], []
        starts = ([("phi", args.ref)] if args.ref else []) + [(f"psi{k + 1}" if len(args.pert) > 1 else "psi", p) for k, p in enumerate(args.pert)]
        for label, p in starts:
            t = integrate(sys, tuple(p), opts)
            trajs.append((label, list(t.x), list(t.y)))
            markers.append((label + "(0)", tuple(p)))
        if args.regions:
            if not args.ref:
                raise UsageError("--regions needs --ref")
            rep = classify_excitable(sys, tuple(args.ref), opts)
            if rep.excitable:
                T = build_region_T(rep)
                regions = [T, build_region_hatT(sys, rep, opts, T=T)]
        p = Portrait(tuple(args.box), sys, args.levels, trajs, regions, markers, args.title)
        docs = animation_frames(p, args.frames) if args.frames > 0 else [render_portrait(p)]
    if len(docs) == 1 and args.frames <= 0:
        out.write_text(docs[0])
        written = [str(out)]
    else:
        written = []
        for k, doc in enumerate(docs, start=1):
            path = out.with_name(f"{out.stem}_{k:04d}{out.suffix or '.svg'}")
            path.write_text(doc)
            written.append(str(path))
    _emit(args, {"written": written}, [f"wrote {w}" for w in written])
    return 0


COMMANDS = {
    "check": cmd_check,
    "simulate": cmd_simulate,
    "verdict": cmd_verdict,
    "regions": cmd_regions,
    "scan": cmd_scan,
    "linear": cmd_linear,
    "estimate": cmd_estimate,
    "render": cmd_render,
}


def main(argv: list[str] | None = None) -> int:
    argv = list(_sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
    except UsageError as exc:
        print(f"tolerancekit: error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=_sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )
    if not args.command:
        parser.print_usage(_sys.stderr)
        return EXIT_USAGE
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"tolerancekit: error: {exc}", file=_sys.stderr)
        return EXIT_USAGE
    except ToleranceKitError as exc:
        print(f"tolerancekit: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return exc.exit_code
    except (ValueError, OSError) as exc:
        print(f"tolerancekit: {type(exc).__name__}: {exc}", file=_sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
