"""Command-line front end for the transport and placement pipeline.

Every subcommand is a thin, logged wrapper over one module pipeline and
writes deterministic outputs; logs (with timestamps) go to stderr only.
Parameter precedence: command-line flag > config file (--config, key=value
with the flag names) > built-in default.  Validation reports every
violation, one machine-parsable ``error: config: ...`` line each.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from . import ensemble as ens
from . import markov, placement, tracking as tr, transport
from .errors import FormatError
from .flowfield import gen_channel_flow, gen_double_gyre, load_field, write_field
from .grid import CellSet, load_grid_config

log = logging.getLogger("airmarkov")


class _ConfigProblems(Exception):
    def __init__(self, problems):
        super().__init__("; ".join(problems))
        self.problems = problems


def _load_config_file(path):
    values = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise FormatError(f"expected 'key = value', got {line!r}",
                                  path=path, line=lineno)
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value
    return values


def _merge_config(args, spec):
    """Apply flag > config > default precedence and collect all violations."""
    problems = []
    config = {}
    if getattr(args, "config", None):
        try:
            config = _load_config_file(args.config)
        except (FormatError, OSError) as exc:
            problems.append(str(exc))
    known = {opt["key"] for opt in spec}
    for key in config:
        if key not in known:
            problems.append(f"unknown config key {key!r}")
    merged = {}
    for opt in spec:
        key = opt["key"]
        dest = key.replace("-", "_")
        value = getattr(args, dest, None)
        if value is None and key in config:
            conv = _parse_bool if opt["type"] is bool else opt["type"]
            try:
                value = conv(config[key])
            except ValueError:
                problems.append(f"bad config value for {key!r}: {config[key]!r}")
                value = None
        if value is None:
            value = opt.get("default")
        if value is None and opt.get("required"):
            problems.append(f"missing required parameter --{key}")
        merged[dest] = value
    for check in (c for opt in spec if (c := opt.get("check"))):
        msg = check(merged)
        if msg:
            problems.append(msg)
    if problems:
        raise _ConfigProblems(problems)
    return argparse.Namespace(**merged)


def _positive(name):
    def check(merged):
        value = merged.get(name.replace("-", "_"))
        if value is not None and value <= 0:
            return f"--{name} must be > 0, got {value}"
        return None
    return check


def _exists(name):
    def check(merged):
        value = merged.get(name.replace("-", "_"))
        if value is not None and not Path(value).exists():
            return f"--{name}: no such file: {value}"
        return None
    return check


def _parse_cells(text):
    return [int(part) for part in text.replace(",", " ").split()]


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_source(text):
    cell_rates = {}
    for item in text.split(","):
        cell, _, rate = item.partition("=")
        cell_rates[int(cell)] = float(rate)
    return cell_rates


# -- subcommands -----------------------------------------------------------

GEN_FLOW_SPEC = [
    {"key": "grid", "type": str, "required": True, "check": _exists("grid")},
    {"key": "generator", "type": str, "required": True,
     "check": lambda m: None if m.get("generator") in ("double-gyre", "channel")
     else f"--generator must be double-gyre or channel, got {m.get('generator')!r}"},
    {"key": "amplitude", "type": float},
    {"key": "u-max", "type": float},
    {"key": "out", "type": str, "required": True},
]


def cmd_gen_flow(args):
    grid = load_grid_config(args.grid)
    if args.generator == "double-gyre":
        if args.amplitude is None:
            raise _ConfigProblems(["--amplitude is required for double-gyre"])
        field = gen_double_gyre(grid, args.amplitude)
    else:
        if args.u_max is None:
            raise _ConfigProblems(["--u-max is required for channel"])
        field = gen_channel_flow(grid, args.u_max)
    write_field(field, args.out)
    log.info("wrote %s field for %dx%d grid to %s", args.generator,
             grid.nx, grid.ny, args.out)
    print(f"field: {args.out}")
    print(f"cells: {grid.n_cells}")
    print(f"max_speed: {field.max_speed():.17g}")
    return 0


BUILD_PF_SPEC = [
    {"key": "grid", "type": str, "required": True, "check": _exists("grid")},
    {"key": "field", "type": str, "required": True, "check": _exists("field")},
    {"key": "diffusivity", "type": float, "required": True},
    {"key": "dt-markov", "type": float, "required": True, "check": _positive("dt-markov")},
    {"key": "dt-sub", "type": float, "check": _positive("dt-sub")},
    {"key": "workers", "type": int, "default": 1, "check": _positive("workers")},
    {"key": "sparsity-floor", "type": float, "default": markov.SPARSITY_FLOOR},
    {"key": "out", "type": str, "required": True},
]


def cmd_build_pf(args):
    grid = load_grid_config(args.grid)
    field = load_field(args.field, grid)
    log.info("building operator: %d states, dt_markov=%g", grid.n_cells + 1, args.dt_markov)
    op = markov.build(grid, field, args.diffusivity, args.dt_markov,
                      workers=args.workers, sparsity_floor=args.sparsity_floor,
                      dt_sub=args.dt_sub)
    markov.save_operator(op, args.out)
    log.info("wrote operator to %s", args.out)
    print(f"operator: {args.out}")
    print(f"n_states: {op.n_states}")
    print(f"nnz: {op.matrix.nnz}")
    return 0


PROPAGATE_SPEC = [
    {"key": "operator", "type": str, "required": True, "check": _exists("operator")},
    {"key": "steps", "type": int, "required": True,
     "check": lambda m: None if (m.get("steps") is None or m["steps"] >= 0)
     else f"--steps must be >= 0, got {m['steps']}"},
    {"key": "density", "type": str, "check": _exists("density")},
    {"key": "delta", "type": int},
    {"key": "source", "type": str},
    {"key": "source-schedule", "type": str, "default": "constant"},
    {"key": "out", "type": str},
]


def cmd_propagate(args):
    if (args.density is None) == (args.delta is None):
        raise _ConfigProblems(["exactly one of --density or --delta is required"])
    op = markov.load_operator(args.operator)
    if args.density is not None:
        mu = transport.load_density(args.density)
        if mu.size == op.n_cells:
            mu = np.append(mu, 0.0)
        elif mu.size != op.n_states:
            raise _ConfigProblems([
                f"density has {mu.size} entries, operator expects "
                f"{op.n_cells} or {op.n_states}"])
    else:
        if not (0 <= args.delta < op.n_cells):
            raise _ConfigProblems([f"--delta must lie in [0, {op.n_cells})"])
        mu = np.zeros(op.n_states)
        mu[args.delta] = 1.0
    src = None
    if args.source:
        src = transport.SourceTerm.from_dict(_parse_source(args.source),
                                             schedule=args.source_schedule)
    out = markov.propagate(mu, op, args.steps, src)
    if args.out:
        transport.write_density(args.out, out)
        log.info("wrote propagated density to %s", args.out)
    interior = float(out[:op.n_cells].sum())
    sink = float(out[op.n_cells])
    print(f"steps: {args.steps}")
    print(f"interior_mass: {interior:.17g}")
    print(f"sink_mass: {sink:.17g}")
    print(f"total_mass: {interior + sink:.17g}")
    return 0


TRACK_SPEC = [
    {"key": "operator", "type": str, "required": True, "check": _exists("operator")},
    {"key": "steps", "type": int},
    {"key": "tau", "type": float},
    {"key": "eps-acc", "type": float},
    {"key": "volume-weight", "type": bool, "default": False},
    {"key": "grid", "type": str, "check": _exists("grid")},
    {"key": "out", "type": str, "required": True},
    {"key": "bits", "type": str},
]


def cmd_track(args):
    if (args.steps is None) == (args.tau is None):
        raise _ConfigProblems(["exactly one of --steps or --tau is required"])
    problems = []
    if args.volume_weight and args.eps_acc is None:
        problems.append("--volume-weight requires --eps-acc")
    if args.volume_weight and args.grid is None:
        problems.append("--volume-weight requires --grid")
    if args.bits and args.eps_acc is None:
        problems.append("--bits requires --eps-acc (binary pattern dump)")
    if problems:
        raise _ConfigProblems(problems)
    if (args.forbid_rect or args.unmonitor_rect) and args.grid is None:
        raise _ConfigProblems(["--forbid-rect/--unmonitor-rect require --grid"])
    if (args.forbid_rect or args.unmonitor_rect) and args.eps_acc is None:
        raise _ConfigProblems(["constraints require --eps-acc (binary pattern)"])
    op = markov.load_operator(args.operator)
    grid = load_grid_config(args.grid) if args.grid else None
    m = args.steps if args.steps is not None else tr.snap_steps(args.tau, op.dt_markov)
    log.info("accumulating tracking matrix over %d steps", m)
    q = tr.tracking_matrix(op, m)
    binary = None
    if args.eps_acc is not None:
        q = binary = tr.threshold(q, args.eps_acc)
    for i0, j0, i1, j1 in args.forbid_rect or []:
        q = binary = tr.apply_location_constraint(q, CellSet.from_rect(grid, i0, j0, i1, j1))
    for i0, j0, i1, j1 in args.unmonitor_rect or []:
        q = binary = tr.apply_sensing_constraint(q, CellSet.from_rect(grid, i0, j0, i1, j1))
    if args.volume_weight:
        q = tr.volume_weight(q, grid)
    tr.save_tracking(q, args.out)
    if args.bits:
        tr.save_pattern_bits(binary, args.bits)
    print(f"tracking: {args.out}")
    print(f"kind: {q.kind}")
    print(f"m: {q.m}")
    print(f"tau: {q.tau:.17g}")
    print(f"nnz: {q.matrix.nnz}")
    return 0


PLACE_SPEC = [
    {"key": "tracking", "type": str, "required": True, "check": _exists("tracking")},
    {"key": "sensors", "type": int, "required": True, "check": _positive("sensors")},
    {"key": "release-cells", "type": _parse_cells},
    {"key": "preset", "type": str, "default": "none",
     "check": lambda m: None if m.get("preset") in ("none", "location", "sensing-location")
     else f"--preset must be none, location, or sensing-location, got {m.get('preset')!r}"},
    {"key": "grid", "type": str, "check": _exists("grid")},
    {"key": "include-sink", "type": bool, "default": False},
    {"key": "out", "type": str},
]


def cmd_place(args):
    q = tr.load_tracking(args.tracking)
    if q.kind == tr.REAL:
        raise _ConfigProblems(["tracking matrix is real-valued; "
                               "threshold it first (track --eps-acc)"])
    grid = load_grid_config(args.grid) if args.grid else None
    occupied = None
    if args.preset != "none":
        if grid is None or args.occupied_rect is None:
            raise _ConfigProblems([f"--preset {args.preset} requires --grid "
                                   "and --occupied-rect"])
        occupied = CellSet.from_rect(grid, *args.occupied_rect)
        binary = q if q.kind == tr.BINARY else None
        if binary is None:
            raise _ConfigProblems(["constraint presets need a binary tracking matrix "
                                   "(apply --volume-weight after placing instead)"])
        q = tr.apply_location_constraint(q, occupied)
        if args.preset == "sensing-location":
            monitored = occupied.mask()
            q = tr.apply_sensing_constraint(
                q, CellSet(np.flatnonzero(~monitored), q.n_cells))
    scenario = None
    if args.release_cells:
        scenario = placement.ReleaseScenario(np.asarray(args.release_cells))
    pattern = q
    labels = None
    if args.include_sink:
        if q.sink_exposure is None:
            raise _ConfigProblems(["--include-sink: tracking file carries no "
                                   "sink exposure"])
        pattern = sp.hstack([q.matrix, sp.csr_matrix(q.sink_exposure[:, None])]).tocsr()
        labels = None  # resolved after placement
    result = placement.greedy_place(pattern, args.sensors, scenario, grid=grid)
    if args.include_sink:
        labels = ["sink" if c == q.n_cells else f"cell {c}" for c in result.sensor_cells]
    report = placement.format_report(result, grid=grid, labels=labels)
    if args.out:
        Path(args.out).write_text(report, encoding="utf-8")
        log.info("wrote placement report to %s", args.out)
    else:
        sys.stdout.write(report)
    return 0


PLACE_ENSEMBLE_SPEC = [
    {"key": "manifest", "type": str, "required": True, "check": _exists("manifest")},
    {"key": "sensors", "type": int, "required": True, "check": _positive("sensors")},
    {"key": "workers", "type": int, "default": 1, "check": _positive("workers")},
    {"key": "out-prefix", "type": str, "required": True},
]


def cmd_place_ensemble(args):
    ensemble_obj, params = ens.load_manifest(args.manifest)
    forbidden = None
    unmonitored = None
    if params["constraint_preset"] in ("location", "sensing-location"):
        forbidden = params["occupied"]
    if params["constraint_preset"] == "sensing-location":
        monitored = params["occupied"].mask()
        unmonitored = CellSet(np.flatnonzero(~monitored), ensemble_obj.ref_grid.n_cells)
    log.info("building ensemble: %d realizations, m=%d steps",
             ensemble_obj.n_realizations, params["m"])
    etracking = ens.build_ensemble(
        ensemble_obj, params["diffusivity"], params["dt_markov"], params["m"],
        params["eps_acc"], forbidden=forbidden, unmonitored=unmonitored,
        workers=args.workers)
    result, _ = ens.ensemble_place(etracking, args.sensors)

    prefix = args.out_prefix
    cover = ens.probable_coverage_map(result.sensor_cells, etracking.binary,
                                      etracking.weights) if result.sensor_cells else None
    grid = ensemble_obj.ref_grid
    lines = [f"realizations: {ensemble_obj.n_realizations}",
             f"sensors: {len(result.sensor_cells)}"]
    for rank, cell in enumerate(result.sensor_cells, start=1):
        i, j = grid.cell_coords(cell)
        x = grid.origin[0] + (i + 0.5) * grid.dx
        y = grid.origin[1] + (j + 0.5) * grid.dy
        lines.append(f"sensor {rank}: cell {cell} (x={x:.6g}, y={y:.6g})")
    if result.early_stopped:
        lines.append(f"early_stop: after sensor {len(result.sensor_cells)} "
                     "(all-zero expectation vector)")
    if cover is not None:
        expected = ens.expected_coverage_fraction(result.sensor_cells,
                                                  etracking.binary,
                                                  etracking.weights, grid)
        lines.append(f"expected_coverage_fraction: {expected:.12g}")
    report = "\n".join(lines) + "\n"
    Path(f"{prefix}-report.txt").write_text(report, encoding="utf-8")
    if cover is not None:
        ens.write_cell_csv(f"{prefix}-coverage.csv", grid, cover, column="probability")
        ens.write_pgm(f"{prefix}-coverage.pgm", grid, cover)
    sys.stdout.write(report)
    log.info("wrote %s-report.txt%s", prefix,
             " and coverage maps" if cover is not None else "")
    return 0


EXPORT_MAP_SPEC = [
    {"key": "map", "type": str, "required": True, "check": _exists("map")},
    {"key": "grid", "type": str, "required": True, "check": _exists("grid")},
    {"key": "out", "type": str, "required": True},
    {"key": "normalize", "type": bool, "default": False},
]


def cmd_export_map(args):
    grid = load_grid_config(args.grid)
    with open(args.map, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if first.startswith(transport.DENSITY_MAGIC):
        values = transport.load_density(args.map)
    elif first.startswith("k,"):
        values = np.full(grid.n_cells, np.nan)
        with open(args.map, "r", encoding="utf-8") as fh:
            fh.readline()
            for lineno, raw in enumerate(fh, start=2):
                parts = raw.strip().split(",")
                if len(parts) < 6:
                    raise FormatError("expected k,i,j,x,y,value row",
                                      path=args.map, line=lineno)
                values[int(parts[0])] = float(parts[5])
        if np.any(np.isnan(values)):
            raise FormatError("CSV does not cover every cell", path=args.map)
    else:
        raise FormatError("unrecognized map format (want pfdensity or k,i,j,x,y,value CSV)",
                          path=args.map)
    if values.size != grid.n_cells:
        raise _ConfigProblems([f"map has {values.size} values, grid has {grid.n_cells} cells"])
    if args.normalize and values.max() > 0:
        values = values / values.max()
    ens.write_pgm(args.out, grid, values)
    print(f"pgm: {args.out}")
    return 0


# -- driver ------------------------------------------------------------------

_COMMANDS = {
    "gen-flow": (cmd_gen_flow, GEN_FLOW_SPEC, "generate a synthetic velocity field"),
    "build-pf": (cmd_build_pf, BUILD_PF_SPEC, "build the transfer operator from a field"),
    "propagate": (cmd_propagate, PROPAGATE_SPEC, "advance a density with an operator"),
    "track": (cmd_track, TRACK_SPEC, "build/threshold/constrain a tracking matrix"),
    "place": (cmd_place, PLACE_SPEC, "greedy sensor placement on a tracking matrix"),
    "place-ensemble": (cmd_place_ensemble, PLACE_ENSEMBLE_SPEC,
                       "expectation placement over an ensemble manifest"),
    "export-map": (cmd_export_map, EXPORT_MAP_SPEC, "render a per-cell map as PGM"),
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="airmarkov",
        description="Markov-operator contaminant transport and sensor placement")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name, (func, spec, help_text) in _COMMANDS.items():
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("--config", help="key=value file with parameter defaults")
        for opt in spec:
            flag = "--" + opt["key"]
            if opt["type"] is bool:
                sub.add_argument(flag, action="store_const", const=True, default=None)
            elif opt["type"] is _parse_cells:
                sub.add_argument(flag, type=_parse_cells, default=None)
            else:
                sub.add_argument(flag, type=opt["type"], default=None)
        if name == "track":
            sub.add_argument("--forbid-rect", type=int, nargs=4, action="append",
                             metavar=("I0", "J0", "I1", "J1"))
            sub.add_argument("--unmonitor-rect", type=int, nargs=4, action="append",
                             metavar=("I0", "J0", "I1", "J1"))
        if name == "place":
            sub.add_argument("--occupied-rect", type=int, nargs=4, default=None,
                             metavar=("I0", "J0", "I1", "J1"))
        sub.set_defaults(func=func, spec=spec)
    return parser


def main(argv=None):
    args = _build_parser().parse_args(argv)
    logging.basicConfig(stream=sys.stderr, level=args.log_level,
                        format="%(asctime)s %(levelname)s %(name)s: %(message)s")
    extra = {}
    for key in ("forbid_rect", "unmonitor_rect", "occupied_rect"):
        if hasattr(args, key):
            extra[key] = getattr(args, key)
    try:
        merged = _merge_config(args, args.spec)
        for key, value in extra.items():
            setattr(merged, key, value)
        return args.func(merged)
    except _ConfigProblems as exc:
        for problem in exc.problems:
            print(f"error: config: {problem}", file=sys.stderr)
        return 2
    except Exception as exc:  # pragma: no cover - error path formatting
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
