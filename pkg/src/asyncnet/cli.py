"""``asyncnet`` command line: simulate, transition, factorize, verify.

Exit codes: 0 success, 2 chattering detected, 3 configuration error,
4 cyclic event precedence, 5 verification tolerance exceeded.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import math
import random
import sys
from dataclasses import replace

from . import __version__
from . import exprlang as ex
from .algebra import BoundaryMismatch, verify_realization
from .core import ConfigurationError, NetworkState
from .factorize import CyclicPrecedence, factorize_left, factorize_right, layer_count_minimal, realize
from .functional import COMPLETED, estimate_domain, grid_states
from .netfile import load
from .semiflow import ChatterDetected, IntegratorConfig, flow

EXIT_OK, EXIT_CHATTER, EXIT_CONFIG, EXIT_CYCLIC, EXIT_TOLERANCE = 0, 2, 3, 4, 5
VERSION_LINE = f"# asyncnet {__version__}"


def fmt(v: float) -> str:
    return "%.17g" % v


# -- argument helpers --------------------------------------------------------

def _split(s: str) -> list:
    parts, depth, cur = [], 0, ""
    for ch in s:
        depth += ch == "("
        depth -= ch == ")"
        if ch == "," and depth == 0:
            parts.append(cur)
            cur = ""
        else:
            cur += ch
    parts.append(cur)
    return [p.strip() for p in parts if p.strip()]


def _value(src: str, consts: dict) -> float:
    try:
        return float(ex.evaluate(ex.parse(src), {"pi": math.pi, **consts}))
    except ex.ExprError as exc:
        raise ConfigurationError(f"cannot evaluate {src!r}: {exc}") from exc


def parse_assignments(text: str, consts: dict) -> dict:
    """``"x1=-1, th1=pi/2"`` -> ``{"x1": -1.0, "th1": 1.5707...}``."""
    out = {}
    for part in _split(text):
        name, eq, rhs = part.partition("=")
        if not eq:
            raise ConfigurationError(f"expected coord=value, got {part!r}")
        out[name.strip()] = _value(rhs, consts)
    return out


def parse_state(net, text: str | None) -> NetworkState:
    space = net.phase_space
    vals = parse_assignments(text or "", net.constant_table)
    unknown = set(vals) - set(space.coord_names)
    if unknown:
        raise ConfigurationError(f"unknown coordinates in --x0: {sorted(unknown)}")
    missing = [c for c in space.coord_names if c not in vals]
    if missing:
        raise ConfigurationError(f"--x0 does not set {missing}")
    return NetworkState.from_mapping(space, vals)


def parse_grid(text: str, consts: dict) -> tuple:
    """``coord=lo:hi:n`` with ``n`` equispaced points in ``[lo, hi)``."""
    name, eq, rest = text.partition("=")
    fields = rest.split(":")
    if not eq or len(fields) != 3:
        raise ConfigurationError(f"grid must be coord=lo:hi:n, got {text!r}")
    n = int(fields[2])
    if n < 0:
        raise ConfigurationError("grid size must be non-negative")
    return name.strip(), _value(fields[0], consts), _value(fields[1], consts), n


def parse_times(text: str | None, k: int, consts: dict) -> list:
    if text is None:
        return [0.0] * k
    vals = [_value(p, consts) for p in _split(text)]
    if len(vals) != k or any(v < 0 for v in vals):
        raise ConfigurationError(f"--start-times needs {k} non-negative values")
    return vals


def make_cfg(args) -> IntegratorConfig:
    cfg = IntegratorConfig()
    changes = {}
    for attr, opt in (("step", "step"), ("tau_event", "tau_event"), ("t_max", "t_max")):
        v = getattr(args, opt, None)
        if v is not None:
            changes[attr] = v
    return replace(cfg, **changes)


def _emit(text: str, out: str | None) -> None:
    if out and out != "-":
        with open(out, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _dumps(obj) -> str:
    return json.dumps({"version": __version__, **obj}, indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def _require(nf, what: str, section: str):
    val = getattr(nf, what)
    if val is None:
        raise ConfigurationError(f"the file has no '{section}' section")
    return val


# -- subcommands ---------------------------------------------------------------

def cmd_simulate(args) -> int:
    nf = load(args.file)
    net = nf.net
    cfg = make_cfg(args)
    x0 = parse_state(net, args.x0)
    duration = cfg.t_max if args.duration is None else args.duration
    traj = flow(net, x0, duration, cfg)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    buf.write(VERSION_LINE + "\n")
    w.writerow(["t", "structure", *net.phase_space.coord_names])
    for t, name, coords in traj.rows():
        w.writerow([fmt(t), name, *(fmt(c) for c in coords)])
    if nf.functional is not None and traj.t_end >= cfg.t_max:
        comp = net.compiled()
        final = list(traj.final)
        levels = [ex.compile_expr(e, comp.slots, comp.consts, params="s")(final)
                  for e in nf.functional.term_levels]
        if any(v < 0 for v in levels):
            buf.write("# deadlock: budget exhausted\n")
    _emit(buf.getvalue(), args.out)
    return EXIT_OK


def _sample_row(space, state, res) -> dict:
    row = {"x0": state.as_mapping(space), "status": res.status}
    if res.status == COMPLETED:
        row["S"] = list(res.times)
        row["final"] = dict(zip(space.coord_names, [v for node in res.final_states for v in node]))
    else:
        row["message"] = res.message
    return row


def cmd_transition(args) -> int:
    nf = load(args.file)
    fn = _require(nf, "functional", "functional")
    net = nf.net
    consts = net.constant_table
    cfg = make_cfg(args)
    T = parse_times(args.start_times, net.k, consts)
    base = parse_state(net, args.x0)
    axes = [parse_grid(g, consts) for g in (args.grid or [])]
    states = grid_states(net.phase_space, base, axes) if axes else [base]
    report = estimate_domain(fn, states, cfg, workers=args.threads, start_times=T)
    space = net.phase_space
    rows = [_sample_row(space, s, r) for s, r in report.entries]
    if args.format == "json":
        text = _dumps({
            "start_times": T,
            "t_max": cfg.t_max,
            "summary": {"sampled": report.sampled, "completed": report.completed,
                        "deadlocked": report.deadlocked, "errors": report.errors},
            "samples": rows,
        })
    else:
        buf = io.StringIO()
        buf.write(VERSION_LINE + "\n")
        w = csv.writer(buf, lineterminator="\n")
        names = [n.name for n in space.nodes]
        coords = space.coord_names
        w.writerow(["status", *[f"x0_{c}" for c in coords], *[f"S_{n}" for n in names],
                    *[f"final_{c}" for c in coords]])
        for r in rows:
            done = r["status"] == COMPLETED
            w.writerow([r["status"], *(fmt(r["x0"][c]) for c in coords),
                        *((fmt(v) for v in r["S"]) if done else [""] * len(names)),
                        *((fmt(r["final"][c]) for c in coords) if done else [""] * len(coords))])
        text = buf.getvalue()
    _emit(text, args.out)
    return EXIT_OK


def cmd_factorize(args) -> int:
    nf = load(args.file)
    esn = _require(nf, "regions", "event_regions")
    facs = {}
    if args.side in ("left", "both"):
        facs["left"] = factorize_left(esn)
    if args.side in ("right", "both"):
        facs["right"] = factorize_right(esn)
    q = layer_count_minimal(esn)
    if args.format == "json":
        text = _dumps({**{side: f.as_dict() for side, f in facs.items()}, "layers": q})
    else:
        text = "".join(f"{side}: {f.notation()}\n" for side, f in facs.items()) + f"layers: {q}\n"
    _emit(text, args.out)
    return EXIT_OK


def cmd_verify(args) -> int:
    nf = load(args.file)
    esn = _require(nf, "regions", "event_regions")
    fn = _require(nf, "functional", "functional")
    cfg = make_cfg(args)
    fac = factorize_left(esn)
    realized = realize(esn, fac)
    first, last = realized.stages[0], realized.stages[-1]
    for i in range(fn.k):
        for mine, theirs, what in ((fn.init_levels[i], first.init_levels[i], "initialization"),
                                   (fn.term_levels[i], last.term_levels[i], "termination")):
            if not ex.structurally_equal(mine, theirs):
                raise BoundaryMismatch(
                    f"node {fn.phase_space.nodes[i].name}: {what} set '{ex.to_text(mine)}' in the file "
                    f"differs from '{ex.to_text(theirs)}' of the realized factorization")
    x0 = parse_state(fn.net, args.x0) if args.x0 else NetworkState.from_flat(
        fn.phase_space, [0.0] * fn.phase_space.dim)
    rng = random.Random(args.seed)
    samples = [(x0, [rng.uniform(0.0, 1.0) for _ in range(fn.k)]) for _ in range(args.samples)]
    rep = verify_realization(fn, realized, samples, cfg, workers=args.threads)
    ok = rep.ok(args.tol)
    statuses = sorted({r["status"] for r in rep.per_sample})
    body = {"factorization": fac.notation(), "samples": args.samples, "seed": args.seed,
            "max_state_error": rep.max_state_error, "max_time_error": rep.max_time_error,
            "statuses": statuses, "tolerance": args.tol, "ok": ok}
    if args.format == "json":
        _emit(_dumps(body), args.out)
    else:
        _emit("".join(f"{k}: {body[k]}\n" for k in sorted(body)), args.out)
    return EXIT_OK if ok else EXIT_TOLERANCE


# -- parser --------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="asyncnet", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"asyncnet {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    def numerics(sp):
        sp.add_argument("--step", type=float, help="integrator step (default 2^-8)")
        sp.add_argument("--tau-event", dest="tau_event", type=float, help="event localization tolerance")
        sp.add_argument("--t-max", dest="t_max", type=float, help="time budget (default 100)")

    s = sub.add_parser("simulate", help="integrate the network vector field and write a CSV trajectory")
    s.add_argument("file")
    s.add_argument("--x0", required=True, help="initial state, e.g. 'x1=-1, th1=pi, x2=1, th2=0'")
    s.add_argument("--duration", type=float)
    numerics(s)
    s.add_argument("--out", help="output path (default stdout)")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("transition", help="transition and timing functions at a point or over a grid")
    s.add_argument("file")
    s.add_argument("--x0", required=True, help="initial state (base point when --grid is given)")
    s.add_argument("--grid", action="append", help="coord=lo:hi:n, repeatable")
    s.add_argument("--start-times", dest="start_times", help="comma separated per-node start times")
    s.add_argument("--format", choices=("json", "csv"), default="json")
    s.add_argument("--threads", type=int, default=1)
    numerics(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_transition)

    s = sub.add_parser("factorize", help="layered factorizations of the event structure")
    s.add_argument("file")
    s.add_argument("--side", choices=("left", "right", "both"), default="both")
    s.add_argument("--format", choices=("text", "json"), default="text")
    s.add_argument("--out")
    s.set_defaults(func=cmd_factorize)

    s = sub.add_parser("verify", help="compare the realized factorization with direct simulation")
    s.add_argument("file")
    s.add_argument("--samples", type=int, default=50)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--x0", help="initial state (default: all coordinates 0)")
    s.add_argument("--tol", type=float, default=1e-6)
    s.add_argument("--format", choices=("json", "text"), default="json")
    s.add_argument("--threads", type=int, default=1)
    numerics(s)
    s.add_argument("--out")
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ChatterDetected as exc:
        print(f"asyncnet: chattering: {exc}", file=sys.stderr)
        return EXIT_CHATTER
    except CyclicPrecedence as exc:
        print(f"asyncnet: {args.file}: {exc}", file=sys.stderr)
        return EXIT_CYCLIC
    except (ConfigurationError, OSError, ValueError) as exc:
        print(f"asyncnet: {getattr(args, 'file', '')}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
