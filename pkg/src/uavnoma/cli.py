"""Command-line front end: solve, sweep, converge and lattice-dump.

Exit codes: 0 on success, 2 when the scenario is invalid or infeasible,
1 on an internal error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import ao, blocklength
from .baselines import SCHEMES, run_scheme
from .config import load_scenario, rayleigh_direct_link, scenario_to_dict
from .errors import Infeasible, InfeasibleBlocklength, InvalidInput, ScenarioError
from .experiments import SWEEP_VARIABLES, SweepSpec, emit_plot_data, run_convergence, run_sweep
from .link import PowerTriple

log = logging.getLogger("uavnoma")

EXIT_OK, EXIT_INTERNAL, EXIT_INFEASIBLE = 0, 1, 2


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _schemes(text):
    out = [s.strip() for s in text.split(",") if s.strip()]
    bad = [s for s in out if s not in SCHEMES]
    if bad or not out:
        raise argparse.ArgumentTypeError(f"schemes must come from {', '.join(SCHEMES)}; got {text!r}")
    return out


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="TOML scenario file (defaults: the standard scenario)")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override one scenario field, e.g. system.m_total=150 (repeatable)")
    common.add_argument("--seed", type=int, help="draw the direct link from a seeded Rayleigh distribution")
    common.add_argument("--out-dir", type=Path, help="directory for CSV / JSON / SVG outputs")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="uavnoma", description="UAV-relay NOMA decoding-error minimisation")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", parents=[common], help="solve one scenario with one scheme")
    s.add_argument("--scheme", default="joint", choices=SCHEMES)
    s.add_argument("--format", default="json", choices=("json", "csv"), help="stdout report format")

    w = sub.add_parser("sweep", parents=[common], help="sweep one parameter over several schemes")
    w.add_argument("--variable", default="m_total", choices=SWEEP_VARIABLES)
    w.add_argument("--values", type=_floats, required=True, help="comma-separated ascending values")
    w.add_argument("--scheme", type=_schemes, default=["joint"], help="comma-separated schemes")
    w.add_argument("--repetitions", type=int, default=1)
    w.add_argument("--workers", type=int, default=1)
    w.add_argument("--format", default="csv", choices=("csv", "svg-lines"))

    c = sub.add_parser("converge", parents=[common], help="objective per outer iteration for several heights")
    c.add_argument("--values", type=_floats, default=[80.0, 100.0, 120.0], help="UAV heights in metres")
    c.add_argument("--max-iter", type=int, help="outer iteration budget")
    c.add_argument("--format", default="csv", choices=("csv", "svg-lines"))

    d = sub.add_parser("lattice-dump", parents=[common], help="dump the blocklength lattice at fixed powers")
    d.add_argument("--powers", type=_floats, help="p1,p2,pu (default: the initial allocation)")
    d.add_argument("--full", action="store_true", help="every pair, not only the capacity-bounded range")
    d.add_argument("--format", default="csv", choices=("csv",))
    return p


def _scenario(args, apply_seed=True):
    sc = load_scenario(args.scenario, args.set)
    if apply_seed and args.seed is not None:
        sc = sc.replace(link=rayleigh_direct_link(sc.params, sc.geometry, args.seed))
    return sc


def _write(out_dir, name, text):
    if out_dir is None:
        return None
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    with open(path, "w", newline="") as fh:
        fh.write(text)
    return path


def cmd_solve(args) -> int:
    sc = _scenario(args)
    rep = run_scheme(args.scheme, sc.params, sc.geometry, sc.link, sc.solver)
    doc = rep.to_dict()
    doc["scenario"] = scenario_to_dict(sc)
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.out_dir is not None:
        _write(args.out_dir, "report.json", text)
        for stage, traces in rep.stage_traces.items():
            for k, tr in enumerate(traces):
                _write(args.out_dir, f"trace_{stage}_{k + 1:02d}.csv", tr.to_csv())
    if args.format == "json":
        sys.stdout.write(text)
    else:
        bd = rep.breakdown
        sys.stdout.write("scheme,status,outer_iterations,log10_objective\r\n")
        sys.stdout.write(f"{rep.scheme},{rep.status.value},{rep.outer_iterations},{'' if bd is None else repr(bd.log10_obj)}\r\n")
    if rep.status is ao.AoStatus.INFEASIBLE:
        log.error("infeasible: %s", rep.message)
        return EXIT_INFEASIBLE
    return EXIT_OK


def cmd_sweep(args) -> int:
    # the seed drives per-repetition Rayleigh draws inside the sweep
    sc = _scenario(args, apply_seed=False)
    spec = SweepSpec(args.variable, tuple(args.values), tuple(args.scheme), args.repetitions, args.seed)
    table = run_sweep(spec, sc, workers=args.workers)
    _emit(table, args, "sweep", series="scheme")
    return EXIT_OK


def cmd_converge(args) -> int:
    sc = _scenario(args, apply_seed=False)
    table = run_convergence(sc, args.values,
                            outer_max_iter=args.max_iter, seed=args.seed)
    _emit(table, args, "convergence")
    return EXIT_OK


def _emit(table, args, stem, series=None):
    if args.out_dir is None:
        sys.stdout.write(table.to_csv())
        return
    emit_plot_data(table, "csv", args.out_dir / f"{stem}.csv")
    if args.format == "svg-lines":
        y = "log10_objective" if "log10_objective" in table.columns else None
        emit_plot_data(table, "svg-lines", args.out_dir / f"{stem}.svg", x=table.columns[1] if series else None,
                       y=y, series=series)
    _write(args.out_dir, f"{stem}_timing.csv", table.to_csv(include_time=True))


def cmd_lattice(args) -> int:
    sc = _scenario(args)
    alloc = ao.initialize(sc.params, sc.geometry, sc.link)
    if args.powers is not None and len(args.powers) != 3:
        raise InvalidInput("--powers needs exactly three values p1,p2,pu")
    pw = alloc.pw if args.powers is None else PowerTriple(*args.powers)
    link = ao.allocation_link(alloc, sc.geometry, sc.params, sc.link)
    if args.full:
        lat = blocklength.enumerate_pairs(link, pw, sc.params, (1, sc.params.m_total - 1), 1)
    else:
        b = blocklength.compute_bounds(link, pw, sc.params)
        if b.empty:
            raise InfeasibleBlocklength(f"empty search range: m2_lb={b.m2_lb} > m2_ub={b.m2_ub}")
        lat = blocklength.enumerate_pairs(link, pw, sc.params, (b.m2_lb, b.m2_ub), b.m3_lb)
    text = lat.to_csv()
    if args.out_dir is None:
        sys.stdout.write(text)
    else:
        _write(args.out_dir, "lattice.csv", text)
    return EXIT_OK


COMMANDS = {"solve": cmd_solve, "sweep": cmd_sweep, "converge": cmd_converge, "lattice-dump": cmd_lattice}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (ScenarioError, Infeasible, InfeasibleBlocklength, InvalidInput) as exc:
        log.error("%s", exc)
        return EXIT_INFEASIBLE
    except BrokenPipeError:
        # downstream reader closed early (e.g. piped into head)
        sys.stderr.close()
        return EXIT_OK
    except OSError as exc:
        log.error("%s", exc)
        return EXIT_INTERNAL
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
