"""Parameter sweeps, convergence traces and plot-ready output.

Result tables hold plain rows; CSV output is RFC 4180 with CRLF line ends
and 17 significant digits, so identical inputs give byte-identical files.
Wall-clock times live in a separate column set that is left out of the
deterministic CSV unless asked for.
"""
from __future__ import annotations

import csv
import dataclasses
import io
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from . import ao
from .baselines import SCHEMES, run_scheme
from .config import Geometry, Scenario, rayleigh_direct_link
from .errors import InvalidInput, UavNomaError
from .sca import format_number

SWEEP_VARIABLES = ("m_total", "uav_height", "e_tot", "p_max")
SWEEP_COLUMNS = (
    "variable", "value", "scheme", "repetition", "link_seed", "status",
    "objective", "log10_objective", "eps_bar_dev", "log10_eps_bar_dev", "outer_iterations",
)


@dataclass(frozen=True)
class SweepSpec:
    variable: str
    values: tuple
    schemes: tuple = ("joint",)
    repetitions: int = 1
    seed: int | None = None

    def __post_init__(self):
        if self.variable not in SWEEP_VARIABLES:
            raise InvalidInput(f"sweep variable must be one of {SWEEP_VARIABLES}, got {self.variable!r}")
        vals = tuple(self.values)
        if not vals:
            raise InvalidInput("sweep values must be nonempty")
        if any(b < a for a, b in zip(vals, vals[1:])):
            raise InvalidInput("sweep values must be sorted ascending")
        object.__setattr__(self, "values", vals)
        schemes = tuple(self.schemes)
        bad = [s for s in schemes if s not in SCHEMES]
        if not schemes or bad:
            raise InvalidInput(f"schemes must be a nonempty subset of {SCHEMES}, got {schemes}")
        object.__setattr__(self, "schemes", schemes)
        if int(self.repetitions) != self.repetitions or self.repetitions < 1:
            raise InvalidInput("repetitions must be an integer >= 1")
        if self.seed is None and self.repetitions > 1:
            raise InvalidInput("repetitions > 1 need a seed for the Rayleigh draws")


@dataclass
class ResultTable:
    columns: tuple
    rows: list = field(default_factory=list)
    # per-row wall-clock seconds, kept apart from the deterministic columns
    wall_time: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        i = self.columns.index(name)
        return [r[i] for r in self.rows]

    def where(self, **eq):
        idx = [self.columns.index(k) for k in eq]
        keep = [k for k, r in enumerate(self.rows) if all(r[i] == v for i, v in zip(idx, eq.values()))]
        return ResultTable(self.columns, [self.rows[k] for k in keep],
                           [self.wall_time[k] for k in keep] if self.wall_time else [])

    def to_csv(self, include_time=False) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(self.columns + (("wall_time_s",) if include_time else ()))
        for k, r in enumerate(self.rows):
            cells = [_cell(v) for v in r]
            if include_time:
                cells.append(format_number(self.wall_time[k]))
            w.writerow(cells)
        return buf.getvalue()


def _cell(v):
    if v is None:
        return ""
    if isinstance(v, str):
        return v
    return format_number(v)


def scenario_at(sc: Scenario, variable: str, value) -> Scenario:
    """The scenario with one sweep variable replaced."""
    if variable == "m_total":
        if int(value) != value:
            raise InvalidInput(f"m_total must be an integer, got {value}")
        value = int(value)
    params = dataclasses.replace(sc.params, **{variable: value})
    geom = sc.geometry
    if variable == "uav_height":
        geom = Geometry(geom.controller, geom.device, np.array([geom.uav[0], geom.uav[1], float(value)]))
    return sc.replace(params=params, geometry=geom)


def _link_for(sc: Scenario, seed, repetition):
    if seed is None:
        return sc.link, None
    s = int(seed) + int(repetition)
    return rayleigh_direct_link(sc.params, sc.geometry, s), s


def _point(args):
    sc, variable, value, scheme, rep, seed = args
    t0 = time.perf_counter()
    link_seed = None
    try:
        sc_v = scenario_at(sc, variable, value)
        link, link_seed = _link_for(sc_v, seed, rep)
        rep_obj = run_scheme(scheme, sc_v.params, sc_v.geometry, link, sc_v.solver)
        if rep_obj.breakdown is None:
            row = (variable, value, scheme, rep, link_seed, rep_obj.status.value, None, None, None, None, rep_obj.outer_iterations)
        else:
            bd = rep_obj.breakdown
            ln10 = math.log(10)
            row = (variable, value, scheme, rep, link_seed, rep_obj.status.value, bd.eps_obj, bd.log_obj / ln10,
                   bd.eps_bar_dev, bd.log_bar_dev / ln10, rep_obj.outer_iterations)
    except UavNomaError as exc:
        row = (variable, value, scheme, rep, link_seed, f"error: {type(exc).__name__}: {exc}", None, None, None, None, 0)
    return row, time.perf_counter() - t0


def run_sweep(spec: SweepSpec, scenario: Scenario, workers: int = 1) -> ResultTable:
    """One row per (value, scheme, repetition), in that nesting order.

    Per-point failures become status rows.  ``workers > 1`` evaluates points
    in separate processes; rows are assembled in the same order either way.
    """
    jobs = [
        (scenario, spec.variable, v, s, r, spec.seed)
        for v in spec.values for s in spec.schemes for r in range(spec.repetitions)
    ]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            out = list(ex.map(_point, jobs))
    else:
        out = [_point(j) for j in jobs]
    return ResultTable(SWEEP_COLUMNS, [r for r, _ in out], [t for _, t in out])


def run_convergence(scenario: Scenario, heights, outer_max_iter: int | None = None, seed: int | None = None) -> ResultTable:
    """Objective after each outer iteration, one column per UAV height.

    Shorter runs are padded with their converged value.  Columns hold the
    objective and its log10 for each height.
    """
    heights = list(heights)
    if not heights:
        raise InvalidInput("heights must be nonempty")
    hists, times, statuses = [], [], []
    for h in heights:
        t0 = time.perf_counter()
        sc_h = scenario_at(scenario, "uav_height", h)
        link, _ = _link_for(sc_h, seed, 0)
        rep = ao.solve(sc_h.params, sc_h.geometry, link, settings=sc_h.solver, outer_max_iter=outer_max_iter)
        times.append(time.perf_counter() - t0)
        statuses.append(rep.status.value)
        # drop the initial point: entry k is the objective after outer iteration k + 1
        hists.append(list(zip(rep.objective_history[1:], rep.log10_history[1:])))
    n = max(len(hh) for hh in hists)
    cols = ["iteration"]
    for h in heights:
        cols += [f"objective_h{_tag(h)}", f"log10_objective_h{_tag(h)}"]
    rows = []
    for k in range(n):
        row = [k + 1]
        for hh in hists:
            v = hh[min(k, len(hh) - 1)] if hh else (None, None)
            row += list(v)
        rows.append(tuple(row))
    table = ResultTable(tuple(cols), rows, [sum(times)] * len(rows))
    table.meta["status"] = dict(zip(heights, statuses))
    return table


def _tag(h):
    return format_number(float(h)).rstrip("0").rstrip(".") if float(h) != int(h) else str(int(h))


# plot output -------------------------------------------------------------

def emit_plot_data(table: ResultTable, fmt: str, path, x=None, y=None, series=None, include_time=False) -> Path:
    """Write ``table`` as CSV or a minimal SVG line chart.

    For SVG, ``x`` names the abscissa column (default: first column), ``y``
    the value columns (default: every ``log10_*`` column, or every column
    whose name starts with ``objective`` otherwise) and ``series`` an
    optional grouping column (one line per distinct value).  Probability
    columns are plotted on a log10 axis.
    """
    if not len(table):
        raise InvalidInput("cannot emit plot data for an empty table")
    path = Path(path)
    if fmt == "csv":
        text = table.to_csv(include_time)
    elif fmt == "svg-lines":
        text = _svg(table, x, y, series)
    else:
        raise InvalidInput(f"format must be 'csv' or 'svg-lines', got {fmt!r}")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as exc:
        raise OSError(f"cannot write plot data to {path}: {exc}") from exc
    return path


def _log10_point(v, log_column):
    if v is None:
        return None
    if log_column:
        f = float(v)
        return f if math.isfinite(f) else None
    v = np.longdouble(v)
    if not v > 0:
        return None
    f = float(np.log10(v))
    return f if math.isfinite(f) else None


def _svg(table, x, y, series, width=640, height=400, pad=60):
    cols = table.columns
    x = x or cols[0]
    if y is None:
        y = [c for c in cols if c.startswith("log10_")] or [c for c in cols if c.startswith("objective")]
    elif isinstance(y, str):
        y = [y]
    lines = []
    xi = cols.index(x)
    groups = sorted({r[cols.index(series)] for r in table.rows}, key=str) if series else [None]
    for yc in y:
        yi = cols.index(yc)
        log_col = yc.startswith("log10_")
        for g in groups:
            pts = []
            for r in table.rows:
                if series and r[cols.index(series)] != g:
                    continue
                py = _log10_point(r[yi], log_col)
                if py is not None and r[xi] is not None:
                    pts.append((float(r[xi]), py))
            if pts:
                label = yc if g is None else f"{yc} [{g}]"
                lines.append((label if log_col else f"log10 {label}", pts))
    if not lines:
        raise InvalidInput("no finite points to plot")
    xs = [p[0] for _, pts in lines for p in pts]
    ys = [p[1] for _, pts in lines for p in pts]
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def sx(v):
        return pad + (v - x0) / (x1 - x0) * (width - 2 * pad)

    def sy(v):
        return height - pad - (v - y0) / (y1 - y0) * (height - 2 * pad)

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="{height - 15}" text-anchor="middle">{escape(x)}</text>',
        f'<text x="15" y="{height / 2:.1f}" transform="rotate(-90 15 {height / 2:.1f})" text-anchor="middle">log10 probability</text>',
        f'<text x="{pad - 5}" y="{height - pad:.1f}" text-anchor="end" font-size="10">{y0:.4g}</text>',
        f'<text x="{pad - 5}" y="{pad:.1f}" text-anchor="end" font-size="10">{y1:.4g}</text>',
        f'<text x="{pad:.1f}" y="{height - pad + 15:.1f}" text-anchor="middle" font-size="10">{x0:.4g}</text>',
        f'<text x="{width - pad:.1f}" y="{height - pad + 15:.1f}" text-anchor="middle" font-size="10">{x1:.4g}</text>',
    ]
    palette = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#7f7f7f")
    for k, (label, pts) in enumerate(lines):
        colour = palette[k % len(palette)]
        coords = " ".join(f"{sx(a):.3f},{sy(b):.3f}" for a, b in pts)
        attr = escape(label, {'"': "&quot;"})
        out.append(f'<polyline fill="none" stroke="{colour}" points="{coords}" data-label="{attr}"/>')
        out.append(f'<text x="{width - pad + 5}" y="{pad + 14 * k + 10}" fill="{colour}" font-size="10">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
