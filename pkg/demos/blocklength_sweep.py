"""Sweep the total blocklength M and write CSV + SVG curves to an output directory.

Usage: python3 demos/blocklength_sweep.py [OUT_DIR]
"""
import sys
from pathlib import Path

from uavnoma.config import default_scenario
from uavnoma.experiments import SweepSpec, emit_plot_data, run_sweep


def main():
    out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_out")
    spec = SweepSpec("m_total", (100, 150, 200, 250), ("joint", "fixed-location", "fixed-power", "oma"))
    table = run_sweep(spec, default_scenario())
    emit_plot_data(table, "csv", out / "m_sweep.csv")
    emit_plot_data(table, "svg-lines", out / "m_sweep.svg", x="value", y="log10_objective", series="scheme")
    for row in table.rows:
        print(f"M={row[1]:>4}  {row[2]:15s} log10 objective {row[7]:.2f}")
    print(f"wrote {out / 'm_sweep.csv'} and {out / 'm_sweep.svg'}")


if __name__ == "__main__":
    main()
