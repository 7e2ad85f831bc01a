"""Objective per outer iteration at three UAV heights, printed as a table.

Usage: python3 demos/convergence.py
"""
from uavnoma.config import default_scenario
from uavnoma.experiments import run_convergence


def main():
    heights = (80.0, 100.0, 120.0)
    table = run_convergence(default_scenario(), heights)
    print("iteration  " + "  ".join(f"H={h:g} m".rjust(12) for h in heights))
    for row in table.rows:
        logs = row[2::2]
        print(f"{row[0]:9d}  " + "  ".join(f"{v:12.2f}" for v in logs))
    print("status:", table.meta["status"])


if __name__ == "__main__":
    main()
