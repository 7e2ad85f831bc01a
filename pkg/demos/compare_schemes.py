"""Solve the default scenario with every scheme and print a comparison table.

Usage: python3 demos/compare_schemes.py [--seed N]
"""
import argparse
import time

from uavnoma.baselines import SCHEMES, run_scheme
from uavnoma.config import default_scenario, rayleigh_direct_link


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--seed", type=int, help="draw the direct link from a seeded Rayleigh distribution")
    args = ap.parse_args()
    sc = default_scenario()
    link = sc.link if args.seed is None else rayleigh_direct_link(sc.params, sc.geometry, args.seed)
    print(f"{'scheme':16s} {'status':20s} {'iters':>5s} {'log10 obj':>11s}  allocation")
    for scheme in SCHEMES:
        t0 = time.perf_counter()
        rep = run_scheme(scheme, sc.params, sc.geometry, link, sc.solver)
        dt = time.perf_counter() - t0
        if rep.allocation is None:
            print(f"{scheme:16s} {rep.status.value:20s} {'':>5s} {'':>11s}  {rep.message}")
            continue
        a = rep.allocation
        print(
            f"{scheme:16s} {rep.status.value:20s} {rep.outer_iterations:5d} {rep.log10_objective:11.2f}  "
            f"p=({a.pw.p1:.3g}, {a.pw.p2:.3g}, {a.pw.pu:.3g}) W  m=({a.m.m_p1}, {a.m.m_p2})  "
            f"q=({a.q[0]:.1f}, {a.q[1]:.1f})  [{dt:.1f} s]"
        )


if __name__ == "__main__":
    main()
