"""Audit every hand-derived gradient against central differences.

All backprop in this package is written out by hand, so each component ships
with a finite-difference harness: perturb one coordinate at a time, compare
(f(x+h) - f(x-h)) / 2h with the analytic value. This script runs the full
audit, then corrupts one gradient on purpose to show the harness would catch
a bad derivative.
"""
from __future__ import annotations

from domainbalance import gradcheck


def main():
    print(f"components: {', '.join(gradcheck.COMPONENTS)}")
    print(f"tolerance: {gradcheck.TOLERANCE:g} relative, 5 seeds each\n")

    rows, all_ok = gradcheck.run_all(num_seeds=5, base_seed=0)
    for name, worst, ok in rows:
        print(f"  {name:>8}: max rel err {worst:.3e}  {'ok' if ok else 'BAD'}")
    print(f"clean run passes: {all_ok}")

    # negative control: add 1e-3 to one analytic entry of the dbm gradient
    err = gradcheck.run_component("dbm", seed=0, perturb=True)
    print(f"\nwith a planted 1e-3 error in the dbm gradient: rel err {err:.3e}"
          f" -> {'caught' if err > gradcheck.TOLERANCE else 'MISSED'}")


if __name__ == "__main__":
    main()
