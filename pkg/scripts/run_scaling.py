#!/usr/bin/env python3
"""Throughput scaling across 1..5 simulated accelerators, both device
families, printed as a table next to the reference columns."""

import sys

from champ.experiments import load_expectations, run_scaling


def main() -> int:
    expectations = load_expectations()["scaling"]
    failed = False
    for name in ("ncs2", "coral"):
        report = run_scaling(name, frames=300)
        fit = report.metrics["fit"]
        print(f"\n{name}: t_compute={fit['t_compute_ms']:.2f} ms, "
              f"t_host={fit['t_host_ms']:.2f} ms, t_contend={fit['t_contend_ms']:.2f} ms "
              f"(rms {fit['rms_ms']:.2f} ms)")
        print("  n   simulated   reference")
        reference = expectations["columns"][name]
        for n in range(1, 6):
            measured = report.metrics["fps_by_n"][str(n)]
            print(f"  {n}   {measured:8.2f}   {reference[str(n)]:9d}")
        failed = failed or not report.passed
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
