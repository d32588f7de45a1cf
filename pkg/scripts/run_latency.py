#!/usr/bin/env python3
"""End-to-end latency of serial pipelines of latency stubs: the default
3x30 ms chain plus a few other shapes, with the handoff overhead broken
out."""

import sys

from champ.experiments import run_latency


def main() -> int:
    failed = False
    for means in ([30, 30, 30], [30], [10, 20, 30, 40], []):
        report = run_latency(means, frames=200)
        m = report.metrics
        label = "+".join(str(x) for x in means) or "(empty)"
        print(f"{label:>14}: mean {m['mean_latency_ms']:7.2f} ms  "
              f"(stage sum {m['stage_sum_ms']:.0f} ms, handoff {m['handoff_ms']:.1f} ms)")
        failed = failed or not report.passed
    return 1 if failed else 0


if __name__ == "__main__":
    sys.exit(main())
