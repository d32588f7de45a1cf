#!/usr/bin/env python3
"""Scripted hot-swap cycle: pull the middle quality stage at t=5 s,
reinsert it at t=15 s, and account for every frame."""

import sys

from champ.experiments import run_hotswap

SCRIPT = {
    "events": [
        {"at_ms": 5000, "kind": "remove", "slot": 1},
        {"at_ms": 15000, "kind": "insert", "slot": 1, "preset": "face-quality"},
    ]
}


def main() -> int:
    report = run_hotswap(SCRIPT)
    m = report.metrics
    print(f"pauses: {m['pauses_ms']} ms")
    print(f"frames: accepted {m['frames_accepted']}, delivered {m['frames_delivered']}, "
          f"lost {m['frames_lost']}")
    print("post-swap trails:")
    for trail, count in m["post_swap_trail_histogram"].items():
        print(f"  {trail}: {count}")
    for exp in report.expectations:
        print(f"[{'PASS' if exp.passed else 'FAIL'}] {exp.check}")
    return 0 if report.passed else 1


if __name__ == "__main__":
    sys.exit(main())
