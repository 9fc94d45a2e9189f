#!/usr/bin/env python3
"""Sweep success rate vs loss probability, measured against the
analytic model: one attempt succeeds iff the poll and its response both
survive, so P(read) = 1 - (1 - (1-p)^2)^A for A attempts.

Usage: python scripts/retry_success_curve.py [meters] [attempts]
"""

import sys

sys.path.insert(0, "src")

from amrsim.scenario import ScenarioConfig, build_world  # noqa: E402


def main() -> None:
    meters = int(sys.argv[1]) if len(sys.argv) > 1 else 20_000
    attempts = int(sys.argv[2]) if len(sys.argv) > 2 else 3
    print(f"{meters} meters per point, {attempts} attempts")
    print(f"{'loss':>6} {'measured':>10} {'analytic':>10} {'delta':>9}")
    for loss in (0.0, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 1.0):
        cfg = ScenarioConfig(seed=1000 + int(loss * 100), meters=meters,
                             loss=loss, max_attempts=attempts,
                             placement="grid", spacing=15, workload="none")
        world = build_world(cfg)
        rep = world.headend.sweep_now()
        measured = rep.read_count / rep.attempted
        analytic = 1 - (1 - (1 - loss) ** 2) ** attempts
        print(f"{loss:>6.2f} {measured:>10.6f} {analytic:>10.6f}"
              f" {measured - analytic:>+9.6f}")


if __name__ == "__main__":
    main()
