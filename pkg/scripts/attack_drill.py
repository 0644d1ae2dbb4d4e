#!/usr/bin/env python3
"""Run every fault scenario over a batch of seeds and tally the rejections.

Exit status is 0 only if every injected delivery was rejected with the
designated error in every trial.
"""

import argparse
import sys
from collections import Counter

from pqbfl.harness import SimConfig, run_simulation

PLANS = {
    "replay": dict(participants=1, rounds=2, replay_attack=True),
    "tamper": dict(participants=1, rounds=2, tamper_attack=True),
    "mitm_key_swap": dict(participants=1, rounds=1, mitm_key_swap=True),
    "free_ride": dict(participants=2, rounds=2, free_ride=True),
}


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=25)
    ap.add_argument("--ratchet-range", type=int, default=5)
    args = ap.parse_args()

    all_ok = True
    for scenario, plan in PLANS.items():
        outcomes: Counter[str] = Counter()
        rejected = 0
        injected = 0
        for seed in range(args.trials):
            cfg = SimConfig(ratchet_range=args.ratchet_range, seed=seed, **plan)
            m = run_simulation(cfg)
            for a in m.attacks:
                injected += 1
                outcomes[a.outcome] += 1
                rejected += a.rejected
        ok = injected >= args.trials and rejected == injected
        all_ok = all_ok and ok
        summary = ", ".join(f"{name} x{n}" for name, n in sorted(outcomes.items()))
        print(
            f"{scenario:<14} {rejected}/{injected} rejected"
            f" ({summary}) {'ok' if ok else 'FAILED'}"
        )
    return 0 if all_ok else 1


if __name__ == "__main__":
    sys.exit(main())
