#!/usr/bin/env python3
"""Profile every model variant at one resolution and print a summary row each.

Example:
    python scripts/profile_models.py --resolution 256x256 --warmup 5 --runs 10
"""

import argparse

from pyraflow.bench import profile_model
from pyraflow.model import VARIANTS


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--resolution", default="256x256")
    ap.add_argument("--warmup", type=int, default=5)
    ap.add_argument("--runs", type=int, default=10)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    h, w = (int(p) for p in args.resolution.lower().split("x"))

    print(f"{'model':<16}{'params':>10}{'GMAC/fwd':>10}{'plan MB':>9}"
          f"{'mean ms':>9}{'std':>7}{'p95':>8}")
    for variant in VARIANTS:
        rep = profile_model(variant, (h, w), warmup=args.warmup, runs=args.runs,
                            seed=args.seed)
        print(f"{variant:<16}{rep.params['total'] / 1e6:>9.2f}M"
              f"{rep.macs['forward_total'] / 1e9:>10.2f}"
              f"{rep.planned_peak_memory_bytes / 2**20:>9.0f}"
              f"{rep.latency.mean_ms:>9.1f}{rep.latency.std_ms:>7.1f}"
              f"{rep.latency.p95_ms:>8.1f}")


if __name__ == "__main__":
    main()
