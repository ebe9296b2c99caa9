"""Resource-stress trend: as CPU contention and transfer sizes grow together,
the advantage of model-driven selection over greedy first-encounter selection
should widen level by level.

Run:  python demos/stress_trend.py            (1 replication, ~1 min)
      python demos/stress_trend.py --seeds 5  (full 5-replication check)
"""

import argparse
import sys

from oppsim.experiments import run_matrix, stress_levels


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seeds", type=int, default=1,
                        help="replications per level (default 1)")
    args = parser.parse_args()

    seeds = tuple(range(1, args.seeds + 1))
    gaps = []
    print(f"{'cpu m_max':>9} {'io size':>9} {'MEV [s]':>9} {'AFIR [s]':>9} "
          f"{'gap [s]':>9}")
    for cfg in stress_levels(seeds=seeds):
        rows = run_matrix(
            cfg, progress=lambda msg: print(f"  {msg}", file=sys.stderr))
        per_policy = {}
        for r in rows:
            t = r.provisioning_time()
            if t is not None:
                per_policy.setdefault((r.seed, r.policy), []).append(t)
        mev = sum(
            sum(v) / len(v)
            for (s, p), v in per_policy.items() if p == "mev") / len(seeds)
        afir = sum(
            sum(v) / len(v)
            for (s, p), v in per_policy.items() if p == "afir") / len(seeds)
        gaps.append(afir - mev)
        print(f"{cfg.cpu_m_max:>9} {cfg.io_size_bytes/1000:>7.0f}KB "
              f"{mev:>9.1f} {afir:>9.1f} {afir-mev:>9.1f}")

    trend = " -> ".join(f"{g:.1f}" for g in gaps)
    widening = all(a < b for a, b in zip(gaps, gaps[1:]))
    print()
    print(f"gap trend: {trend} s  ({'widening' if widening else 'NOT widening'})")


if __name__ == "__main__":
    main()
