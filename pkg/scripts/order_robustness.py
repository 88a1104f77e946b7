"""Final F1 of one variant under the WE, NS and RANDOM survey orderings.

    python3 scripts/order_robustness.py --variant oc-density
"""
import argparse

import numpy as np

from onlineclust.engine import EngineConfig
from onlineclust.experiment import run_stream
from onlineclust.streams import SynthConfig, order_stream, synth_generate

PROPORTIONS = (0.4, 0.25, 0.2, 0.1, 0.05)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--variant", default="oc-density")
    p.add_argument("--n-points", type=int, default=20000)
    p.add_argument("--d", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    args = p.parse_args()

    obs = synth_generate(SynthConfig(n_classes=5, n_points=args.n_points, class_proportions=PROPORTIONS,
                                     d=args.d, seed=args.seed))
    scores = []
    for ordering in ("WE", "NS", "RANDOM"):
        res = run_stream(order_stream(obs, ordering, seed=args.seed),
                         EngineConfig(dim=args.d, variant=args.variant, seed=args.seed),
                         track_f1=False, n_classes=5)
        scores.append(res.report.f1)
        print(f"{ordering:6s} F1 {res.report.f1:.4f}")
    print(f"mean {np.mean(scores):.4f}  population std {np.std(scores):.4f}")


if __name__ == "__main__":
    main()
