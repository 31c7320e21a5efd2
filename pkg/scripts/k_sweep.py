"""Best and early-checkpoint accuracy of SPL training across the exponent k."""

import csv
from pathlib import Path

import numpy as np

from _preset import base_config, parser
from spl_nmt.harness import Runner, k_sweep


def main():
    p = parser(__doc__)
    p.add_argument("--ks", type=float, nargs="+", default=[-3, -2, -1, 0, 1, 2, 3])
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--early", type=int, default=500, help="early checkpoint step")
    args = p.parse_args()
    out = Path(args.out)
    seeds = list(range(args.seeds))
    res = k_sweep(base_config(args), args.ks, seeds, Runner(out / "runs"))
    with open(out / "k_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("k", "step", "token_acc"))
        w.writerows(res["table"])
    print(f"{'k':>5} {'best':>14} {'step ' + str(args.early):>14}")
    for k in args.ks:
        runs = [res["runs"][(float(k), s)] for s in seeds]
        best = [max(r.token_acc for r in run) for run in runs]
        early = [next(r.token_acc for r in run if r.step == args.early) for run in runs]
        print(f"{k:>+5g} {np.mean(best):.4f}+-{np.std(best):.4f} {np.mean(early):.4f}+-{np.std(early):.4f}")


if __name__ == "__main__":
    main()
