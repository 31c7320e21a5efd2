"""Steps for vanilla and SPL training to reach 98% of vanilla's best accuracy."""

import csv
from pathlib import Path

import numpy as np

from _preset import base_config, parser
from spl_nmt.harness import Runner, convergence


def main():
    p = parser(__doc__)
    p.add_argument("--seeds", type=int, default=5)
    args = p.parse_args()
    out = Path(args.out)
    res = convergence(base_config(args), range(args.seeds), Runner(out / "runs"))
    with open(out / "curves.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("seed", "method", "step", "token_acc"))
        for s, v, sp in zip(res.seeds, res.vanilla, res.spl):
            w.writerows((s, "vanilla", r.step, r.token_acc) for r in v)
            w.writerows((s, "spl", r.step, r.token_acc) for r in sp)
    for s, vs, ps, r in zip(res.seeds, res.vanilla_steps, res.spl_steps, res.ratios):
        print(f"seed {s}: vanilla {vs:.0f} steps, spl {ps:.0f} steps, ratio {r:.3f}")
    print(f"mean ratio {np.mean(res.ratios):.3f} +- {np.std(res.ratios):.3f}")


if __name__ == "__main__":
    main()
