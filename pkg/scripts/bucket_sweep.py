"""Final accuracy of vanilla and SPL training across bucket counts."""

import csv
from pathlib import Path

from _preset import base_config, parser
from spl_nmt.harness import Runner, bucket_sweep, spread


def main():
    p = parser(__doc__)
    p.add_argument("--counts", type=int, nargs="+", default=[5, 10, 20, 40, 72])
    p.add_argument("--seeds", type=int, default=3)
    args = p.parse_args()
    out = Path(args.out)
    rows = bucket_sweep(base_config(args), args.counts, list(range(args.seeds)), Runner(out / "runs"))
    with open(out / "bucket_sweep.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("method", "bucket_count", "token_acc"))
        w.writerows(rows)
    for method, n, v in rows:
        print(f"{method:8s} {n:3d} {v:.4f}")
    print(f"spread: vanilla {spread(rows, 'vanilla'):.4f}, spl {spread(rows, 'spl'):.4f}")


if __name__ == "__main__":
    main()
