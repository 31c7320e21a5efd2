"""Per-length-tercile mean sentence confidence, SPL model over a vanilla model."""

import csv
from pathlib import Path

from _preset import base_config, parser
from spl_nmt.harness import Runner, tercile_tracking


def main():
    p = parser(__doc__)
    p.add_argument("--task", default="copy", help="task kind for this experiment")
    args = p.parse_args()
    out = Path(args.out)
    cfg = base_config(args, **{"task.kind": args.task, "track_slc": True})
    ratios = tercile_tracking(cfg, Runner(out / "runs"))
    rows = list(zip(ratios["step"], ratios["slc_short"], ratios["slc_med"], ratios["slc_long"]))
    with open(out / "tercile_ratios.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "short", "medium", "long"))
        w.writerows(rows)
    for step, *r in rows:
        print(f"step {step:5d}: " + "  ".join(f"{x:.4f}" for x in r))


if __name__ == "__main__":
    main()
