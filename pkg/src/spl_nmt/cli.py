"""Command-line entry point.

Every ``RunConfig`` field is available as a dotted flag (``--confidence.k 2``,
``--task.kind copy``). Values from ``--config FILE`` are applied first and
flags override them. Exit status: 0 success, 1 configuration error, 2 numeric
failure.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import config as C
from . import harness as H
from .config import ConfigError
from .harness import NumericFailure
from .metrics import evaluate
from .model import load_checkpoint

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2
_PREFIX = "cfg:"


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors; here 2 means a numeric failure
    def error(self, message):
        raise ConfigError(message)


def _int_list(text: str) -> list[int]:
    return [int(x) for x in text.split(",") if x.strip()]


def _float_list(text: str) -> list[float]:
    return [float(x) for x in text.split(",") if x.strip()]


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="flat 'key = value' file")
    g = p.add_argument_group("run config (override --config)")
    for key in C.FIELD_TYPES:
        g.add_argument(f"--{key}", dest=_PREFIX + key, metavar="V", default=argparse.SUPPRESS)


def _run_config(args: argparse.Namespace) -> C.RunConfig:
    flags = {k[len(_PREFIX):]: C.parse_value(k[len(_PREFIX):], v)
             for k, v in vars(args).items() if k.startswith(_PREFIX)}
    if args.config is not None:
        if not args.config.exists():
            raise ConfigError(f"config file {args.config} does not exist")
        return C.load(args.config, flags)
    return C.build(flags)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="spl-nmt", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("train", help="one training run")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--diagnostics", action="store_true", help="per-step confidence.csv (SPL only)")
    p.add_argument("--save-params", action="store_true")

    p = sub.add_parser("converge", help="vanilla versus SPL over seeds")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--seeds", type=_int_list, default=[0, 1, 2, 3, 4])

    p = sub.add_parser("k-sweep", help="SPL runs over a grid of k")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--ks", type=_float_list, default=[-3, -2, -1, 0, 1, 2, 3])
    p.add_argument("--seeds", type=_int_list, default=[0])

    p = sub.add_parser("tercile-track", help="per-length-tercile SLC ratio, SPL over vanilla")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("bucket-sweep", help="vanilla and SPL over bucket counts")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--counts", type=_int_list, default=[5, 10, 20, 40, 72])
    p.add_argument("--seeds", type=_int_list, default=[0])

    p = sub.add_parser("eval", help="evaluate a saved checkpoint on the held-out set")
    _add_config_flags(p)
    p.add_argument("--checkpoint", type=Path, required=True)
    return parser


def _write_rows(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def cmd_train(args, cfg) -> None:
    result = H.train(cfg, args.out, diagnostics=args.diagnostics, save_params=args.save_params)
    print(H.summary_text(result), end="")


def cmd_converge(args, cfg) -> None:
    res = H.convergence(cfg, args.seeds, H.Runner(args.out / "runs"))
    rows = [(s, t, vs, ps, r) for s, t, vs, ps, r in
            zip(res.seeds, res.target, res.vanilla_steps, res.spl_steps, res.ratios)]
    _write_rows(args.out / "convergence.csv",
                ("seed", "target", "vanilla_steps", "spl_steps", "ratio"), rows)
    for row in rows:
        print("seed %d  target %.4f  vanilla %s  spl %s  ratio %.3f" % row)


def cmd_k_sweep(args, cfg) -> None:
    out = H.k_sweep(cfg, args.ks, args.seeds, H.Runner(args.out / "runs"))
    _write_rows(args.out / "k_sweep.csv", ("k", "step", "token_acc"), out["table"])
    for k in args.ks:
        best = max(v for kk, _, v in out["table"] if kk == float(k))
        print(f"k = {k:+g}  best mean token_acc = {best:.4f}")


def cmd_tercile(args, cfg) -> None:
    out = H.tercile_tracking(cfg, H.Runner(args.out / "runs"))
    rows = list(zip(out["step"], out["slc_short"], out["slc_med"], out["slc_long"]))
    _write_rows(args.out / "tercile_ratios.csv", ("step", "short", "medium", "long"), rows)
    print("final ratios short %.4f medium %.4f long %.4f" % rows[-1][1:])


def cmd_bucket_sweep(args, cfg) -> None:
    rows = H.bucket_sweep(cfg, args.counts, args.seeds, H.Runner(args.out / "runs"))
    _write_rows(args.out / "bucket_sweep.csv", ("method", "bucket_count", "token_acc"), rows)
    for method in ("vanilla", "spl"):
        print(f"{method}: spread {H.spread(rows, method):.4f}")


def cmd_eval(args, cfg) -> None:
    if args.config is None:
        saved = args.checkpoint.parent / "run_config.txt"
        if saved.exists():
            cfg = C.build({k[len(_PREFIX):]: C.parse_value(k[len(_PREFIX):], v)
                           for k, v in vars(args).items() if k.startswith(_PREFIX)},
                          base=C.load(saved))
    params = load_checkpoint(args.checkpoint)
    if params.config.vocab_size_tgt != cfg.task.model_vocab:
        raise ConfigError("checkpoint vocabulary does not match the task")
    acc, bleu = evaluate(params, H.held_out_set(cfg), with_bleu=cfg.eval_bleu)
    print(f"token_acc = {acc!r}")
    print(f"bleu = {bleu!r}")


COMMANDS = {"train": cmd_train, "converge": cmd_converge, "k-sweep": cmd_k_sweep,
            "tercile-track": cmd_tercile, "bucket-sweep": cmd_bucket_sweep, "eval": cmd_eval}


def main(argv: list[str] | None = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(asctime)s %(name)s %(message)s")
        cfg = _run_config(args)
        COMMANDS[args.command](args, cfg)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except NumericFailure as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
