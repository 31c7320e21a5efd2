"""Shared desk-scale preset for the experiment scripts."""

import argparse

from spl_nmt import config as C

PRESET = {"total_steps": 1500, "eval_every": 100, "eval_bleu": False, "track_slc": False}


def parser(description: str) -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(description=description)
    p.add_argument("--out", required=True, help="output directory (runs are cached inside)")
    p.add_argument("--steps", type=int, default=PRESET["total_steps"])
    p.add_argument("--set", nargs="*", default=[], metavar="KEY=VALUE",
                   help="extra config overrides, e.g. task.noise_prob=0.2")
    return p


def base_config(args, **extra) -> C.RunConfig:
    values = {**PRESET, "total_steps": args.steps, **extra}
    for item in args.set:
        key, _, text = item.partition("=")
        values[key] = C.parse_value(key, text)
    return C.build(values)
