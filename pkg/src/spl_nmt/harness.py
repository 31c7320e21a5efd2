"""Training loop and experiment drivers."""

from __future__ import annotations

import csv
import hashlib
import logging
import math
import time
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from . import config as C
from . import tensor as T
from .config import RunConfig
from .confidence import ConfidenceConfig, DiagnosticWriter, confidence_weights, mc_forward, slc
from .curriculum import DifficultyTable, admissible_sampler
from .data import (Pair, SyntheticTask, batch_iterator, clean_reference, generate_corpus,
                   make_batch, make_bucket_plan)
from .loss import spl_loss, vanilla_loss
from .metrics import evaluate
from .model import (N_SPECIAL, Batch, ModelParams, Stochastic, counters, forward_logprobs,
                    init_params, save_checkpoint)
from .optim import Adam

log = logging.getLogger(__name__)

METRICS_HEADER = ("step", "train_loss", "token_acc", "bleu", "wall_ms",
                  "slc_short", "slc_med", "slc_long")

PROBE_STREAM = 2


class NumericFailure(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class MetricsRecord:
    step: int
    train_loss: float
    token_acc: float
    bleu: float
    wall_ms: float
    slc_short: float = math.nan
    slc_med: float = math.nan
    slc_long: float = math.nan

    def row(self) -> list[str]:
        # wall_ms stays blank so metrics.csv is a pure function of the config;
        # measured times go to timing.csv
        vals = [self.step, self.train_loss, self.token_acc, self.bleu, math.nan,
                self.slc_short, self.slc_med, self.slc_long]
        return [str(v) if isinstance(v, int) else ("" if math.isnan(v) else repr(float(v)))
                for v in vals]


@dataclass
class StepCost:
    forward: int
    backward: int
    decode: int


@dataclass
class TrainResult:
    config: RunConfig
    params: ModelParams
    metrics: list[MetricsRecord]
    step_costs: list[StepCost] = field(default_factory=list)
    train_wall_ms: float = 0.0

    def series(self, name: str = "token_acc") -> np.ndarray:
        return np.array([getattr(r, name) for r in self.metrics])

    @property
    def steps(self) -> np.ndarray:
        return self.series("step")


# ---------------------------------------------------------------------------
# data set-up


def held_out_set(cfg: RunConfig) -> list[Pair]:
    """Clean evaluation pairs from a disjoint corpus stream sharing the task mapping."""
    task = cfg.task
    ev = replace(task, noise_prob=0.0, corpus_size=cfg.eval_size, seed=task.seed + 1_000_003)
    pairs = generate_corpus(ev, mapping_seed=task.seed)
    return [(s, clean_reference(task, s)) for s, _ in pairs]


def probe_set(corpus: Sequence[Pair], size: int, seed: int) -> tuple[list[int], np.ndarray]:
    """Random training examples and their length tercile (0 short, 1 medium, 2 long)."""
    rng = np.random.default_rng([seed, 4])
    ids = rng.choice(len(corpus), size=min(size, len(corpus)), replace=False)
    ids = sorted(ids.tolist(), key=lambda i: (len(corpus[i][1]), i))
    terciles = np.repeat(np.arange(3), np.diff(np.linspace(0, len(ids), 4).round().astype(int)))
    return ids, terciles


def tercile_slc(params: ModelParams, corpus: Sequence[Pair], probe_ids: Sequence[int],
                terciles: np.ndarray, cfg: RunConfig, step: int) -> tuple[float, float, float]:
    """Mean raw sentence confidence per length tercile of the probe set.

    Dropout seeds depend on (run seed, step) only, so two runs with the same
    seed see the same masks at every checkpoint.
    """
    batch = make_batch(corpus, probe_ids)
    samples = mc_forward(params, batch, cfg.confidence, (cfg.seed, step, PROBE_STREAM))
    raw, _ = slc(samples, cfg.confidence.k)
    return tuple(float(raw[terciles == t].mean()) if np.any(terciles == t) else math.nan
                 for t in range(3))


# ---------------------------------------------------------------------------
# training


def train_seed(seed: int, step: int) -> tuple[int, ...]:
    return (seed, step, 0)


def _batches(cfg: RunConfig, corpus: Sequence[Pair]) -> Callable[[int], Batch]:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        plan = make_bucket_plan(corpus, cfg.bucket_count)
    stream = batch_iterator(corpus, plan, cfg.batch_size_tokens, cfg.seed)
    if cfg.method not in ("cl_sl", "cl_wr"):
        return lambda step: next(stream)
    vocab = range(N_SPECIAL, N_SPECIAL + cfg.task.vocab_size)
    table = DifficultyTable.build(corpus, vocab)
    measure = cfg.method.split("_")[1]
    rng = np.random.default_rng([cfg.seed, 3])

    def draw(step: int) -> Batch:
        # past full competence the curriculum is plain bucketed training
        if step > cfg.schedule.T:
            return next(stream)
        ids = admissible_sampler(table, cfg.schedule, step - 1, rng, cfg.batch_size_tokens, measure)
        return make_batch(corpus, ids)

    return draw


def _dump_failure(out_dir: Path | None, step: int, batch: Batch, weights) -> None:
    if out_dir is None:
        return
    arrays = {"step": np.array(step), "src": batch.src, "tgt": batch.tgt}
    if weights is not None:
        arrays.update(alpha=weights.alpha, beta=weights.beta,
                      raw_alpha=weights.raw_alpha, raw_beta=weights.raw_beta)
    np.savez(out_dir / "nan_dump.npz", **arrays)


def train(cfg: RunConfig, out_dir: str | Path | None = None,
          diagnostics: bool = False, save_params: bool = False) -> TrainResult:
    """Run one training job; writes run files when ``out_dir`` is given."""
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        (out / "run_config.txt").write_text(C.dumps(cfg))

    corpus = generate_corpus(cfg.task)
    held_out = held_out_set(cfg)
    draw = _batches(cfg, corpus)
    params = init_params(cfg.model, cfg.seed)
    opt = Adam(params, cfg.optimizer)
    probe_ids, terciles = probe_set(corpus, cfg.probe_size, cfg.seed)
    conf_cfg = ConfidenceConfig(cfg.confidence.M, cfg.confidence.k,
                                cfg.loss.granularity or cfg.confidence.granularity)
    diag = DiagnosticWriter(out / "confidence.csv") if (diagnostics and out and cfg.is_spl) else None

    metrics: list[MetricsRecord] = []
    costs: list[StepCost] = []
    timing: list[tuple[int, float]] = []
    losses: list[float] = []
    train_ms = 0.0

    def checkpoint(step: int) -> None:
        acc, bleu = evaluate(params, held_out, with_bleu=cfg.eval_bleu)
        tl = float(np.mean(losses)) if losses else math.nan
        losses.clear()
        slc3 = (math.nan,) * 3
        if cfg.track_slc and probe_ids:
            slc3 = tercile_slc(params, corpus, probe_ids, terciles, cfg, step)
        metrics.append(MetricsRecord(step, tl, acc, bleu, train_ms, *slc3))
        timing.append((step, train_ms))
        log.info("step %d loss %.4f acc %.4f bleu %.2f", step, tl, acc, bleu)

    try:
        checkpoint(0)
        for step in range(1, cfg.total_steps + 1):
            t0 = time.perf_counter()
            fwd0, dec0 = counters.snapshot()
            batch = draw(step)
            weights = None
            if cfg.is_spl:
                samples = mc_forward(params, batch, conf_cfg, (cfg.seed, step))
                try:
                    weights = confidence_weights(samples, conf_cfg.k, conf_cfg.granularity)
                except T.NumericError as exc:
                    _dump_failure(out, step, batch, None)
                    raise NumericFailure(f"step {step}: {exc}") from exc
                if diag:
                    diag.write(step, samples, weights)
            params.zero_grad()
            with T.Tape() as tape:
                logprobs = forward_logprobs(params, batch, Stochastic(train_seed(cfg.seed, step)))
                loss = spl_loss(logprobs, batch, weights, cfg.loss) if cfg.is_spl else vanilla_loss(logprobs, batch)
            value = float(loss.values)
            if not math.isfinite(value):
                _dump_failure(out, step, batch, weights)
                raise NumericFailure(f"non-finite loss at step {step}")
            tape.backward(loss)
            opt.step()
            fwd1, dec1 = counters.snapshot()
            costs.append(StepCost(fwd1 - fwd0, tape.backward_calls, dec1 - dec0))
            losses.append(value)
            train_ms += (time.perf_counter() - t0) * 1000.0
            if step % cfg.eval_every == 0 or step == cfg.total_steps:
                checkpoint(step)
    finally:
        if diag:
            diag.close()

    result = TrainResult(cfg, params, metrics, costs, train_ms)
    if out is not None:
        write_metrics(metrics, out / "metrics.csv")
        with open(out / "timing.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(("step", "wall_ms"))
            w.writerows((s, f"{ms:.1f}") for s, ms in timing)
        (out / "summary.txt").write_text(summary_text(result))
        if save_params:
            save_checkpoint(params, out / "checkpoint.npz")
    return result


def write_metrics(metrics: Iterable[MetricsRecord], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(METRICS_HEADER)
        for r in metrics:
            w.writerow(r.row())


def read_metrics(path: str | Path) -> list[MetricsRecord]:
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            vals = {k: (float(v) if v != "" else math.nan) for k, v in row.items()}
            vals["step"] = int(vals["step"])
            out.append(MetricsRecord(**vals))
    return out


# ---------------------------------------------------------------------------
# summaries


def steps_to_reach(steps: np.ndarray, values: np.ndarray, target: float) -> float:
    """First checkpoint step whose value reaches ``target``; inf if none does."""
    hit = np.flatnonzero(values >= target)
    return float(steps[hit[0]]) if len(hit) else math.inf


def acceleration_ratio(baseline: TrainResult | Sequence[MetricsRecord],
                       candidate: TrainResult | Sequence[MetricsRecord],
                       metric: str = "token_acc", fraction: float = 0.98) -> float:
    """Baseline steps over candidate steps to first reach ``fraction`` of the
    baseline's best value. Zero when the candidate never gets there."""
    b = baseline.metrics if isinstance(baseline, TrainResult) else baseline
    c = candidate.metrics if isinstance(candidate, TrainResult) else candidate
    bs, bv = np.array([r.step for r in b]), np.array([getattr(r, metric) for r in b])
    cs, cv = np.array([r.step for r in c]), np.array([getattr(r, metric) for r in c])
    target = fraction * np.nanmax(bv)
    sb, sc = steps_to_reach(bs, bv, target), steps_to_reach(cs, cv, target)
    if math.isinf(sc):
        return 0.0
    return sb / max(sc, 1.0)


def summary_text(result: TrainResult, baseline: Sequence[MetricsRecord] | None = None) -> str:
    m = result.metrics
    acc = np.array([r.token_acc for r in m])
    best = int(np.nanargmax(acc))
    lines = [
        f"method = {result.config.method}",
        f"final_step = {m[-1].step}",
        f"final_token_acc = {m[-1].token_acc!r}",
        f"final_bleu = {m[-1].bleu!r}",
        f"best_token_acc = {m[best].token_acc!r}",
        f"best_step = {m[best].step}",
        f"best_bleu = {max(r.bleu for r in m)!r}",
        f"train_wall_ms = {result.train_wall_ms:.1f}",
    ]
    if result.step_costs:
        fwd = {c.forward for c in result.step_costs}
        bwd = {c.backward for c in result.step_costs}
        lines += [f"forward_passes_per_step = {','.join(map(str, sorted(fwd)))}",
                  f"backward_passes_per_step = {','.join(map(str, sorted(bwd)))}",
                  f"decode_calls_in_training = {sum(c.decode for c in result.step_costs)}"]
    if baseline is not None:
        lines.append(f"acceleration_ratio_steps = {acceleration_ratio(baseline, m)!r}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# cached runs and experiments


def config_key(cfg: RunConfig) -> str:
    return hashlib.sha256(C.dumps(cfg).encode()).hexdigest()[:16]


class Runner:
    """Runs configs, optionally memoising metrics on disk by config hash."""

    def __init__(self, cache_dir: str | Path | None = None):
        self.cache_dir = Path(cache_dir) if cache_dir else None
        self.trained = 0

    def __call__(self, cfg: RunConfig) -> list[MetricsRecord]:
        if self.cache_dir is None:
            self.trained += 1
            return train(cfg).metrics
        run_dir = self.cache_dir / config_key(cfg)
        if (run_dir / "metrics.csv").exists() and (run_dir / "run_config.txt").read_text() == C.dumps(cfg):
            return read_metrics(run_dir / "metrics.csv")
        self.trained += 1
        return train(cfg, run_dir).metrics


def _with(cfg: RunConfig, **flat) -> RunConfig:
    return C.with_overrides(cfg, **flat)


@dataclass
class ConvergenceResult:
    seeds: list[int]
    vanilla: list[list[MetricsRecord]]
    spl: list[list[MetricsRecord]]
    target: list[float]
    vanilla_steps: list[float]
    spl_steps: list[float]
    ratios: list[float]


def convergence(base: RunConfig, seeds: Sequence[int], runner: Runner | None = None,
                fraction: float = 0.98) -> ConvergenceResult:
    """Vanilla versus SPL per seed; steps to ``fraction`` of vanilla's best accuracy."""
    runner = runner or Runner()
    res = ConvergenceResult(list(seeds), [], [], [], [], [], [])
    for s in seeds:
        v = runner(_with(base, method="vanilla", seed=s))
        p = runner(_with(base, method="spl", seed=s))
        steps_v = np.array([r.step for r in v])
        acc_v = np.array([r.token_acc for r in v])
        target = fraction * acc_v.max()
        res.vanilla.append(v)
        res.spl.append(p)
        res.target.append(float(target))
        res.vanilla_steps.append(steps_to_reach(steps_v, acc_v, target))
        res.spl_steps.append(steps_to_reach(np.array([r.step for r in p]),
                                            np.array([r.token_acc for r in p]), target))
        res.ratios.append(acceleration_ratio(v, p, fraction=fraction))
    return res


def k_sweep(base: RunConfig, ks: Sequence[float], seeds: Sequence[int] = (0,),
            runner: Runner | None = None, metric: str = "token_acc") -> dict:
    """SPL run per (k, seed). Returns per-run series and the seed-mean table
    with one row per (k, checkpoint)."""
    runner = runner or Runner()
    runs: dict[tuple[float, int], list[MetricsRecord]] = {}
    for k in ks:
        for s in seeds:
            runs[(float(k), s)] = runner(_with(base, method="spl", seed=s, **{"confidence.k": float(k)}))
    table = []
    for k in ks:
        series = np.array([[getattr(r, metric) for r in runs[(float(k), s)]] for s in seeds])
        steps = [r.step for r in runs[(float(k), seeds[0])]]
        for i, step in enumerate(steps):
            table.append((float(k), step, float(series[:, i].mean())))
    return {"runs": runs, "table": table}


def tercile_tracking(base: RunConfig, runner: Runner | None = None) -> dict:
    """Ratio of per-tercile mean raw SLC, SPL model over a vanilla model trained
    with the same seed and batch order, at each checkpoint."""
    runner = runner or Runner()
    cfg = _with(base, track_slc=True)
    spl_m = runner(_with(cfg, method="spl"))
    van_m = runner(_with(cfg, method="vanilla"))
    return tercile_ratios(spl_m, van_m)


def tercile_ratios(spl_m: Sequence[MetricsRecord], van_m: Sequence[MetricsRecord]) -> dict:
    steps = [r.step for r in spl_m]
    if steps != [r.step for r in van_m]:
        raise ValueError("runs are not aligned on checkpoints")
    out = {"step": steps}
    for name in ("slc_short", "slc_med", "slc_long"):
        out[name] = [getattr(a, name) / getattr(b, name) for a, b in zip(spl_m, van_m)]
    return out


def bucket_sweep(base: RunConfig, counts: Sequence[int] = (5, 10, 20, 40, 72),
                 seeds: Sequence[int] = (0,), runner: Runner | None = None,
                 metric: str = "token_acc") -> list[tuple[str, int, float]]:
    """Final metric per (method, bucket count), averaged over seeds."""
    runner = runner or Runner()
    rows = []
    for method in ("vanilla", "spl"):
        for n in counts:
            finals = [getattr(runner(_with(base, method=method, bucket_count=n, seed=s))[-1], metric)
                      for s in seeds]
            rows.append((method, int(n), float(np.mean(finals))))
    return rows


def spread(rows: Sequence[tuple[str, int, float]], method: str) -> float:
    vals = [v for m, _, v in rows if m == method]
    return max(vals) - min(vals)
