"""Training loop (SGD then averaged SGD on the non-monotone trigger,
optional finetune restart), plus the ablation and sweep harnesses.

Randomness is split into named substreams derived from the single run
seed (init, one per dropout knob, window policy, sweep sampling), so
toggling one feature never shifts another feature's draws; that is what
makes ablation arms causally clean and makes a lambda=0 run bitwise
match a run with the past-decode path disabled.
"""

import dataclasses
import json
import logging
import math
import os
import time
import zlib

import numpy as np

from .autodiff import backward
from .checkpoint import load_checkpoint, save_checkpoint
from .config import ConfigError, config_diff, config_text
from .corpus import (WindowPolicy, batchify, build_vocab, encode,
                     iter_windows, read_text, save_vocab)
from .evalsuite import evaluate
from .metrics import MetricsWriter
from .model import (DropoutSpec, RegularizationSpec, compute_loss,
                    forward_window, init_params, init_state, sample_masks)
from .optim import (OptimizerState, clip_and_step, record_validation,
                    restart_for_finetune, swap_in_averages)

logger = logging.getLogger(__name__)

DROPOUT_KNOBS = ("word", "embed", "layer", "out", "wdrop")


class TrainingAborted(RuntimeError):
    pass


def substream(seed, purpose):
    """Independent Generator derived from (seed, purpose)."""
    key = zlib.crc32(purpose.encode("utf-8"))
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(key,)))


def read_split(path, char_bytes=False):
    if char_bytes:
        with open(path, "rb") as fh:
            return fh.read().decode("latin-1")
    return read_text(path)


def load_splits(config):
    """Build the vocabulary from the training split and encode all three."""
    texts = {name: read_split(getattr(config, f"{name}_path"),
                              config.char_bytes)
             for name in ("train", "valid", "test")}
    vocab = build_vocab(texts["train"], config.level,
                        min_count=config.min_count)
    ids = {name: encode(text, vocab) for name, text in texts.items()}
    return vocab, ids


@dataclasses.dataclass
class TrainResult:
    ckpt_path: str
    metrics_path: str
    vocab_path: str
    best_val_ppl: float
    best_val_nll: float
    epochs_run: int
    steps: int
    mean_step_ms: float


def run_training(config, out_dir):
    """Full training run; returns paths and best-validation metrics.

    The best-on-validation checkpoint holds the evaluation-view weights
    (running averages once averaging is active) together with the
    optimizer state and the exact config text.
    """
    config.validate()
    os.makedirs(out_dir, exist_ok=True)
    vocab, ids = load_splits(config)
    train_streams = batchify(ids["train"], config.batch_size)
    valid_streams = batchify(ids["valid"], config.eval_batch_size)
    cfg_txt = config_text(config)

    params, head = init_params(vocab.size, config.layer_dims, config.emb_dim,
                               substream(config.seed, "init"),
                               tied=config.tied)
    all_params = params.all() + head.all()
    spec = DropoutSpec(config.p_word, config.p_embed, config.p_layer,
                       config.p_out, config.p_wdrop)
    pdr_on = config.pdr_enabled and config.lambda_pdr > 0
    reg = RegularizationSpec(config.lambda_pdr if pdr_on else 0.0,
                             config.alpha, config.beta, config.weight_decay)
    drop_rngs = {k: substream(config.seed, f"dropout/{k}")
                 for k in DROPOUT_KNOBS}
    win_rng = substream(config.seed, "window")
    opt = OptimizerState(lr=config.lr, weight_decay=config.weight_decay,
                         clip=config.clip, nonmono=config.nonmono)

    ckpt_path = os.path.join(out_dir, "best.ckpt")
    metrics_path = os.path.join(out_dir, "metrics.jsonl")
    vocab_path = os.path.join(out_dir, "vocab.txt")
    save_vocab(vocab, vocab_path)
    metrics = MetricsWriter(metrics_path, cfg_txt)
    best = {"nll": math.inf, "ppl": math.inf}
    totals = {"steps": 0, "wall": 0.0}
    policy = WindowPolicy(config.window, randomized=config.window_randomized)

    def train_epoch(epoch, phase):
        sums = {"ce": 0.0, "pdr": 0.0, "ar": 0.0, "tar": 0.0, "total": 0.0}
        nwin, wall = 0, 0.0
        lstm_state = init_state(params, config.batch_size)
        for window in iter_windows(train_streams, policy, win_rng):
            t0 = time.perf_counter()
            masks = None
            if spec.any_active():
                masks = sample_masks(spec, params, config.batch_size,
                                     window.length, drop_rngs)
            try:
                trace = forward_window(params, head, window, lstm_state,
                                       "train", masks=masks,
                                       want_probs=pdr_on)
                lstm_state = trace.state
                loss = compute_loss(trace, window, reg)
                finite = math.isfinite(loss.total)
            except ValueError as exc:   # non-finite activations mid-forward
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch} ({exc}); last good "
                    f"checkpoint kept at {ckpt_path}") from exc
            if not finite:
                raise TrainingAborted(
                    f"non-finite loss at epoch {epoch}; last good checkpoint "
                    f"kept at {ckpt_path}")
            grads = backward(loss.node)
            clip_and_step(all_params, grads, opt, lr_scale=window.lr_scale)
            wall += time.perf_counter() - t0
            for k in sums:
                sums[k] += getattr(loss, k)
            nwin += 1
        totals["steps"] += nwin
        totals["wall"] += wall
        mean_loss = {k: v / max(nwin, 1) for k, v in sums.items()}

        with swap_in_averages(all_params, opt):
            rep = evaluate(params, valid_streams, config.eval_window)
            if rep.nll < best["nll"]:
                best.update(nll=rep.nll, ppl=rep.ppl)
                save_checkpoint(ckpt_path, cfg_txt, params, head, opt)
        record_validation(opt, rep.nll)
        metrics.record(epoch, opt.step, mean_loss, rep.ppl, rep.bpc,
                       wall_ms_per_step=1000.0 * wall / max(nwin, 1),
                       mode=opt.mode, phase=phase)
        logger.info("epoch %d (%s): train total %.4f, valid ppl %.3f [%s]",
                    epoch, phase, mean_loss["total"], rep.ppl, opt.mode)
        return rep

    epochs_run = 0
    try:
        for epoch in range(1, config.epochs + 1):
            train_epoch(epoch, "train")
            epochs_run += 1
        if config.finetune and config.finetune_epochs > 0 \
                and math.isfinite(best["nll"]):
            loaded = load_checkpoint(ckpt_path)
            for src, dst in zip(loaded.params.all() + loaded.head.all(),
                                all_params):
                dst.data[:] = src.data
            restart_for_finetune(opt)
            for e in range(1, config.finetune_epochs + 1):
                train_epoch(config.epochs + e, "finetune")
                epochs_run += 1
    finally:
        metrics.close()
    if not math.isfinite(best["nll"]):
        raise TrainingAborted("no finite validation result; nothing saved")
    return TrainResult(ckpt_path, metrics_path, vocab_path,
                       best_val_ppl=best["ppl"], best_val_nll=best["nll"],
                       epochs_run=epochs_run, steps=totals["steps"],
                       mean_step_ms=1000.0 * totals["wall"]
                       / max(totals["steps"], 1))


# --- ablation -----------------------------------------------------------

ARM_KNOBS = {
    "finetune": {"finetune": False, "finetune_epochs": 0},
    "p_out": {"p_out": 0.0},
    "p_layer": {"p_layer": 0.0},
    "p_embed": {"p_embed": 0.0},
    "p_word": {"p_word": 0.0},
    "p_wdrop": {"p_wdrop": 0.0},
    "alpha/beta": {"alpha": 0.0, "beta": 0.0},
    "weight_decay": {"weight_decay": 0.0},
    "lambda_pdr": {"lambda_pdr": 0.0},
}


def arm_config(config, arm):
    """Base config with exactly the named knob disabled."""
    try:
        return dataclasses.replace(config, **ARM_KNOBS[arm])
    except KeyError:
        raise ConfigError(
            f"unknown ablation arm {arm!r}; known arms: "
            f"{', '.join(sorted(ARM_KNOBS))}") from None


def _eval_checkpoint(ckpt_path, config):
    data = load_checkpoint(ckpt_path)
    _, ids = load_splits(config)
    out = {}
    for split in ("valid", "test"):
        streams = batchify(ids[split], config.eval_batch_size)
        rep = evaluate(data.params, streams, config.eval_window)
        out[f"{split}_ppl"] = rep.ppl
        out[f"{split}_bpc"] = rep.bpc
    return out


def run_ablation(config, arms, out_dir):
    """One run per arm (plus the base), same seed everywhere; emits one
    row per run with the exact config diff against the base."""
    for arm in arms:
        arm_config(config, arm)   # reject unknown arms before any run
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    runs = [("base", config)] + [(a, arm_config(config, a)) for a in arms]
    for name, cfg in runs:
        safe = name.replace("/", "-")
        res = run_training(cfg, os.path.join(out_dir, f"arm-{safe}"))
        row = {"arm": name,
               "changed": {k: list(v) for k, v in
                           config_diff(config, cfg).items()}}
        row.update(_eval_checkpoint(res.ckpt_path, cfg))
        rows.append(row)
    with open(os.path.join(out_dir, "ablation.json"), "w",
              encoding="utf-8") as fh:
        json.dump(rows, fh, indent=2)
    return rows


# --- sweeps --------------------------------------------------------------

def parse_ranges(text, where="<ranges>"):
    """Flat 'key = lo, hi' lines over numeric RunConfig fields."""
    from .config import RunConfig
    fields = {f.name: f for f in dataclasses.fields(RunConfig)}
    ranges = {}
    for lineno, line in enumerate(text.split("\n"), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{where}:{lineno}: expected 'key = lo, hi'")
        key, raw = line.split("=", 1)
        key = key.strip()
        if key not in fields:
            raise ConfigError(f"{where}:{lineno}: unknown key {key!r}")
        parts = [p.strip() for p in raw.split(",")]
        if len(parts) != 2:
            raise ConfigError(f"{where}:{lineno}: expected 'lo, hi'")
        lo, hi = float(parts[0]), float(parts[1])
        if hi < lo:
            raise ConfigError(f"{where}:{lineno}: empty range [{lo}, {hi}]")
        ranges[key] = (lo, hi)
    return ranges


def sample_overrides(ranges, n, seed):
    """n uniform draws per key, deterministic in (ranges, n, seed)."""
    from .config import RunConfig
    int_fields = {f.name for f in dataclasses.fields(RunConfig)
                  if isinstance(f.default, int)
                  and not isinstance(f.default, bool)}
    rng = substream(seed, "sweep")
    out = []
    for _ in range(n):
        draw = {}
        for key in sorted(ranges):
            lo, hi = ranges[key]
            v = rng.uniform(lo, hi)
            draw[key] = int(round(v)) if key in int_fields else float(v)
        out.append(draw)
    return out


def run_sweep(config, n, ranges, seed, out_dir, paired=False):
    """n independent runs with hyperparameters sampled from ranges;
    per-run failures are recorded and skipped. paired=True trains each
    sample twice, with and without the past-decode loss."""
    os.makedirs(out_dir, exist_ok=True)
    results = []
    path = os.path.join(out_dir, "sweep.jsonl")
    with open(path, "w", encoding="utf-8") as fh:
        for i, overrides in enumerate(sample_overrides(ranges, n, seed)):
            cfg = dataclasses.replace(config, **overrides)
            rec = {"sample": i, "overrides": overrides}
            try:
                res = run_training(cfg, os.path.join(out_dir, f"sample-{i}"))
                rec["val_ppl"] = res.best_val_ppl
                rec["status"] = "ok"
                if paired:
                    off = dataclasses.replace(cfg, lambda_pdr=0.0)
                    res_off = run_training(
                        off, os.path.join(out_dir, f"sample-{i}-nopdr"))
                    rec["val_ppl_no_pdr"] = res_off.best_val_ppl
            except Exception as exc:   # record and move on
                rec["status"] = f"failed: {exc}"
                logger.warning("sweep sample %d failed: %s", i, exc)
            results.append(rec)
            fh.write(json.dumps(rec, sort_keys=True) + "\n")
            fh.flush()
    return results
