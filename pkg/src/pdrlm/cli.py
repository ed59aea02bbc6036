"""Command-line entry point: train / eval / ablate / sweep / strip.

Exit code 0 on success; on failure a single machine-parsable line
``error: <kind>: <message>`` goes to stderr and the exit code is 2.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys

from .checkpoint import CheckpointError, load_checkpoint, strip_checkpoint
from .config import ConfigError, load_config
from .corpus import VocabularyError, batchify
from .evalsuite import (CacheConfig, EvalError, cache_evaluate,
                        context_nll_histogram, evaluate,
                        prediction_entropy_histogram, write_histogram_csv)
from .model import ModelError
from .train import (TrainingAborted, load_splits, parse_ranges, run_ablation,
                    run_sweep, run_training)

_ERROR_KINDS = {
    ConfigError: "config", VocabularyError: "corpus",
    CheckpointError: "checkpoint", ModelError: "model", EvalError: "eval",
    TrainingAborted: "training", FileNotFoundError: "io", OSError: "io",
}


def _fail(exc):
    for cls, kind in _ERROR_KINDS.items():
        if isinstance(exc, cls):
            break
    else:
        kind = "internal"
    msg = " ".join(str(exc).split())
    print(f"error: {kind}: {msg}", file=sys.stderr)
    return 2


def cmd_train(args):
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    res = run_training(config, args.out)
    print(json.dumps({"ckpt": res.ckpt_path, "metrics": res.metrics_path,
                      "best_val_ppl": res.best_val_ppl,
                      "epochs": res.epochs_run, "steps": res.steps}))
    return 0


def _load_eval_data(args):
    data = load_checkpoint(args.ckpt)
    config = data.config
    vocab, ids = load_splits(config)
    if vocab.size != data.params.vocab_size:
        raise EvalError(
            f"vocab mismatch: corpus gives {vocab.size} tokens, checkpoint "
            f"holds {data.params.vocab_size}")
    if args.data not in ids:
        raise EvalError(f"unknown split {args.data!r}; use train/valid/test")
    streams = batchify(ids[args.data], config.eval_batch_size)
    return data, config, streams


def cmd_eval(args):
    data, config, streams = _load_eval_data(args)
    if args.hist_context_nll and data.head is None:
        raise EvalError("context NLL histogram needs an unstripped "
                        "(training) checkpoint")
    rep = evaluate(data.params, streams, config.eval_window)
    print(rep.to_json())
    if args.cache:
        streams.reset()
        cache = CacheConfig(config.cache_size, config.cache_theta,
                            config.cache_lambda)
        rep_c = cache_evaluate(data.params, streams, config.eval_window,
                               cache)
        print(rep_c.to_json())
    os.makedirs(args.out, exist_ok=True)
    if args.hist_entropy:
        streams.reset()
        centers, values = prediction_entropy_histogram(
            data.params, streams, config.eval_window)
        write_histogram_csv(os.path.join(args.out, "entropy_hist.csv"),
                            centers, values)
    if args.hist_context_nll:
        streams.reset()
        centers, values = context_nll_histogram(
            data.params, data.head, streams, config.eval_window)
        write_histogram_csv(os.path.join(args.out, "context_nll_hist.csv"),
                            centers, values)
    return 0


def cmd_ablate(args):
    config = load_config(args.config)
    arms = [a for a in args.arms.split(",") if a]
    rows = run_ablation(config, arms, args.out)
    cols = ["arm", "valid_ppl", "test_ppl", "valid_bpc", "test_bpc"]
    print("  ".join(f"{c:>12}" for c in cols))
    for row in rows:
        cells = [row["arm"]] + [f"{row[c]:.3f}" for c in cols[1:]]
        print("  ".join(f"{c:>12}" for c in cells))
    return 0


def cmd_sweep(args):
    config = load_config(args.config)
    with open(args.ranges, encoding="utf-8") as fh:
        ranges = parse_ranges(fh.read(), where=args.ranges)
    seed = config.seed if args.seed is None else args.seed
    results = run_sweep(config, args.n, ranges, seed, args.out,
                        paired=args.paired)
    ok = [r for r in results if r["status"] == "ok"]
    print(json.dumps({"samples": len(results), "ok": len(ok),
                      "results": os.path.join(args.out, "sweep.jsonl")}))
    return 0


def cmd_strip(args):
    had_head = strip_checkpoint(args.ckpt, args.out)
    print(json.dumps({"out": args.out, "had_head": had_head}))
    return 0


def build_parser():
    p = argparse.ArgumentParser(
        prog="pdrlm",
        description="LSTM language models with past-decode regularization")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model")
    t.add_argument("--config", required=True)
    t.add_argument("--seed", type=int, default=None)
    t.add_argument("--out", default="run")
    t.set_defaults(fn=cmd_train)

    e = sub.add_parser("eval", help="evaluate a checkpoint")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True, help="train | valid | test")
    e.add_argument("--cache", action="store_true",
                   help="also report cache-augmented scores")
    e.add_argument("--hist-entropy", action="store_true")
    e.add_argument("--hist-context-nll", action="store_true")
    e.add_argument("--out", default=".")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="single-knob ablation runs")
    a.add_argument("--config", required=True)
    a.add_argument("--arms", required=True,
                   help="comma-separated arm names")
    a.add_argument("--out", default="ablation")
    a.set_defaults(fn=cmd_ablate)

    s = sub.add_parser("sweep", help="random hyperparameter sweep")
    s.add_argument("--config", required=True)
    s.add_argument("--n", type=int, required=True)
    s.add_argument("--ranges", required=True)
    s.add_argument("--seed", type=int, default=None)
    s.add_argument("--paired", action="store_true",
                   help="also run each sample without the past-decode loss")
    s.add_argument("--out", default="sweep")
    s.set_defaults(fn=cmd_sweep)

    st = sub.add_parser("strip", help="remove the past-decode head")
    st.add_argument("--ckpt", required=True)
    st.add_argument("--out", required=True)
    st.set_defaults(fn=cmd_strip)
    return p


def main(argv=None):
    logging.basicConfig(level=os.environ.get("PDRLM_LOGLEVEL", "WARNING"),
                        format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.fn(args)
    except Exception as exc:
        if os.environ.get("PDRLM_DEBUG") == "1":
            raise
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
