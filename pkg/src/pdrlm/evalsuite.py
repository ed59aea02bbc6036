"""Perplexity / bits-per-character evaluation, continuous-cache
scoring, and the diagnostic histograms.

Everything here is read-only with respect to the model and carries
natural-log NLL internally; bits-per-character divides by ln 2 at the
end. Evaluation uses fixed-length windows and carries LSTM state across
windows within a stream.
"""

import json
import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .corpus import WindowPolicy, iter_windows
from .model import ModelError, _flat, forward_window, init_state, pdr_decode


class EvalError(ValueError):
    pass


@dataclass
class EvalReport:
    tokens: int
    nll: float           # mean negative log-likelihood, natural log
    ppl: float           # exp(nll)
    bpc: float           # nll / ln 2
    per_token_nll: np.ndarray = None

    def to_json(self):
        return json.dumps({"tokens": self.tokens, "nll": self.nll,
                           "ppl": self.ppl, "bpc": self.bpc})


def _report(nlls, keep_tokens):
    mean = float(nlls.mean())
    ppl = math.exp(mean) if mean < 700 else math.inf  # diverged model
    return EvalReport(tokens=int(nlls.size), nll=mean, ppl=ppl,
                      bpc=mean / math.log(2),
                      per_token_nll=nlls if keep_tokens else None)


def _eval_forward(params, streams, window_len, want_probs=False):
    """Yield (window, trace) over one pass, carrying state."""
    if streams.length < 2:
        raise EvalError("evaluation data is empty")
    state = init_state(params, streams.batch_size)
    for window in iter_windows(streams, WindowPolicy(base=window_len)):
        trace = forward_window(params, None, window, state, mode="eval",
                               want_probs=want_probs)
        state = trace.state
        yield window, trace


def evaluate(params, streams, window_len, keep_tokens=False):
    """Exact mean NLL over every scored token; deterministic."""
    chunks = []
    for window, trace in _eval_forward(params, streams, window_len):
        nll, _ = kernels.cross_entropy_rows(trace.logits.data,
                                            _flat(window.targets))
        chunks.append(nll)
    return _report(np.concatenate(chunks), keep_tokens)


def target_probabilities(params, streams, window_len):
    """Raw per-token model probabilities of the target tokens, in the
    same order evaluate() scores them. Feed for the independent
    brute-force recomputation of ppl/bpc."""
    out = []
    for window, trace in _eval_forward(params, streams, window_len,
                                       want_probs=True):
        probs = trace.probs.data
        out.append(probs[np.arange(probs.shape[0]), _flat(window.targets)])
    return np.concatenate(out)


def brute_force_report(probabilities):
    """Recompute mean NLL / ppl / bpc from raw probabilities by direct
    accumulation; the oracle side of the dual-route eval check."""
    nlls = [-math.log(p) for p in probabilities]
    mean = math.fsum(nlls) / len(nlls)
    return EvalReport(tokens=len(nlls), nll=mean, ppl=math.exp(mean),
                      bpc=mean / math.log(2))


@dataclass
class CacheConfig:
    size: int = 500             # recent (state, token) pairs kept
    theta: float = 0.3          # match sharpness on state similarity
    lam: float = 0.1            # mixture weight of the cache distribution

    def __post_init__(self):
        if self.size < 0:
            raise EvalError(f"cache size must be >= 0, got {self.size}")
        if self.theta < 0:
            raise EvalError(f"theta must be >= 0, got {self.theta}")
        if not (0.0 <= self.lam <= 1.0):
            raise EvalError(f"lambda must be in [0, 1], got {self.lam}")


def cache_distribution(cached_states, cached_tokens, h, theta, vocab_size):
    """Distribution over tokens from the cache: each cached pair votes
    for its token with weight exp(theta * h . h_i), normalized."""
    scores = theta * (cached_states @ h)
    scores -= scores.max()
    np.exp(scores, out=scores)
    dist = np.zeros(vocab_size)
    np.add.at(dist, cached_tokens, scores)
    dist /= dist.sum()
    return dist


def cache_evaluate(params, streams, window_len, cache, keep_tokens=False):
    """Mix the model distribution with a continuous cache over recent
    hidden states. lam=0 falls back to the plain evaluation path, so the
    degenerate mixture reproduces evaluate() bitwise."""
    if cache.lam == 0.0:
        return evaluate(params, streams, window_len, keep_tokens)
    vocab = params.vocab_size
    nbatch = streams.batch_size
    hists = [{"h": [], "tok": []} for _ in range(nbatch)]
    chunks = []
    for window, trace in _eval_forward(params, streams, window_len,
                                       want_probs=True):
        for t in range(window.length):
            probs = trace.step_probs(t)
            h_rows = trace.step_raw(t)
            targets = window.targets[:, t]
            nll = np.empty(nbatch)
            for b in range(nbatch):
                p = probs[b]
                if hists[b]["tok"]:
                    pc = cache_distribution(np.asarray(hists[b]["h"]),
                                            np.asarray(hists[b]["tok"]),
                                            h_rows[b], cache.theta, vocab)
                    p = (1.0 - cache.lam) * p + cache.lam * pc
                nll[b] = -math.log(p[targets[b]])
                if cache.size > 0:
                    hists[b]["h"].append(h_rows[b])
                    hists[b]["tok"].append(int(targets[b]))
                    if len(hists[b]["tok"]) > cache.size:
                        hists[b]["h"].pop(0)
                        hists[b]["tok"].pop(0)
            chunks.append(nll)
    return _report(np.concatenate(chunks), keep_tokens)


@dataclass
class HistogramSpec:
    bins: int = 15
    lo: float = 0.0
    hi: float = 10.0
    normalize: bool = True

    def __post_init__(self):
        if self.hi <= self.lo:
            raise EvalError(f"histogram range [{self.lo}, {self.hi}] is empty")
        if self.bins < 1:
            raise EvalError(f"need at least one bin, got {self.bins}")


def _bin(values, spec):
    # clip into range so every sample lands in a bin
    values = np.clip(values, spec.lo, spec.hi)
    counts, edges = np.histogram(values, bins=spec.bins,
                                 range=(spec.lo, spec.hi))
    centers = (edges[:-1] + edges[1:]) / 2.0
    vals = counts / counts.sum() if spec.normalize else counts.astype(float)
    return centers, vals


def prediction_entropy_histogram(params, streams, window_len,
                                 spec=HistogramSpec()):
    """Shannon entropy (natural log) of each step's next-token
    distribution, binned. Entropy lies in [0, ln |W|]."""
    ents = []
    for window, trace in _eval_forward(params, streams, window_len,
                                       want_probs=True):
        p = trace.probs.data
        ents.append(-np.sum(np.where(p > 0, p * np.log(
            np.where(p > 0, p, 1.0)), 0.0), axis=1))
    return _bin(np.concatenate(ents), spec)


def context_nll_histogram(params, head, streams, window_len,
                          spec=HistogramSpec()):
    """NLL of each input token under the past-decode distribution,
    binned. Requires a training checkpoint (head present)."""
    if head is None:
        raise ModelError("context NLL histogram needs the past-decode head "
                         "(training checkpoint)")
    if streams.length < 2:
        raise EvalError("evaluation data is empty")
    state = init_state(params, streams.batch_size)
    nlls = []
    for window in iter_windows(streams, WindowPolicy(base=window_len)):
        trace = forward_window(params, head, window, state, mode="eval",
                               want_probs=True)
        state = trace.state
        pdr_decode(trace)
        nll, _ = kernels.cross_entropy_rows(trace.pdr_logits.data,
                                            _flat(window.inputs))
        nlls.append(nll)
    return _bin(np.concatenate(nlls), spec)


def write_histogram_csv(path, centers, values):
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("bin_center,value\n")
        for c, v in zip(centers, values):
            fh.write(f"{float(c)!r},{float(v)!r}\n")
