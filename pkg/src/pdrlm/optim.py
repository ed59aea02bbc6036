"""SGD and averaged SGD with the non-monotone trigger, gradient
clipping, decoupled weight decay, and the finetune restart."""

import contextlib
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)


@dataclass
class OptimizerState:
    lr: float
    weight_decay: float = 0.0
    clip: float = 0.0           # 0 disables clipping
    nonmono: int = 5            # non-monotone trigger interval
    mode: str = "sgd"
    step: int = 0
    avg_start: int = None
    avg_steps: int = 0
    averages: dict = None       # Param -> running average array
    val_history: list = field(default_factory=list)


def ntasgd_check(val_history, n):
    """True iff the latest validation value is worse than the best seen
    more than n checks ago."""
    if n < 1:
        raise ValueError(f"non-monotone interval must be >= 1, got {n}")
    if len(val_history) <= n:
        return False
    return val_history[-1] > min(val_history[:-n])


def record_validation(state, value):
    """Append a validation metric; switch to averaging permanently once
    the non-monotone criterion fires."""
    state.val_history.append(float(value))
    if state.mode == "sgd" and ntasgd_check(state.val_history, state.nonmono):
        start_averaging(state)
        logger.info("non-monotone trigger fired at step %d; switching to "
                    "averaged SGD", state.step)
        return True
    return False


def start_averaging(state, params=None):
    state.mode = "asgd"
    state.avg_start = state.step
    state.avg_steps = 0
    state.averages = {}
    if params is not None:
        for p in params:
            state.averages[p] = p.data.copy()


def clip_and_step(params, grads, state, lr_scale=1.0):
    """Clip by global norm, apply decoupled weight decay, take the SGD
    step, and fold the result into the running averages in asgd mode.
    A non-finite gradient skips the whole step (logged), leaving the
    parameters untouched. Returns the pre-clip gradient norm, or None
    when the step was skipped."""
    norm = grads.global_norm()
    if not np.isfinite(norm):
        logger.warning("non-finite gradient norm at step %d; step skipped",
                       state.step)
        return None
    factor = 1.0
    if state.clip > 0 and norm > state.clip:
        factor = state.clip / norm
    lr = state.lr * lr_scale
    wd = state.weight_decay
    for p in params:
        g = grads.get(p)
        if wd > 0 and p.decay:
            p.data *= 1.0 - lr * wd
        p.data -= (lr * factor) * g
    state.step += 1
    if state.mode == "asgd":
        state.avg_steps += 1
        k = state.avg_steps
        for p in params:
            avg = state.averages.get(p)
            if avg is None:
                state.averages[p] = p.data.copy()
            else:
                avg += (p.data - avg) / k
    return norm


@contextlib.contextmanager
def swap_in_averages(params, state):
    """Context manager: evaluation sees the running averages; the
    training weights are restored bit-identically on exit. No-op (with a
    log line) in sgd mode."""
    if state.mode != "asgd" or not state.averages:
        if state.mode != "asgd":
            logger.info("swap_in_averages called in sgd mode; no-op")
        yield params
        return
    saved = {p: p.data.copy() for p in params if p in state.averages}
    try:
        for p, avg in state.averages.items():
            p.data[:] = avg
        yield params
    finally:
        for p, orig in saved.items():
            p.data[:] = orig


def restart_for_finetune(state):
    """Reset to averaged SGD from scratch: fresh averages, fresh
    validation history. The caller is responsible for having reloaded
    the best checkpoint's weights first."""
    state.val_history = []
    start_averaging(state)
    return state
