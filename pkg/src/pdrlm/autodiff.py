"""Tape-based reverse-mode autodiff over dense float64 arrays.

A Tape records every primitive applied to Tensors created on it, in
execution order (which is already a topological order). backward() walks
the records in reverse, accumulating gradients; parameters used in
several places (a tied embedding, a reused projection) receive the sum
of all contributions.

The tape is rebuilt per training window: create a Tape, wrap parameter
arrays with tape.leaf(array, key=param), run the forward, call
backward() on the scalar loss, read the Gradients. Dropout enters only
through apply_mask with externally supplied masks, so a forward pass is
a deterministic function of (arrays, masks) - a requirement of the
finite-difference oracle in gradcheck.
"""

import numpy as np

from . import kernels


class ShapeError(ValueError):
    pass


class Tensor:
    """A node on a tape: a float64 ndarray plus its node id."""

    __slots__ = ("data", "tape", "node")

    def __init__(self, data, tape, node):
        self.data = data
        self.tape = tape
        self.node = node

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, node={self.node})"


class Tape:
    """Ordered record of primitive applications (define-by-run)."""

    def __init__(self):
        self.records = []   # (out_node_ids, in_node_ids, backward_fn, saved)
        self.num_nodes = 0
        self.leaves = {}    # node id -> parameter key

    def _new_node(self, data):
        t = Tensor(data, self, self.num_nodes)
        self.num_nodes += 1
        return t

    def leaf(self, array, key=None):
        """Wrap an array as a leaf tensor. If key is given, backward()
        reports this leaf's gradient under that key."""
        array = np.asarray(array, dtype=np.float64)
        t = self._new_node(array)
        if key is not None:
            self.leaves[t.node] = key
        return t

    def constant(self, value):
        return self._new_node(np.asarray(value, dtype=np.float64))

    def _record(self, out_data, in_tensors, fn, saved):
        out = self._new_node(out_data)
        self.records.append(
            ((out.node,), tuple(t.node for t in in_tensors), fn, saved))
        return out


class Gradients:
    """Per-parameter gradients from one backward() call.

    get(key) returns a zeros array (matching key.data) for parameters
    the root did not depend on.
    """

    def __init__(self, by_key):
        self._by_key = by_key

    def get(self, key):
        g = self._by_key.get(key)
        if g is None:
            return np.zeros_like(key.data)
        return g

    def __contains__(self, key):
        return key in self._by_key

    def items(self):
        return self._by_key.items()

    def global_norm(self):
        total = 0.0
        for g in self._by_key.values():
            total += float(np.dot(g.ravel(), g.ravel()))
        return np.sqrt(total)


def backward(root):
    """Reverse-mode accumulation from a scalar root to all leaves.

    Backward functions may return views or shared arrays; the
    accumulator only adds in place into buffers it allocated itself.
    """
    if root.data.shape != ():
        raise ShapeError(
            f"backward root must be a scalar, got shape {root.data.shape}")
    tape = root.tape
    grads = [None] * tape.num_nodes
    owned = bytearray(tape.num_nodes)
    grads[root.node] = np.ones((), dtype=np.float64)
    for out_ids, in_ids, fn, saved in reversed(tape.records):
        gouts = tuple(grads[i] for i in out_ids)
        if all(g is None for g in gouts):
            continue
        gins = fn(gouts, saved)
        for nid, g in zip(in_ids, gins):
            if g is None:
                continue
            cur = grads[nid]
            if cur is None:
                grads[nid] = g
            elif owned[nid]:
                cur += g
            else:
                grads[nid] = cur + g
                owned[nid] = 1
    by_key = {}
    for nid, key in tape.leaves.items():
        if grads[nid] is not None:
            by_key[key] = grads[nid]
    return Gradients(by_key)


def _check_2d(name, t):
    if t.data.ndim != 2:
        raise ShapeError(f"{name} expects a matrix, got shape {t.data.shape}")


# --- primitives ---------------------------------------------------------

def _bw_matmul(gouts, saved):
    a, b = saved
    g = gouts[0]
    return g @ b.T, a.T @ g


def matmul(a, b):
    _check_2d("matmul", a)
    _check_2d("matmul", b)
    if a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(
            f"matmul inner extents disagree: {a.data.shape} x {b.data.shape}")
    return a.tape._record(a.data @ b.data, (a, b), _bw_matmul,
                          (a.data, b.data))


def _bw_transpose(gouts, saved):
    return (np.ascontiguousarray(gouts[0].T),)


def transpose(a):
    _check_2d("transpose", a)
    return a.tape._record(np.ascontiguousarray(a.data.T), (a,),
                          _bw_transpose, None)


def _bw_add(gouts, saved):
    g = gouts[0]
    return g, g


def add(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes differ: {a.data.shape} vs {b.data.shape}")
    return a.tape._record(a.data + b.data, (a, b), _bw_add, None)


def _bw_sub(gouts, saved):
    g = gouts[0]
    return g, -g


def sub(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes differ: {a.data.shape} vs {b.data.shape}")
    return a.tape._record(a.data - b.data, (a, b), _bw_sub, None)


def _bw_add_bias(gouts, saved):
    g = gouts[0]
    return g, g.sum(axis=0)


def add_bias(a, bias):
    _check_2d("add_bias", a)
    if bias.data.shape != (a.data.shape[1],):
        raise ShapeError(
            f"add_bias: bias {bias.data.shape} does not match {a.data.shape}")
    return a.tape._record(a.data + bias.data, (a, bias), _bw_add_bias, None)


def _bw_affine(gouts, saved):
    x, wx, h, wh = saved
    g = gouts[0]
    return g @ wx.T, x.T @ g, g @ wh.T, h.T @ g, g.sum(axis=0)


def affine(x, wx, h, wh, bias):
    """Fused x @ wx + h @ wh + bias; the LSTM pre-activation in one
    record."""
    out = x.data @ wx.data
    out += h.data @ wh.data
    out += bias.data
    return x.tape._record(out, (x, wx, h, wh, bias), _bw_affine,
                          (x.data, wx.data, h.data, wh.data))


def _bw_hadamard(gouts, saved):
    a, b = saved
    g = gouts[0]
    return g * b, g * a


def hadamard(a, b):
    if a.data.shape != b.data.shape:
        raise ShapeError(
            f"hadamard shapes differ: {a.data.shape} vs {b.data.shape}")
    return a.tape._record(a.data * b.data, (a, b), _bw_hadamard,
                          (a.data, b.data))


def _bw_scale(gouts, saved):
    return (gouts[0] * saved,)


def scale(a, k):
    k = float(k)
    return a.tape._record(a.data * k, (a,), _bw_scale, k)


def _bw_tanh(gouts, saved):
    return (gouts[0] * (1.0 - saved * saved),)


def tanh(a):
    out = np.tanh(a.data)
    return a.tape._record(out, (a,), _bw_tanh, out)


def _bw_sigmoid(gouts, saved):
    return (gouts[0] * saved * (1.0 - saved),)


def sigmoid(a):
    out = kernels.sigmoid(a.data)
    return a.tape._record(out, (a,), _bw_sigmoid, out)


def _bw_concat_cols(gouts, saved):
    g = gouts[0]
    return tuple(np.ascontiguousarray(g[:, lo:hi]) for lo, hi in saved)


def concat_cols(tensors):
    if not tensors:
        raise ShapeError("concat_cols of zero tensors")
    for t in tensors:
        _check_2d("concat_cols", t)
    offs, lo = [], 0
    for t in tensors:
        hi = lo + t.data.shape[1]
        offs.append((lo, hi))
        lo = hi
    out = np.concatenate([t.data for t in tensors], axis=1)
    return tensors[0].tape._record(out, tuple(tensors), _bw_concat_cols,
                                   tuple(offs))


def _bw_concat_rows(gouts, saved):
    g = gouts[0]
    return tuple(g[lo:hi] for lo, hi in saved)


def concat_rows(tensors):
    if not tensors:
        raise ShapeError("concat_rows of zero tensors")
    for t in tensors:
        _check_2d("concat_rows", t)
    offs, lo = [], 0
    for t in tensors:
        hi = lo + t.data.shape[0]
        offs.append((lo, hi))
        lo = hi
    out = np.concatenate([t.data for t in tensors], axis=0)
    return tensors[0].tape._record(out, tuple(tensors), _bw_concat_rows,
                                   tuple(offs))


def _bw_slice_rows(gouts, saved):
    lo, hi, shape = saved
    out = np.zeros(shape)
    out[lo:hi] = gouts[0]
    return (out,)


def slice_rows(a, lo, hi):
    _check_2d("slice_rows", a)
    if not (0 <= lo <= hi <= a.data.shape[0]):
        raise ShapeError(f"slice_rows [{lo}:{hi}] out of {a.data.shape}")
    return a.tape._record(a.data[lo:hi], (a,), _bw_slice_rows,
                          (lo, hi, a.data.shape))


def _bw_take_rows(gouts, saved):
    ids, nrows = saved
    g = gouts[0]
    out = np.zeros((nrows, g.shape[1]))
    np.add.at(out, ids, g)
    return (out,)


def take_rows(a, ids):
    """Gather rows of a by integer ids; the gradient scatter-adds, so
    repeated ids accumulate."""
    _check_2d("take_rows", a)
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= a.data.shape[0]):
        raise ShapeError(f"take_rows ids out of range for {a.data.shape}")
    return a.tape._record(a.data[ids], (a,), _bw_take_rows,
                          (ids, a.data.shape[0]))


def _bw_apply_mask(gouts, saved):
    return (gouts[0] * saved,)


def apply_mask(a, mask):
    """Multiply by a constant mask array (dropout). The mask is plain
    data, not a tensor: no gradient flows into it."""
    mask = np.asarray(mask, dtype=np.float64)
    out = a.data * mask
    if out.shape != a.data.shape:
        raise ShapeError(
            f"mask {mask.shape} does not broadcast onto {a.data.shape}")
    return a.tape._record(out, (a,), _bw_apply_mask, mask)


def _bw_sum_all(gouts, saved):
    return (np.full(saved, float(gouts[0])),)


def sum_all(a):
    return a.tape._record(np.asarray(a.data.sum()), (a,), _bw_sum_all,
                          a.data.shape)


def _bw_mean_all(gouts, saved):
    shape, inv = saved
    return (np.full(shape, float(gouts[0]) * inv),)


def mean_all(a):
    if a.data.size == 0:
        raise ShapeError("mean_all of empty tensor")
    return a.tape._record(np.asarray(a.data.mean()), (a,), _bw_mean_all,
                          (a.data.shape, 1.0 / a.data.size))


def _bw_softmax(gouts, saved):
    return (kernels.softmax_rows_backward(saved, gouts[0]),)


def softmax_rows(a):
    """Row softmax with max-subtraction. Rejects non-finite input."""
    _check_2d("softmax_rows", a)
    if not np.isfinite(a.data).all():
        raise ValueError("softmax_rows: non-finite input")
    out = kernels.softmax_rows(a.data)
    return a.tape._record(out, (a,), _bw_softmax, out)


def _bw_cross_entropy(gouts, saved):
    logits, targets, lse, m = saved
    scale_ = float(gouts[0]) / m
    return (kernels.cross_entropy_rows_backward(logits, targets, lse, scale_),)


def cross_entropy_from_logits(logits, targets):
    """Mean over rows of -log softmax(logits)[target], via fused
    log-sum-exp (probabilities are never materialized on this path)."""
    _check_2d("cross_entropy_from_logits", logits)
    targets = np.asarray(targets, dtype=np.int64)
    m, n = logits.data.shape
    if targets.shape != (m,):
        raise ShapeError(
            f"cross_entropy targets {targets.shape} for logits {logits.data.shape}")
    bad = np.nonzero((targets < 0) | (targets >= n))[0]
    if bad.size:
        raise IndexError(
            f"cross_entropy target out of range at row {int(bad[0])}: "
            f"{int(targets[bad[0]])} not in [0, {n})")
    nll, lse = kernels.cross_entropy_rows(logits.data, targets)
    return logits.tape._record(np.asarray(nll.mean()), (logits,),
                               _bw_cross_entropy,
                               (logits.data, targets, lse, m))


def _bw_lstm_cell(gouts, saved):
    gates, tanh_c, c_prev = saved
    gh, gc = gouts
    if gh is None:
        gh = np.zeros_like(tanh_c)
    gpre, gc_prev = kernels.lstm_gates_backward(gates, tanh_c, c_prev, gh, gc)
    return gpre, gc_prev


def lstm_cell(preact, c_prev):
    """Fused LSTM cell pointwise block: preact (B,4n) already holds
    x@Wx + h@Wh + b with gate order (input, forget, cell, output).
    Returns (h, c); dispatched to the compiled backend when available."""
    _check_2d("lstm_cell", preact)
    _check_2d("lstm_cell", c_prev)
    if preact.data.shape != (c_prev.data.shape[0], 4 * c_prev.data.shape[1]):
        raise ShapeError(
            f"lstm_cell: preact {preact.data.shape} vs state {c_prev.data.shape}")
    h_data, c_data, gates, tanh_c = kernels.lstm_gates(preact.data,
                                                       c_prev.data)
    tape = preact.tape
    h = tape._new_node(h_data)
    c = tape._new_node(c_data)
    tape.records.append(((h.node, c.node), (preact.node, c_prev.node),
                         _bw_lstm_cell, (gates, tanh_c, c_prev.data)))
    return h, c


def _bw_lstm_sequence(gouts, saved):
    gates, tanh_c, c_cat, h_cat, h0, c0, wr, batch = saved
    return kernels.lstm_layer_backward(gouts[0], gates, tanh_c, c_cat,
                                       h_cat, h0, c0, wr, batch)


def lstm_sequence(xw, w_rec, bias, h0, c0, batch):
    """One whole LSTM layer over a window, as a single record.

    xw is the pre-computed input contribution for every timestep,
    (s*B, 4n) with rows grouped step-major; the recurrent matmul and
    gate math run step by step inside the layer kernel (backward does
    its own truncated BPTT there). Returns the step-major hidden
    outputs (s*B, n) plus the final (h, c) as plain arrays.
    """
    _check_2d("lstm_sequence", xw)
    n = c0.data.shape[1]
    total, four_n = xw.data.shape
    if four_n != 4 * n or total % batch:
        raise ShapeError(
            f"lstm_sequence: xw {xw.data.shape} does not fit state "
            f"{c0.data.shape} with batch {batch}")
    h_cat, c_cat, gates, tanh_c, h_fin, c_fin = kernels.lstm_layer_forward(
        xw.data, w_rec.data, bias.data, h0.data, c0.data, batch)
    out = xw.tape._record(
        h_cat, (xw, w_rec, bias, h0, c0), _bw_lstm_sequence,
        (gates, tanh_c, c_cat, h_cat, h0.data, c0.data, w_rec.data, batch))
    return out, h_fin, c_fin
