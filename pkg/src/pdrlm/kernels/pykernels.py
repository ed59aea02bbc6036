"""Pure-numpy implementations of the hot kernels.

Same contracts as the compiled twin in ``_ckernels.pyx``: float64
C-contiguous arrays in, fresh arrays out. Gate layout for the LSTM cell
is four blocks of width n in the order input, forget, cell, output.
"""

import numpy as np

BACKEND = "python"


def sigmoid(x):
    # branch on sign so exp() never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def softmax_rows(x):
    """Row softmax with max-subtraction; rows sum to 1."""
    shifted = x - x.max(axis=1, keepdims=True)
    np.exp(shifted, out=shifted)
    shifted /= shifted.sum(axis=1, keepdims=True)
    return shifted


def softmax_rows_backward(probs, gout):
    dot = np.sum(probs * gout, axis=1, keepdims=True)
    return probs * (gout - dot)


def cross_entropy_rows(logits, targets):
    """Per-row negative log-likelihood via fused log-sum-exp.

    Returns (nll, lse) where lse is the per-row log-sum-exp (saved for
    the backward pass). Probabilities are never materialized here.
    """
    m = logits.shape[0]
    mx = logits.max(axis=1)
    lse = mx + np.log(np.exp(logits - mx[:, None]).sum(axis=1))
    nll = lse - logits[np.arange(m), targets]
    return nll, lse


def cross_entropy_rows_backward(logits, targets, lse, scale):
    """d(nll)/d(logits) summed with weight ``scale`` per row."""
    m = logits.shape[0]
    g = np.exp(logits - lse[:, None])
    g[np.arange(m), targets] -= 1.0
    g *= scale
    return g


def lstm_gates(preact, c_prev):
    """Fused LSTM cell pointwise math.

    preact is the (B, 4n) gate pre-activation (already x@Wx + h@Wh + b);
    c_prev is (B, n). Returns (h, c, gates, tanh_c); gates holds the
    post-activation values needed by the backward pass.
    """
    n = c_prev.shape[1]
    gates = np.empty_like(preact)
    gates[:, :n] = sigmoid(preact[:, :n])
    gates[:, n:2 * n] = sigmoid(preact[:, n:2 * n])
    gates[:, 2 * n:3 * n] = np.tanh(preact[:, 2 * n:3 * n])
    gates[:, 3 * n:] = sigmoid(preact[:, 3 * n:])
    i = gates[:, :n]
    f = gates[:, n:2 * n]
    g = gates[:, 2 * n:3 * n]
    o = gates[:, 3 * n:]
    c = f * c_prev + i * g
    tanh_c = np.tanh(c)
    h = o * tanh_c
    return h, c, gates, tanh_c


def lstm_gates_backward(gates, tanh_c, c_prev, gh, gc):
    """Backward of lstm_gates; returns (gpreact, gc_prev)."""
    n = c_prev.shape[1]
    i = gates[:, :n]
    f = gates[:, n:2 * n]
    g = gates[:, 2 * n:3 * n]
    o = gates[:, 3 * n:]
    dc = gh * o * (1.0 - tanh_c * tanh_c)
    if gc is not None:
        dc = dc + gc
    gpre = np.empty_like(gates)
    gpre[:, :n] = dc * g * i * (1.0 - i)
    gpre[:, n:2 * n] = dc * c_prev * f * (1.0 - f)
    gpre[:, 2 * n:3 * n] = dc * i * (1.0 - g * g)
    gpre[:, 3 * n:] = gh * tanh_c * o * (1.0 - o)
    gc_prev = dc * f
    return gpre, gc_prev


def lstm_layer_forward(xw, wr, b, h0, c0, batch):
    """One LSTM layer over a whole window.

    xw is the batched input contribution (s*B, 4n), rows step-major.
    Returns (h_cat, c_cat, gates, tanh_c, h_final, c_final); the cat
    arrays are the per-step values the backward pass needs.
    """
    total, four_n = xw.shape
    n = four_n // 4
    steps = total // batch
    h_cat = np.empty((total, n))
    c_cat = np.empty((total, n))
    gates = np.empty((total, four_n))
    tanh_c = np.empty((total, n))
    h, c = h0, c0
    for t in range(steps):
        lo = t * batch
        hi = lo + batch
        pre = xw[lo:hi] + h @ wr
        pre += b
        h, c, g_t, tc = lstm_gates(pre, c)
        h_cat[lo:hi] = h
        c_cat[lo:hi] = c
        gates[lo:hi] = g_t
        tanh_c[lo:hi] = tc
    return h_cat, c_cat, gates, tanh_c, h.copy(), c.copy()


def lstm_layer_backward(g_hcat, gates, tanh_c, c_cat, h_cat, h0, c0, wr,
                        batch):
    """Truncated BPTT through one layer; returns
    (gxw, gwr, gb, gh0, gc0)."""
    total = h_cat.shape[0]
    steps = total // batch
    gxw = np.empty_like(gates)
    gwr = np.zeros_like(wr)
    gb = np.zeros(gates.shape[1])
    gh = np.zeros((batch, h_cat.shape[1]))
    gc = None
    for t in range(steps - 1, -1, -1):
        lo = t * batch
        hi = lo + batch
        gh = gh + g_hcat[lo:hi]
        c_prev = c_cat[lo - batch:lo] if t else c0
        h_prev = h_cat[lo - batch:lo] if t else h0
        gpre, gc = lstm_gates_backward(gates[lo:hi], tanh_c[lo:hi],
                                       c_prev, gh, gc)
        gxw[lo:hi] = gpre
        gwr += h_prev.T @ gpre
        gb += gpre.sum(axis=0)
        gh = gpre @ wr.T
    return gxw, gwr, gb, gh, gc
