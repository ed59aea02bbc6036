"""The weight-tied LSTM language model, the past-decode head, the
dropout variants, and the combined training loss.

Forward passes are built on a fresh Tape per window. Dropout is applied
only through externally supplied masks (see sample_masks), so a forward
pass is deterministic given (params, window, state, masks) - in
particular frozen masks make it differentiable-checkable against the
finite-difference oracle.
"""

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tape


class ModelError(ValueError):
    pass


class Param:
    """Named trainable array; decay=False exempts it from weight decay."""

    __slots__ = ("name", "data", "decay")

    def __init__(self, name, data, decay=True):
        self.name = name
        self.data = np.asarray(data, dtype=np.float64)
        self.decay = decay

    def __repr__(self):
        return f"Param({self.name!r}, shape={self.data.shape})"


@dataclass
class LstmLayer:
    w_in: Param    # (in_dim, 4n)
    w_rec: Param   # (n, 4n), recurrent; the weight-drop target
    bias: Param    # (4n,)

    @property
    def width(self):
        return self.w_rec.data.shape[0]


@dataclass
class ModelParams:
    embedding: Param            # (|W|, d); also the tied decoder weight
    layers: list
    dec_bias: Param             # (|W|,)
    decoder: Param = None       # untied decoder weight, None when tied

    @property
    def vocab_size(self):
        return self.embedding.data.shape[0]

    @property
    def emb_dim(self):
        return self.embedding.data.shape[1]

    @property
    def layer_dims(self):
        return tuple(l.width for l in self.layers)

    def all(self):
        out = [self.embedding]
        for l in self.layers:
            out.extend([l.w_in, l.w_rec, l.bias])
        out.append(self.dec_bias)
        if self.decoder is not None:
            out.append(self.decoder)
        return out


@dataclass
class PastDecodeHead:
    """Train-only decoding head: a single d->d dense layer with Tanh,
    reusing the embedding for the soft lookup and the output projection.
    Discarded from inference checkpoints."""
    proj: Param        # (d, d)
    proj_bias: Param   # (d,)
    out_bias: Param    # (|W|,)

    def all(self):
        return [self.proj, self.proj_bias, self.out_bias]

    def count(self):
        d = self.proj.data.shape[0]
        return d * d + d + self.out_bias.data.shape[0]


@dataclass
class DropoutSpec:
    p_word: float = 0.0    # drop whole input tokens
    p_embed: float = 0.0   # drop whole embedding rows
    p_layer: float = 0.0   # variational, between LSTM layers
    p_out: float = 0.0     # variational, on the final LSTM output
    p_wdrop: float = 0.0   # DropConnect on recurrent weights

    def __post_init__(self):
        for name in ("p_word", "p_embed", "p_layer", "p_out", "p_wdrop"):
            v = getattr(self, name)
            if not (0.0 <= v < 1.0):
                raise ModelError(f"{name} must be in [0, 1), got {v}")

    def any_active(self):
        return any((self.p_word, self.p_embed, self.p_layer, self.p_out,
                    self.p_wdrop))


@dataclass
class RegularizationSpec:
    lambda_pdr: float = 0.001
    alpha: float = 0.0
    beta: float = 0.0
    weight_decay: float = 0.0

    def __post_init__(self):
        for name in ("lambda_pdr", "alpha", "beta", "weight_decay"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0.0):
                raise ModelError(f"{name} must be finite and >= 0, got {v}")


def init_params(vocab_size, layer_dims, emb_dim, rng, tied=True):
    """Initialize model parameters and the past-decode head.

    Embeddings are uniform in [-0.1, 0.1]; LSTM weights and biases are
    uniform in [-1/sqrt(n), 1/sqrt(n)] for layer width n; the decoder
    bias, head projection bias and head output bias start at zero; the
    head projection is uniform in [-1/sqrt(d), 1/sqrt(d)]. The last
    layer width must equal the embedding dimension (the tied decoder
    needs h @ E^T to be well-formed).
    """
    layer_dims = tuple(int(n) for n in layer_dims)
    if any(n <= 0 for n in layer_dims) or emb_dim <= 0 or vocab_size <= 0:
        raise ModelError("all dimensions must be positive")
    if layer_dims[-1] != emb_dim:
        raise ModelError(
            f"last layer width {layer_dims[-1]} must equal embedding "
            f"dimension {emb_dim}")
    emb = Param("embedding", rng.uniform(-0.1, 0.1, (vocab_size, emb_dim)))
    layers = []
    in_dim = emb_dim
    for li, n in enumerate(layer_dims):
        bound = 1.0 / np.sqrt(n)
        layers.append(LstmLayer(
            Param(f"lstm{li}.w_in", rng.uniform(-bound, bound, (in_dim, 4 * n))),
            Param(f"lstm{li}.w_rec", rng.uniform(-bound, bound, (n, 4 * n))),
            Param(f"lstm{li}.bias", rng.uniform(-bound, bound, (4 * n,)),
                  decay=False)))
        in_dim = n
    dec_bias = Param("dec_bias", np.zeros(vocab_size), decay=False)
    decoder = None
    if not tied:
        decoder = Param("decoder", rng.uniform(-0.1, 0.1, (vocab_size, emb_dim)))
    params = ModelParams(emb, layers, dec_bias, decoder)
    bound = 1.0 / np.sqrt(emb_dim)
    head = PastDecodeHead(
        Param("head.proj", rng.uniform(-bound, bound, (emb_dim, emb_dim))),
        Param("head.proj_bias", np.zeros(emb_dim), decay=False),
        Param("head.out_bias", np.zeros(vocab_size), decay=False))
    return params, head


def init_state(params, batch):
    """Zero (h, c) per layer."""
    return [(np.zeros((batch, n)), np.zeros((batch, n)))
            for n in params.layer_dims]


def _bernoulli_mask(rng, p, shape):
    return (rng.random(shape) >= p) / (1.0 - p)


@dataclass
class WindowMasks:
    """One window's dropout masks; values are 0 or 1/(1-p).

    layer and out masks are variational: sampled once per window and
    applied unchanged at every timestep.
    """
    word: np.ndarray = None        # (B, s)
    embed: np.ndarray = None       # (|W|, 1)
    layer: list = field(default_factory=list)   # per boundary, (B, n)
    out: np.ndarray = None         # (B, d)
    wdrop: list = field(default_factory=list)   # per layer, (n, 4n)


def sample_masks(spec, params, batch, length, rngs):
    """Draw one window's masks. rngs maps each knob name ('word',
    'embed', 'layer', 'out', 'wdrop') to its own Generator so toggling
    one knob never shifts another knob's draws."""
    dims = params.layer_dims
    masks = WindowMasks()
    if spec.p_word > 0:
        masks.word = _bernoulli_mask(rngs["word"], spec.p_word, (batch, length))
    if spec.p_embed > 0:
        masks.embed = _bernoulli_mask(rngs["embed"], spec.p_embed,
                                      (params.vocab_size, 1))
    if spec.p_layer > 0:
        masks.layer = [_bernoulli_mask(rngs["layer"], spec.p_layer, (batch, n))
                       for n in dims[:-1]]
    else:
        masks.layer = [None] * (len(dims) - 1)
    if spec.p_out > 0:
        masks.out = _bernoulli_mask(rngs["out"], spec.p_out,
                                    (batch, params.emb_dim))
    if spec.p_wdrop > 0:
        masks.wdrop = [_bernoulli_mask(rngs["wdrop"], spec.p_wdrop, (n, 4 * n))
                       for n in dims]
    else:
        masks.wdrop = [None] * len(dims)
    return masks


@dataclass
class ForwardTrace:
    """One window's forward pass. Step-ordered quantities (logits,
    probabilities, hidden outputs) are stored as single step-major
    matrices of s*B rows: row t*B + b belongs to step t, stream b.
    """
    tape: Tape
    batch: int
    length: int
    logits: object               # (s*B, |W|) tensor
    raw_out: object              # (s*B, d) tensor, before output dropout
    dropped_out: object          # (s*B, d) tensor, after output dropout
    probs: object = None         # (s*B, |W|) tensor; only when requested
    pdr_logits: object = None    # filled by pdr_decode
    state: list = None           # carried (h, c) arrays, detached
    masks: WindowMasks = None
    _emb: object = None          # leaf handles for the decode head
    _emb_t: object = None
    _head: tuple = None

    def _rows(self, tensor, t):
        return tensor.data[t * self.batch:(t + 1) * self.batch]

    def step_logits(self, t):
        return self._rows(self.logits, t)

    def step_probs(self, t):
        return self._rows(self.probs, t)

    def step_raw(self, t):
        return self._rows(self.raw_out, t)


def _flat(matrix):
    """(B, s) window ids -> step-major (s*B,) to match trace rows."""
    return np.ascontiguousarray(matrix.T).ravel()


def forward_window(params, head, window, state, mode="train", masks=None,
                   want_probs=False):
    """Run the LSTM stack over one window on a fresh tape.

    Layers are processed whole-window (the input-side matmul is batched
    over timesteps; the recurrence runs inside one lstm_sequence record
    per layer). In eval mode all dropout is ignored. The carried (h, c)
    state is returned detached, so gradient never crosses window
    boundaries.
    """
    if mode not in ("train", "eval"):
        raise ModelError(f"mode must be 'train' or 'eval', got {mode!r}")
    if mode == "eval":
        masks = None
    if int(window.inputs.max()) >= params.vocab_size or \
       int(window.targets.max()) >= params.vocab_size:
        raise ModelError(
            f"window token ids exceed vocabulary size {params.vocab_size}")
    batch, s = window.inputs.shape

    tape = Tape()
    emb = tape.leaf(params.embedding.data, key=params.embedding)
    dec_w = emb
    if params.decoder is not None:
        dec_w = tape.leaf(params.decoder.data, key=params.decoder)
    dec_t = ad.transpose(dec_w)
    emb_t = dec_t if params.decoder is None else ad.transpose(emb)
    dec_bias = tape.leaf(params.dec_bias.data, key=params.dec_bias)

    lookup = emb
    if masks is not None and masks.embed is not None:
        lookup = ad.apply_mask(emb, masks.embed)

    x = ad.take_rows(lookup, _flat(window.inputs))      # (s*B, d)
    if masks is not None and masks.word is not None:
        x = ad.apply_mask(x, _flat(masks.word)[:, None])

    n_layers = len(params.layers)
    state_out = []
    for li, layer in enumerate(params.layers):
        w_in = tape.leaf(layer.w_in.data, key=layer.w_in)
        w_rec = tape.leaf(layer.w_rec.data, key=layer.w_rec)
        if masks is not None and masks.wdrop[li] is not None:
            w_rec = ad.apply_mask(w_rec, masks.wdrop[li])
        bias = tape.leaf(layer.bias.data, key=layer.bias)
        h0, c0 = state[li]
        x, h_fin, c_fin = ad.lstm_sequence(ad.matmul(x, w_in), w_rec, bias,
                                           tape.leaf(h0), tape.leaf(c0),
                                           batch)
        state_out.append((h_fin, c_fin))
        if li < n_layers - 1 and masks is not None \
                and masks.layer[li] is not None:
            x = ad.apply_mask(x, np.tile(masks.layer[li], (s, 1)))

    raw = x
    dropped = raw
    if masks is not None and masks.out is not None:
        dropped = ad.apply_mask(raw, np.tile(masks.out, (s, 1)))
    logits = ad.add_bias(ad.matmul(dropped, dec_t), dec_bias)
    probs = ad.softmax_rows(logits) if want_probs else None

    head_leafs = None
    if head is not None:
        head_leafs = (tape.leaf(head.proj.data, key=head.proj),
                      tape.leaf(head.proj_bias.data, key=head.proj_bias),
                      tape.leaf(head.out_bias.data, key=head.out_bias))
    return ForwardTrace(tape, batch, s, logits, raw, dropped, probs=probs,
                        state=state_out, masks=masks,
                        _emb=emb, _emb_t=emb_t, _head=head_leafs)


def pdr_decode(trace):
    """Decode the previous input token from the predicted next-token
    distribution: soft embedding lookup of the probability vector, a
    d->d dense layer with Tanh, then the tied output projection.
    Gradient flows back through the probabilities into the main model;
    that flow is the whole point, so nothing is detached.
    """
    if trace._head is None:
        raise ModelError("past-decode head absent (inference checkpoint)")
    if trace.probs is None:
        raise ModelError("forward pass did not compute probabilities")
    proj, proj_bias, out_bias = trace._head
    v = ad.matmul(trace.probs, trace._emb)                 # soft lookup
    u = ad.tanh(ad.add_bias(ad.matmul(v, proj), proj_bias))
    trace.pdr_logits = ad.add_bias(ad.matmul(u, trace._emb_t), out_bias)
    return trace.pdr_logits


@dataclass
class LossBreakdown:
    ce: float
    pdr: float
    ar: float
    tar: float
    total: float
    node: object = None   # scalar tape tensor; backward() entry point


def compute_loss(trace, window, reg):
    """Combined training loss for one window.

    ce   mean over B*s of -log p(next token)        (logits path, fused)
    pdr  mean over B*s of -log p_decode(input token) (when lambda_pdr > 0)
    ar   mean square of the dropped final outputs    (when alpha > 0)
    tar  mean square of consecutive raw-output diffs (when beta > 0)
    total = ce + lambda_pdr*pdr + alpha*ar + beta*tar; weight decay is
    the optimizer's job, not part of this node.
    """
    s = window.length
    batch = window.inputs.shape[0]
    if trace.logits.data.shape[0] != s * batch:
        raise ModelError(
            f"trace holds {trace.logits.data.shape[0]} rows, window has "
            f"{s}x{batch} tokens")
    ce = ad.cross_entropy_from_logits(trace.logits, _flat(window.targets))
    total = ce
    pdr_val = 0.0
    if reg.lambda_pdr > 0:
        if trace.pdr_logits is None:
            pdr_decode(trace)
        pdr = ad.cross_entropy_from_logits(trace.pdr_logits,
                                           _flat(window.inputs))
        total = ad.add(total, ad.scale(pdr, reg.lambda_pdr))
        pdr_val = float(pdr.data)
    ar_val = tar_val = 0.0
    if reg.alpha > 0:
        ar = ad.mean_all(ad.hadamard(trace.dropped_out, trace.dropped_out))
        total = ad.add(total, ad.scale(ar, reg.alpha))
        ar_val = float(ar.data)
    if reg.beta > 0 and s > 1:
        rows = trace.raw_out.data.shape[0]
        diff = ad.sub(ad.slice_rows(trace.raw_out, batch, rows),
                      ad.slice_rows(trace.raw_out, 0, rows - batch))
        tar = ad.mean_all(ad.hadamard(diff, diff))
        total = ad.add(total, ad.scale(tar, reg.beta))
        tar_val = float(tar.data)
    return LossBreakdown(float(ce.data), pdr_val, ar_val, tar_val,
                         float(total.data), node=total)


def parameter_counts(params, head, include_head=True):
    """Exact parameter counts; the head adds d^2 + d + |W|."""
    model = sum(p.data.size for p in params.all())
    head_n = head.count() if head is not None else 0
    total = model + (head_n if include_head else 0)
    return {"model": model, "head": head_n, "total": total}
