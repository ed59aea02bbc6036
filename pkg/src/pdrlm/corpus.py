"""Corpus ingestion: vocabularies, encoding, contiguous batching, and
BPTT windows with the randomized-length policy used during training."""

from dataclasses import dataclass, field

import numpy as np


class VocabularyError(ValueError):
    pass


EOL_TOKEN = "<eol>"
UNK_TOKEN = "<unk>"


@dataclass
class Vocabulary:
    level: str                  # "word" | "char"
    tokens: list
    index: dict = field(repr=False)
    unk_id: int = None

    @property
    def size(self):
        return len(self.tokens)

    def id_of(self, token):
        i = self.index.get(token)
        if i is None:
            if self.level == "word":
                return self.unk_id
            raise VocabularyError(f"token {token!r} not in character vocabulary")
        return i


def read_text(path):
    """Read a UTF-8 corpus file; decoding failures report the byte offset."""
    raw = open(path, "rb").read()
    try:
        return raw.decode("utf-8")
    except UnicodeDecodeError as exc:
        raise VocabularyError(
            f"{path}: invalid UTF-8 at byte offset {exc.start}") from exc


def _word_stream(text):
    for line in text.split("\n"):
        yield from line.split()
        yield EOL_TOKEN


def build_vocab(text, level, min_count=1):
    """Build a token<->id bijection.

    Word level tokenizes on whitespace, appends an end-of-line token per
    newline, maps words rarer than min_count to the unknown token, and
    always includes the unknown token. Character level assigns one id
    per distinct code point. Ids are dense 0..size-1, assigned in
    (frequency desc, token asc) order for words and code-point order for
    characters, so vocabulary construction is deterministic.
    """
    if not text:
        raise VocabularyError("cannot build a vocabulary from empty text")
    if level == "char":
        tokens = sorted(set(text))
        index = {t: i for i, t in enumerate(tokens)}
        return Vocabulary("char", tokens, index)
    if level != "word":
        raise VocabularyError(f"unknown vocabulary level {level!r}")
    counts = {}
    for tok in _word_stream(text):
        counts[tok] = counts.get(tok, 0) + 1
    kept = [t for t, c in counts.items() if c >= min_count]
    kept.sort(key=lambda t: (-counts[t], t))
    if UNK_TOKEN not in counts or counts[UNK_TOKEN] < min_count:
        kept.append(UNK_TOKEN)
    index = {t: i for i, t in enumerate(kept)}
    return Vocabulary("word", kept, index, unk_id=index[UNK_TOKEN])


def encode(text, vocab):
    """Map text to an int64 id sequence. Word level sends out-of-vocabulary
    words to the unknown id; character level rejects unseen code points."""
    if vocab.level == "char":
        ids = np.empty(len(text), dtype=np.int64)
        for pos, ch in enumerate(text):
            i = vocab.index.get(ch)
            if i is None:
                raise VocabularyError(
                    f"unseen character {ch!r} at position {pos}")
            ids[pos] = i
        return ids
    return np.array([vocab.id_of(t) for t in _word_stream(text)],
                    dtype=np.int64)


def decode(ids, vocab):
    if vocab.level == "char":
        return "".join(vocab.tokens[i] for i in ids)
    words = [vocab.tokens[i] for i in ids]
    lines, cur = [], []
    for w in words:
        if w == EOL_TOKEN:
            lines.append(" ".join(cur))
            cur = []
        else:
            cur.append(w)
    if cur:
        lines.append(" ".join(cur))
    return "\n".join(lines)


_ESCAPES = {"\\": "\\\\", "\n": "\\n", "\t": "\\t", "\r": "\\r", " ": "\\s"}
_UNESCAPES = {v: k for k, v in _ESCAPES.items()}


def save_vocab(vocab, path):
    """One token per line, line number = id. Whitespace code points are
    escaped so character vocabularies survive the line format."""
    with open(path, "w", encoding="utf-8") as fh:
        for tok in vocab.tokens:
            fh.write("".join(_ESCAPES.get(c, c) for c in tok) + "\n")


def load_vocab(path, level):
    tokens = []
    with open(path, encoding="utf-8") as fh:
        for line in fh.read().split("\n")[:-1]:
            out, i = [], 0
            while i < len(line):
                if line[i] == "\\" and i + 1 < len(line):
                    out.append(_UNESCAPES[line[i:i + 2]])
                    i += 2
                else:
                    out.append(line[i])
                    i += 1
            tokens.append("".join(out))
    index = {t: i for i, t in enumerate(tokens)}
    unk = index.get(UNK_TOKEN) if level == "word" else None
    return Vocabulary(level, tokens, index, unk_id=unk)


class BatchStreams:
    """B contiguous, non-overlapping id streams of equal length, plus a
    shared window cursor."""

    def __init__(self, data):
        self.data = data
        self.cursor = 0

    @property
    def batch_size(self):
        return self.data.shape[0]

    @property
    def length(self):
        return self.data.shape[1]

    def reset(self):
        self.cursor = 0


def batchify(ids, batch_size):
    ids = np.asarray(ids, dtype=np.int64)
    if batch_size < 1:
        raise ValueError(f"batch_size must be positive, got {batch_size}")
    if ids.size < 2 * batch_size:
        raise ValueError(
            f"need at least {2 * batch_size} tokens for batch size "
            f"{batch_size}, got {ids.size}")
    length = ids.size // batch_size
    return BatchStreams(ids[:length * batch_size].reshape(batch_size, length))


@dataclass
class TokenWindow:
    inputs: np.ndarray     # (B, s); inputs[b][t] is the past-decode target
    targets: np.ndarray    # (B, s); the token following inputs[b][t]
    lr_scale: float = 1.0

    @property
    def length(self):
        return self.inputs.shape[1]


@dataclass
class WindowPolicy:
    """Window-length policy: fixed for evaluation, randomized for
    training (mean base with prob 0.95 else base/2, normal with std 5,
    clamped to [5, 2*base]; learning rate scaled by s/base)."""
    base: int
    randomized: bool = False
    half_prob: float = 0.05
    std: float = 5.0

    def draw(self, rng):
        if not self.randomized:
            return self.base, 1.0
        mean = self.base if rng.random() >= self.half_prob else self.base // 2
        s = int(round(rng.normal(mean, self.std)))
        s = max(5, min(2 * self.base, s))
        return s, s / self.base


def next_window(streams, policy, rng=None):
    """Emit the next window and advance the cursor; None at end of epoch.

    Targets are the inputs shifted by one token, so the last stream
    position only ever appears as a target.
    """
    if streams.cursor >= streams.length - 1:
        return None
    s, lr_scale = policy.draw(rng)
    s = min(s, streams.length - 1 - streams.cursor)
    lo = streams.cursor
    inputs = streams.data[:, lo:lo + s]
    targets = streams.data[:, lo + 1:lo + 1 + s]
    streams.cursor += s
    return TokenWindow(inputs, targets, lr_scale)


def iter_windows(streams, policy, rng=None):
    streams.reset()
    while True:
        w = next_window(streams, policy, rng)
        if w is None:
            return
        yield w
