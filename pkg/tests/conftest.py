import dataclasses

import numpy as np
import pytest

from pdrlm.config import RunConfig


def markov_text(n_chars, seed, alphabet="abcdefghijklmnop", order=2):
    """Synthetic character corpus with learnable short-range structure:
    a random order-k Markov chain over a small alphabet plus spaces."""
    rng = np.random.default_rng(seed)
    syms = list(alphabet) + [" "]
    k = len(syms)
    # sparse-ish transition tables make the structure learnable
    table = rng.dirichlet(np.full(k, 0.12), size=k ** order)
    state = 0
    out = []
    for _ in range(n_chars):
        nxt = rng.choice(k, p=table[state])
        out.append(syms[nxt])
        state = (state * k + nxt) % (k ** order)
    return "".join(out)


def write_splits(tmp_path, train_text, valid_text, test_text):
    paths = {}
    for name, text in (("train", train_text), ("valid", valid_text),
                       ("test", test_text)):
        p = tmp_path / f"{name}.txt"
        p.write_text(text, encoding="utf-8")
        paths[name] = str(p)
    return paths


def char_config(paths, **overrides):
    base = dict(
        train_path=paths["train"], valid_path=paths["valid"],
        test_path=paths["test"], level="char",
        layer_dims=(24, 24, 16), emb_dim=16,
        batch_size=8, eval_batch_size=4,
        window=20, window_randomized=True, eval_window=20,
        lambda_pdr=0.1, alpha=0.0, beta=0.0, weight_decay=0.0,
        lr=4.0, clip=0.25, nonmono=5, epochs=2,
        finetune=False, finetune_epochs=0, seed=7,
    )
    base.update(overrides)
    return RunConfig(**base)


@pytest.fixture
def tiny_corpus(tmp_path):
    train = markov_text(6000, seed=0)
    valid = markov_text(900, seed=1)
    test = markov_text(900, seed=2)
    return write_splits(tmp_path, train, valid, test)


@pytest.fixture
def tiny_config(tiny_corpus):
    return char_config(tiny_corpus)
