"""Weight-tied LSTM language models with past-decode regularization.

Subpackages/modules:
    kernels    hot kernels (compiled core or numpy fallback)
    autodiff   tape-based reverse-mode differentiation
    gradcheck  finite-difference gradient oracle
    corpus     vocabularies, encoding, contiguous batching, windows
    model      the LM, the past-decode head, dropout variants, losses
    optim      SGD / averaged SGD with non-monotone trigger
    evalsuite  perplexity, bits-per-character, cache scoring, histograms
    checkpoint binary parameter container
    config     run configuration and the flat key=value file format
    train      training loop, ablation arms, hyperparameter sweeps
    cli        command-line entry point
"""

__version__ = "0.1.0"
