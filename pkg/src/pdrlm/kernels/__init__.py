"""Hot-kernel backend selection.

The compiled Cython core is preferred; the pure-numpy fallback is used
when the extension is missing or when PDRLM_PURE=1 is set. Both expose
the same functions (see pykernels for the contract).
"""

import os

from . import pykernels

if os.environ.get("PDRLM_PURE") == "1":
    _impl = pykernels
else:
    try:
        from . import _ckernels as _impl
    except ImportError:
        _impl = pykernels

BACKEND = _impl.BACKEND

sigmoid = _impl.sigmoid
softmax_rows = _impl.softmax_rows
softmax_rows_backward = _impl.softmax_rows_backward
cross_entropy_rows = _impl.cross_entropy_rows
cross_entropy_rows_backward = _impl.cross_entropy_rows_backward
lstm_gates = _impl.lstm_gates
lstm_gates_backward = _impl.lstm_gates_backward
lstm_layer_forward = _impl.lstm_layer_forward
lstm_layer_backward = _impl.lstm_layer_backward


def get_backend(name=None):
    """Return a kernel module by name: 'compiled', 'python', or the
    active default when name is None. Used by the benchmark and parity
    tests to address both implementations in one process."""
    if name is None:
        return _impl
    if name == "python":
        return pykernels
    if name == "compiled":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown kernel backend {name!r}")
