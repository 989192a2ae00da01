"""Recurrent hot loops, compiled when available.

The Cython extension is used if it imports; otherwise the numpy reference in
``_pykernels`` is. Set ``MULTIVOX_KERNELS=python`` to force the fallback.
"""

import os

from . import _pykernels

python_backend = _pykernels

compiled_backend = None
if os.environ.get("MULTIVOX_KERNELS", "").lower() != "python":
    try:
        from . import _ckernels as compiled_backend
    except ImportError:  # extension not built
        compiled_backend = None

backend = compiled_backend or _pykernels
BACKEND = "cython" if compiled_backend is not None else "python"

gru_forward = backend.gru_forward
gru_backward = backend.gru_backward
lstm_forward = backend.lstm_forward
lstm_backward = backend.lstm_backward
wavernn_generate = backend.wavernn_generate
