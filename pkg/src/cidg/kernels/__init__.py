"""Hot-kernel backend selection.

The compiled Cython core is preferred when importable; the numpy fallback is
always available. `CIDG_KERNELS=py` forces the fallback, `CIDG_KERNELS=c`
demands the compiled core (import error if it was not built). Both backends
expose the same functions and agree to float tolerance; each is deterministic
run to run, which is what the pipeline's byte-identity guarantees rest on.
"""

import os

from . import _numpy

_choice = os.environ.get("CIDG_KERNELS", "auto").lower()

if _choice == "py":
    _impl = _numpy
    BACKEND = "numpy"
elif _choice == "c":
    from . import _core as _impl  # type: ignore[no-redef]

    BACKEND = "cython"
elif _choice == "auto":
    try:
        from . import _core as _impl  # type: ignore[no-redef]

        BACKEND = "cython"
    except ImportError:
        _impl = _numpy
        BACKEND = "numpy"
else:
    raise RuntimeError(f"CIDG_KERNELS must be 'auto', 'c' or 'py', got {_choice!r}")

layer_norm_fwd = _impl.layer_norm_fwd
layer_norm_bwd = _impl.layer_norm_bwd
masked_softmax_fwd = _impl.masked_softmax_fwd
softmax_bwd = _impl.softmax_bwd
relu_fwd = _impl.relu_fwd
relu_bwd = _impl.relu_bwd
cross_entropy_fwd_bwd = _impl.cross_entropy_fwd_bwd
adamw_update = _impl.adamw_update
