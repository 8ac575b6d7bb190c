"""Kernel backend selection.

The hot numeric kernels exist twice: a numba @njit build and a pure-numpy
build. `DFLSIM_BACKEND` picks one at import time:

  auto  (default) - numba if importable, numpy otherwise
  numba           - require the JIT build
  numpy           - force the fallback

`benchmarks/bench_kernels.py` compares the two.
"""

import os

_choice = os.environ.get("DFLSIM_BACKEND", "auto").strip().lower() or "auto"

if _choice == "auto":
    try:
        from . import _kernels_numba as kernels

        BACKEND = "numba"
    except ImportError:
        from . import _kernels_numpy as kernels

        BACKEND = "numpy"
elif _choice == "numba":
    from . import _kernels_numba as kernels

    BACKEND = "numba"
elif _choice == "numpy":
    from . import _kernels_numpy as kernels

    BACKEND = "numpy"
else:
    raise ValueError(
        f"DFLSIM_BACKEND={_choice!r} not recognized (use auto, numba or numpy)"
    )


def backend_name() -> str:
    return BACKEND
