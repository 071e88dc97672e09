"""Kernel backend selection.

The environment variable ``CADA_BACKEND`` picks the implementation of the
hot kernels used by training and inference:

* ``numba`` - JIT-compiled kernels (requires numba)
* ``numpy`` - pure-numpy fallback
* ``auto``  - numba when importable, else numpy (the default)

The selected module is bound once at import time as ``active``; everything
downstream imports kernels through that binding so a process uses exactly
one backend. ``benchmarks/backend_bench.py`` times the two side by side.
"""

import os

from . import numpy_backend

_choice = os.environ.get("CADA_BACKEND", "auto").strip().lower()

if _choice not in ("auto", "numba", "numpy"):
    raise ValueError(
        f"CADA_BACKEND={_choice!r} not recognized; use 'auto', 'numba' or 'numpy'"
    )

if _choice == "numpy":
    active = numpy_backend
else:
    try:
        from . import numba_backend

        active = numba_backend
    except ImportError:
        if _choice == "numba":
            raise ImportError(
                "CADA_BACKEND=numba but numba is not importable; "
                "install numba or set CADA_BACKEND=numpy"
            )
        active = numpy_backend


def backend_name():
    """Name of the kernel backend this process is running on."""
    return active.NAME
