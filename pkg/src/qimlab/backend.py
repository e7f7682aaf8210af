"""Kernel backend selection.

The hot inner loops (Kubo tuple enumeration and the Monte-Carlo trace-product
chain) exist twice: a numba ``@njit`` version and a vectorised pure-numpy
version.  The environment variable ``QIMLAB_BACKEND`` picks one:

    QIMLAB_BACKEND=numba    force the jitted kernels (error if numba missing)
    QIMLAB_BACKEND=numpy    force the numpy fallback
    QIMLAB_BACKEND=auto     numba when importable, numpy otherwise (default)

Both paths are exact (the numpy path skips the subtree pruning, which only
drops terms below 1e-16 of the running scale), so results agree to roundoff;
``benchmarks/bench_kernels.py`` compares their speed.
"""

import os

ENV_VAR = "QIMLAB_BACKEND"

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - exercised via QIMLAB_BACKEND=numpy
    HAS_NUMBA = False


def backend_name() -> str:
    """Resolve the active backend ('numba' or 'numpy'), honouring the env flag."""
    choice = os.environ.get(ENV_VAR, "auto").strip().lower()
    if choice not in ("auto", "numba", "numpy"):
        raise ValueError(f"{ENV_VAR} must be auto|numba|numpy, got {choice!r}")
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not HAS_NUMBA:
            raise RuntimeError(f"{ENV_VAR}=numba but numba is not importable")
        return "numba"
    return "numba" if HAS_NUMBA else "numpy"


def use_numba() -> bool:
    return backend_name() == "numba"
