"""Kernel backend selection.

The hot numeric loops (multilinear interpolation, semi-Lagrangian sweeps,
per-node characteristic integration) exist twice: a numba ``@njit`` version
and a vectorized pure-numpy twin.  The active backend is chosen once per
process from the ``DENSYN_BACKEND`` environment variable:

    DENSYN_BACKEND=auto    use numba when importable, else numpy (default)
    DENSYN_BACKEND=numba   require numba, fail loudly if missing
    DENSYN_BACKEND=numpy   force the pure-numpy path

``densyn.bench`` compares the two paths on identical inputs.
"""

import os

_VALID = ("auto", "numba", "numpy")

_numba_ok = False
try:
    import numba  # noqa: F401

    _numba_ok = True
except ImportError:
    pass


def backend_name() -> str:
    """Resolve the active backend name ("numba" or "numpy")."""
    choice = os.environ.get("DENSYN_BACKEND", "auto").strip().lower()
    if choice not in _VALID:
        raise ValueError(
            f"DENSYN_BACKEND must be one of {_VALID}, got {choice!r}"
        )
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _numba_ok:
            raise ImportError("DENSYN_BACKEND=numba but numba is not importable")
        return "numba"
    return "numba" if _numba_ok else "numpy"


def get_kernels():
    """Return the kernel module for the active backend."""
    if backend_name() == "numba":
        from densyn import kernels_numba

        return kernels_numba
    from densyn import kernels_numpy

    return kernels_numpy


def set_threads(n: int | None) -> int:
    """Pin the numba thread count; returns the count in effect.

    The numpy backend is single-threaded (BLAS aside); the request is
    recorded but has no effect there.
    """
    if n is None:
        env = os.environ.get("DENSYN_THREADS")
        n = int(env) if env else 0
    if backend_name() == "numba" and n and n > 0:
        import numba

        n = max(1, min(int(n), numba.config.NUMBA_NUM_THREADS))
        numba.set_num_threads(n)
        return n
    if backend_name() == "numba":
        import numba

        return numba.get_num_threads()
    return 1
