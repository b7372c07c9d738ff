"""Backend switch for the compiled kernels.

Set ``PCQA_DISABLE_NUMBA=1`` before import to force the pure-numpy paths.
Numba is also skipped silently when it is not importable.
"""
import os

_DISABLED = os.environ.get("PCQA_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}

try:
    if _DISABLED:
        raise ImportError("disabled by PCQA_DISABLE_NUMBA")
    from numba import njit

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        # Bare decorator or decorator factory, both return the function untouched.
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda fn: fn


def backend() -> str:
    return "numba" if HAS_NUMBA else "numpy"
