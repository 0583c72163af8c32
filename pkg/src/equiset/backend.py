"""Kernel backend selection.

Hot inner loops (pair-orbit flood fill, circular convolution) exist in two
variants: numba-jitted and pure numpy.  Set EQUISET_BACKEND=numpy to force the
fallback; the default is numba when it imports cleanly.
"""

import os

_env = os.environ.get("EQUISET_BACKEND", "").strip().lower()

if _env in ("numpy", "python"):
    HAS_NUMBA = False
elif _env in ("", "numba", "jit"):
    try:
        import numba  # noqa: F401

        HAS_NUMBA = True
    except ImportError:
        if _env:
            raise
        HAS_NUMBA = False
else:
    raise ValueError(
        f"EQUISET_BACKEND={_env!r}: expected 'numba' or 'numpy'"
    )

BACKEND = "numba" if HAS_NUMBA else "numpy"
