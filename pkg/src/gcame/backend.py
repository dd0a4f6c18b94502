"""Kernel backend selection.

Hot numeric kernels ship in two flavors: numba-jitted loops and pure
numpy. The numba path is the default whenever numba imports; setting
the environment variable GCAME_NUMBA to 0/false/no/off forces the
numpy fallback (useful for debugging and for benchmarking the two
paths against each other).
"""

import os

_flag = os.environ.get("GCAME_NUMBA", "1").strip().lower()
NUMBA_REQUESTED = _flag not in ("0", "false", "no", "off")

try:
    import numba  # noqa: F401

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAVE_NUMBA = False

USE_NUMBA = NUMBA_REQUESTED and HAVE_NUMBA


def backend_name() -> str:
    return "numba" if USE_NUMBA else "numpy"
