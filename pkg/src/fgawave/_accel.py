"""Backend switch for the hot loops.

Numba is used when importable unless ``FGAWAVE_DISABLE_NUMBA`` is set to a
non-empty value other than ``0``.  Every compiled kernel has a numpy
counterpart with the same contract.
"""

import logging
import os

logger = logging.getLogger(__name__)

_flag = os.environ.get("FGAWAVE_DISABLE_NUMBA", "")
_disabled = _flag not in ("", "0")

try:
    if _disabled:
        raise ImportError("disabled by FGAWAVE_DISABLE_NUMBA")
    import numba

    if "NUMBA_THREADING_LAYER" not in os.environ:
        # skip probing an outdated TBB install
        numba.config.THREADING_LAYER = "workqueue"
    njit = numba.njit
    prange = numba.prange
    HAVE_NUMBA = True
except ImportError as exc:  # pragma: no cover - depends on environment
    logger.info("numba unavailable (%s); using numpy kernels", exc)
    numba = None
    HAVE_NUMBA = False

    def njit(*args, **kwargs):
        def wrap(func):
            return func
        if args and callable(args[0]):
            return args[0]
        return wrap

    prange = range


def use_numba() -> bool:
    return HAVE_NUMBA


def set_threads(n: int | None) -> None:
    if n and HAVE_NUMBA:
        numba.set_num_threads(min(int(n), numba.config.NUMBA_NUM_THREADS))


def num_threads() -> int:
    return numba.get_num_threads() if HAVE_NUMBA else 1
