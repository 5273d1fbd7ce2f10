"""Process-level performance knobs."""

import ctypes
import ctypes.util
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def tune_allocator(mmap_threshold: int = 64 << 20) -> bool:
    """Keep large numpy temporaries on the heap instead of fresh mmaps.

    The training loop allocates many short-lived arrays of a few hundred KB;
    with glibc defaults each one is a new mapping plus page faults.  No-op
    outside glibc.
    """
    global _done
    if _done:
        return True
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL(ctypes.util.find_library("c") or "libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, mmap_threshold) and libc.mallopt(_M_TRIM_THRESHOLD, 4 * mmap_threshold)
    except (OSError, AttributeError):
        return False
    _done = bool(ok)
    return _done
