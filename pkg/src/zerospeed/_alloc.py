"""Keep freed heap memory in-process.

The image kernels allocate and free several multi-megabyte buffers per frame.
With glibc defaults those go straight back to the OS and every reuse pays
fresh page faults, which costs more than the arithmetic on some VMs.
"""
import ctypes
import sys

_M_TRIM_THRESHOLD = -1
_M_MMAP_THRESHOLD = -3
_done = False


def retain_freed_memory() -> bool:
    """Raise glibc's trim / mmap thresholds once per process. No-op elsewhere."""
    global _done
    if _done:
        return True
    if not sys.platform.startswith("linux"):
        return False
    try:
        libc = ctypes.CDLL("libc.so.6")
        ok = libc.mallopt(_M_MMAP_THRESHOLD, 32 << 20) and libc.mallopt(_M_TRIM_THRESHOLD, 512 << 20)
    except (OSError, AttributeError):
        return False
    _done = bool(ok)
    return _done
