"""Kernel backend selection.

The compiled extension is used when it imports; setting the environment
variable ``CONTACTFIELD_PURE_PYTHON=1`` forces the numpy fallback.
"""

import os

from contactfield import _fallback

if os.environ.get("CONTACTFIELD_PURE_PYTHON", "") not in ("", "0"):
    kernels = _fallback
    NAME = "python"
else:
    try:
        from contactfield import _kernels as kernels
        NAME = "cython"
    except ImportError:  # extension not built
        kernels = _fallback
        NAME = "python"


def use(name):
    """Switch the active backend at runtime (``"cython"`` or ``"python"``)."""
    global kernels, NAME
    if name == "python":
        kernels = _fallback
    elif name == "cython":
        from contactfield import _kernels
        kernels = _kernels
    else:
        raise ValueError(f"unknown backend {name!r}")
    NAME = name


def available():
    names = ["python"]
    try:
        from contactfield import _kernels  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names
