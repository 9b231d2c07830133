"""Pick the compiled kernels when importable, else the pure-Python ones."""

import os

from lnbnn import _fallback

kernels = _fallback
name = "python"

if os.environ.get("LNBNN_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from lnbnn import _kernels
    except ImportError:  # extension not built
        pass
    else:
        kernels = _kernels
        name = "cython"


def available() -> dict:
    """All importable backends by name, for benchmarking and tests."""
    out = {"python": _fallback}
    try:
        from lnbnn import _kernels
    except ImportError:
        pass
    else:
        out["cython"] = _kernels
    return out
