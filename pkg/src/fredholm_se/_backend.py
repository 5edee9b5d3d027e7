"""Use the compiled RNG kernel when it was built, else the pure-Python twin.

Set ``FREDSE_BACKEND=python`` to force the fallback (used by the benchmark
and the backend-agreement tests).
"""

from __future__ import annotations

import os

from . import _fallback

compiled = None
if os.environ.get("FREDSE_BACKEND", "").lower() != "python":
    try:
        from . import _kernels as compiled
    except ImportError:  # extension not built
        compiled = None

NAME = "compiled" if compiled is not None else "python"

xoshiro_fill = compiled.xoshiro_fill if compiled is not None else _fallback.xoshiro_fill
