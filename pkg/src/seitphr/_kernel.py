"""Import-time selection between the compiled core and the Python fallback.

Set ``SEITPHR_PURE_PYTHON=1`` to force the fallback (used by the kernel
equivalence tests and the benchmark).
"""

import os

if os.environ.get("SEITPHR_PURE_PYTHON", "").strip() not in ("", "0"):
    from . import _core_py as _impl
else:
    try:
        from . import _core as _impl  # type: ignore[attr-defined]
    except ImportError:
        from . import _core_py as _impl

backend = _impl.BACKEND
rhs = _impl.rhs
integrate = _impl.integrate
