"""Backend selection for the fill and simulation kernels.

The compiled extension is preferred; the NumPy implementation is the
fallback.  ``DEPTHLAB_BACKEND=cython`` or ``DEPTHLAB_BACKEND=numpy`` forces
a choice (and forcing the compiled backend raises if it cannot be
imported).  Both expose the same module-level functions; see
``numpy_backend`` for the tolerance contract between them.
"""

import os

_requested = os.environ.get("DEPTHLAB_BACKEND", "").strip().lower()

if _requested == "numpy":
    from . import numpy_backend as backend
elif _requested == "cython":
    from . import core as backend  # type: ignore[no-redef]
elif _requested == "":
    try:
        from . import core as backend  # type: ignore[no-redef]
    except ImportError:
        from . import numpy_backend as backend
else:
    raise RuntimeError(
        f"DEPTHLAB_BACKEND={_requested!r} not recognized (use 'cython' or 'numpy')"
    )

BACKEND = backend.NAME
