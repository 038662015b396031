"""Hot-loop kernels: the compiled extension when built, else the numpy fallback.

Set ``MRA_PURE_PYTHON=1`` to force the fallback.
"""

import os

if os.environ.get("MRA_PURE_PYTHON"):
    from ._kernels_py import greedy_round, positive_sum, selection_violation

    BACKEND = "python"
else:
    try:
        from ._kernels import greedy_round, positive_sum, selection_violation

        BACKEND = "cython"
    except ImportError:
        from ._kernels_py import greedy_round, positive_sum, selection_violation

        BACKEND = "python"

__all__ = ["BACKEND", "greedy_round", "positive_sum", "selection_violation"]
