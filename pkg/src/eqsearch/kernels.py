"""Hot-loop kernels with compiled/pure-Python backend selection.

The compiled extension is used when it is importable; set
``EQSEARCH_PURE_PYTHON=1`` to force the numpy fallback.
"""
import os

from . import _kernels_py

if os.environ.get("EQSEARCH_PURE_PYTHON", "0") == "1":
    _impl = _kernels_py
    BACKEND = "python"
else:
    try:
        from . import _kernels as _impl
        BACKEND = "compiled"
    except ImportError:
        _impl = _kernels_py
        BACKEND = "python"

windowed_apply = _impl.windowed_apply
lasso_cd = _impl.lasso_cd
nondominated_levels = _impl.nondominated_levels
integrate_program = _impl.integrate_program

__all__ = ["BACKEND", "windowed_apply", "lasso_cd", "nondominated_levels",
           "integrate_program"]
