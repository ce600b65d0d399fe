"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ``TRIOBS_PURE_PYTHON=1`` to force the numpy implementation.
"""

from __future__ import annotations

import os

from . import _pykernels

BACKEND = "python"
phi_sup = _pykernels.phi_sup
lyap_margin = _pykernels.lyap_margin

if os.environ.get("TRIOBS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels
    except ImportError:  # extension not built
        pass
    else:
        BACKEND = "compiled"
        phi_sup = _ckernels.phi_sup
        lyap_margin = _ckernels.lyap_margin

__all__ = ["BACKEND", "phi_sup", "lyap_margin"]
