"""Select the lattice-sum backend at import time.

The compiled ``_core`` extension is used when it imports; setting
``PERHEAT_BACKEND=python`` forces the numpy fallback.
"""
import os

from . import _pycore

python = _pycore

if os.environ.get("PERHEAT_BACKEND", "").lower() == "python":
    compiled = None
else:
    try:
        from . import _core as compiled
    except ImportError:  # extension not built
        compiled = None

core = compiled if compiled is not None else _pycore
name = "compiled" if compiled is not None else "python"
