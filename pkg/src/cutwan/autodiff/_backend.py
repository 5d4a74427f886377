"""Select the tape core: compiled extension if importable, else pure Python.

Set ``CUTWAN_PURE_PYTHON=1`` to force the fallback.
"""
import os

from ._pycore import TapeCore as PyTapeCore

CTapeCore = None
if not os.environ.get("CUTWAN_PURE_PYTHON"):
    try:
        from ._ccore import TapeCore as CTapeCore
    except ImportError:
        CTapeCore = None

TapeCore = CTapeCore if CTapeCore is not None else PyTapeCore
BACKEND = TapeCore.backend
