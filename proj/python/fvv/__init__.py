"""FVV Live core: depth transport, wire formats, camera selection and synthesis."""

from ._fvv import *  # noqa: F401,F403
from ._fvv import __doc__  # noqa: F401

__version__ = "0.1.0"
