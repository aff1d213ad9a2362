"""Bayes-optimal learning in two-layer committee machines.

State evolution, finite-size AMP and the large-K limit, backed by a C++ core.
Errors raise ``CommitteeError`` with ``args == (code_name, message)``, e.g. ("BracketError", ...).
"""

from ._core import *  # noqa: F401,F403
from ._core import CommitteeError, __doc__  # noqa: F401
