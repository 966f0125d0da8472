"""Per-vertebra GMM rigid registration of longitudinal spine label volumes."""

from ._spinereg import *  # noqa: F401,F403
from ._spinereg import __doc__  # noqa: F401
