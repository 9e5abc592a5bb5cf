from ._aqlmap import *  # noqa: F401,F403
from ._aqlmap import __doc__  # noqa: F401
