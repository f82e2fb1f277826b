from moss_evo._core import *  # noqa: F401,F403
