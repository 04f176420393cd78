"""Learning to poke: agents that answer physical questions by interacting."""

__version__ = "0.1.0"

from ._core import BACKEND  # noqa: E402

__all__ = ["BACKEND", "__version__"]
