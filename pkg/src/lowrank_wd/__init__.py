"""Low-rank bias of two-layer ReLU networks trained with mini-batch SGD and weight decay."""
from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
