"""Dense matrix algebra and a small reverse-mode differentiation engine."""
from . import tape as ops
from .adam import AdamState, adam_step
from .gradcheck import check, numeric_grad, relative_error
from .init import glorot
from .tape import Node, Tape

__all__ = [
    "AdamState",
    "Node",
    "Tape",
    "adam_step",
    "check",
    "glorot",
    "numeric_grad",
    "ops",
    "relative_error",
]
