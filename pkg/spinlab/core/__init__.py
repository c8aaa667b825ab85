"""Core module initialization."""

from spinlab.core.executor import BlockExecutor, configure_executor, get_executor
from spinlab.core.model import ValidatedModel, validate_model

__all__ = [
    "BlockExecutor",
    "configure_executor",
    "get_executor",
    "ValidatedModel",
    "validate_model",
]
