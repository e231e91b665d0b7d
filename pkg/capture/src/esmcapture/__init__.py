"""Activation capture for transformer checkpoints."""

from .capture import (
    CaptureError,
    CaptureSpec,
    DirectorySource,
    SyntheticSource,
    capture,
)
from .container import ContainerError, read_tensors, write_tensors
from .model import ModelLoadError, TransformerModel

__version__ = "0.1.0"
