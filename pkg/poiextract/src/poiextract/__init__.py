"""Keypoint descriptor extraction to descriptor-interchange files."""

from .extract import (
    BackendError,
    ExtractionError,
    ExtractionJob,
    METHODS,
    available_methods,
    extract,
)

__all__ = [
    "BackendError",
    "ExtractionError",
    "ExtractionJob",
    "METHODS",
    "available_methods",
    "extract",
]

__version__ = "0.1.0"
