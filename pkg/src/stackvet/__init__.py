"""Vetting toolkit for multi-depth shift-and-stack moving-object candidates.

Pipeline: synthesize or ingest 32-frame sequences, shift-and-median-stack them
at several depths, classify the stacked cutouts with small CNNs (optionally
with channel+spatial attention), and triage the scores with a dual-threshold
policy so only ambiguous candidates reach human review.
"""

__version__ = "0.1.0"

from .tensor import Tensor, Parameter, finite_diff_check, read_mdt, write_mdt

__all__ = [
    "Tensor",
    "Parameter",
    "finite_diff_check",
    "read_mdt",
    "write_mdt",
    "__version__",
]
