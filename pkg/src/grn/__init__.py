"""Group Resonance Network (GRN) for cross-subject EEG emotion recognition.

Desk-scale, numpy-only implementation: synthetic multi-subject EEG, band-wise
differential-entropy features, PLV/coherence resonance tensors, a small
reverse-mode autodiff engine, the GRN model, and SD/LOSO evaluation.
"""

from .errors import ConfigError, DataFormatError, GrnError, LeakageError, NumericalError

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DataFormatError",
    "GrnError",
    "LeakageError",
    "NumericalError",
]
