"""doalab: signal-aware DOA estimation for uniform linear microphone arrays.

The package bundles a reverberant scene simulator with ground truth, oracle
attention masks, attention-weighted steered-response-power and MUSIC
estimators, and a seeded evaluation harness with a CLI front end.
"""

__version__ = "0.1.0"

from .geometry import ArrayGeometry, DoaGrid, SteeringMatrix, make_grid, steering_matrix
from .signal import MultichannelSpectrogram, TimeSignal, istft, stft

__all__ = [
    "ArrayGeometry",
    "DoaGrid",
    "MultichannelSpectrogram",
    "SteeringMatrix",
    "TimeSignal",
    "istft",
    "make_grid",
    "steering_matrix",
    "stft",
]
