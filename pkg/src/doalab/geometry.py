"""Array geometry, the discrete DOA grid, and far-field steering matrices.

DOA angles are degrees in [0, 180] at every API boundary; radians appear
only inside the trigonometry. Bin k maps to the physical frequency
``k * sample_rate / fft_length`` with zero-based k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SPEED_OF_SOUND = 343.0


@dataclass(frozen=True)
class ArrayGeometry:
    """Linear array described by microphone distances to microphone 1.

    ``mic_distances[0]`` must be 0 and distances must strictly increase.
    """

    mic_distances: np.ndarray
    speed_of_sound: float = SPEED_OF_SOUND

    def __post_init__(self):
        d = np.asarray(self.mic_distances, dtype=np.float64)
        object.__setattr__(self, "mic_distances", d)
        if d.ndim != 1 or d.size < 2:
            raise ValueError("need at least two microphones")
        if d[0] != 0.0:
            raise ValueError("first microphone must sit at distance 0")
        if np.any(np.diff(d) <= 0):
            raise ValueError("mic distances must be strictly increasing")
        if self.speed_of_sound <= 0:
            raise ValueError("speed_of_sound must be positive")

    @classmethod
    def uniform(cls, num_mics: int, spacing: float, speed_of_sound: float = SPEED_OF_SOUND) -> "ArrayGeometry":
        """ULA with ``num_mics`` microphones and equal ``spacing`` in meters."""
        if num_mics < 2:
            raise ValueError("need at least two microphones")
        if spacing <= 0:
            raise ValueError("spacing must be positive")
        return cls(np.arange(num_mics) * spacing, speed_of_sound)

    @property
    def num_mics(self) -> int:
        return self.mic_distances.size

    @property
    def aperture(self) -> float:
        return float(self.mic_distances[-1])


@dataclass(frozen=True)
class DoaGrid:
    """Strictly increasing DOA sample points in degrees, spanning [0, 180]."""

    angles_deg: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.angles_deg, dtype=np.float64)
        object.__setattr__(self, "angles_deg", a)
        if a.ndim != 1 or a.size < 2:
            raise ValueError("grid needs at least two angles")
        if np.any(np.diff(a) <= 0):
            raise ValueError("grid angles must be strictly increasing")
        if a[0] != 0.0 or a[-1] != 180.0:
            raise ValueError("grid must span [0, 180] degrees")

    @property
    def size(self) -> int:
        return self.angles_deg.size


@dataclass(frozen=True)
class SteeringMatrix:
    """Far-field relative transfer functions, shape (C, K, Q), unit modulus."""

    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.complex128)
        object.__setattr__(self, "values", v)
        if v.ndim != 3:
            raise ValueError("steering values must be a C x K x Q tensor")


def make_grid(num_points: int) -> DoaGrid:
    """Uniform DOA grid over [0, 180] degrees with ``num_points`` entries."""
    if num_points < 2:
        raise ValueError("grid needs at least two points")
    return DoaGrid(np.linspace(0.0, 180.0, num_points))


def steering_matrix(
    grid: DoaGrid,
    geom: ArrayGeometry,
    num_bins: int,
    sample_rate: float,
    fft_length: int,
) -> SteeringMatrix:
    """Relative transfer functions of all grid directions.

    Entry (c, k, q) is ``exp(-j 2 pi f_k cos(theta_c) d_q / c_s)`` with
    ``f_k = k * sample_rate / fft_length``. The first microphone is the
    phase reference, so column q = 0 is identically 1.
    """
    if num_bins != fft_length // 2 + 1:
        raise ValueError("num_bins must equal fft_length / 2 + 1")
    freqs = np.arange(num_bins) * sample_rate / fft_length
    cos_theta = np.cos(np.deg2rad(grid.angles_deg))
    delays = cos_theta[:, None] * geom.mic_distances[None, :] / geom.speed_of_sound  # (C, Q)
    phase = -2.0 * np.pi * freqs[None, :, None] * delays[:, None, :]
    return SteeringMatrix(np.exp(1j * phase))
