"""Spectral bins over the wavelength axis (micrometers).

Five half-open regions partition (0, inf): every positive wavelength maps
to exactly one bin, with the lower edge inclusive.
"""

from enum import IntEnum

import numpy as np

from .errors import ParameterError


class SpectralBin(IntEnum):
    UV = 0
    VIS = 1
    NEAR_IR = 2
    IR = 3
    FAR_IR = 4

    @property
    def label(self) -> str:
        return _LABELS[self]


_LABELS = {
    SpectralBin.UV: "UV",
    SpectralBin.VIS: "VIS",
    SpectralBin.NEAR_IR: "NearIR",
    SpectralBin.IR: "IR",
    SpectralBin.FAR_IR: "FarIR",
}

# Interior edges between the five bins; bin i covers [EDGES[i-1], EDGES[i]).
BIN_EDGES_UM = (0.40, 0.75, 1.50, 4.0)

ALL_BINS = tuple(SpectralBin)


def assign_bin(wavelength_um: float) -> SpectralBin:
    """Map a positive wavelength (um) to its spectral bin."""
    if not wavelength_um > 0:
        raise ParameterError(f"wavelength must be positive, got {wavelength_um}")
    for i, edge in enumerate(BIN_EDGES_UM):
        if wavelength_um < edge:
            return SpectralBin(i)
    return SpectralBin.FAR_IR


def bin_indices(wavelengths_um: np.ndarray) -> np.ndarray:
    """Vectorized assign_bin: array of bin codes (uint8) for an array of wavelengths."""
    lam = np.asarray(wavelengths_um, dtype=np.float64)
    if lam.size and not np.all(lam > 0):
        raise ParameterError("wavelengths must be positive")
    return np.searchsorted(np.asarray(BIN_EDGES_UM), lam, side="right").astype(np.uint8)


def bin_label(code: int) -> str:
    return SpectralBin(int(code)).label
