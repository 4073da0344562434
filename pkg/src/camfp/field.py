"""Complex field containers and the centered, unitary 2D Fourier transform.

Every grid in the package is a plain ``numpy`` array wrapped together with
its sample pitch. Spatial grids carry meters/pixel, spectra carry
cycles/meter per pixel. The DC sample of a spectrum sits at pixel
``(H // 2, W // 2)`` (row, col).
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kv import read_keyvalue, write_keyvalue


class GridError(ValueError):
    """Raised for malformed grids and out-of-range windows."""


@dataclass(frozen=True)
class ComplexGrid:
    data: np.ndarray
    pitch: float = 1.0

    def __post_init__(self):
        arr = np.asarray(self.data)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise GridError(f"grid must be a nonempty 2D array, got shape {arr.shape}")
        if not self.pitch > 0:
            raise GridError(f"pitch must be positive, got {self.pitch}")
        arr = arr.astype(np.complex128, copy=True)
        arr.flags.writeable = False
        object.__setattr__(self, "data", arr)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.data.shape

    @property
    def center(self) -> tuple[int, int]:
        return self.height // 2, self.width // 2


@dataclass(frozen=True)
class SpectrumGrid(ComplexGrid):
    """Spectrum sampled on a DC-centered grid; ``pitch`` is in cycles/meter."""

    @property
    def freq_pitch(self) -> float:
        return self.pitch


# -- array-level transforms (used directly by the hot loops) -----------------

def fft2c(a: np.ndarray) -> np.ndarray:
    """Unitary forward FFT with both origins at the array center."""
    if a.size == 0:
        raise GridError("cannot transform an empty array")
    return np.fft.fftshift(np.fft.fft2(np.fft.ifftshift(a), norm="ortho"))


def ifft2c(a: np.ndarray) -> np.ndarray:
    if a.size == 0:
        raise GridError("cannot transform an empty array")
    return np.fft.fftshift(np.fft.ifft2(np.fft.ifftshift(a), norm="ortho"))


def fft2_centered(g: ComplexGrid) -> SpectrumGrid:
    """Forward transform of a spatial grid.

    The frequency pitch follows from the spatial extent, ``1 / (W * pitch)``.
    Only square-pixel grids are meaningful here, so the width sets it.
    """
    return SpectrumGrid(fft2c(g.data), pitch=1.0 / (g.width * g.pitch))


def ifft2_centered(s: SpectrumGrid) -> ComplexGrid:
    return ComplexGrid(ifft2c(s.data), pitch=1.0 / (s.width * s.pitch))


# -- windows -----------------------------------------------------------------

def _window_slices(shape, center, size):
    if isinstance(size, (int, np.integer)):
        size = (int(size), int(size))
    h, w = size
    if h < 1 or w < 1:
        raise GridError(f"window size must be positive, got {size}")
    r0 = int(center[0]) - h // 2
    c0 = int(center[1]) - w // 2
    if r0 < 0 or c0 < 0 or r0 + h > shape[0] or c0 + w > shape[1]:
        raise GridError(
            f"window of size {h}x{w} at center {tuple(center)} exceeds grid {shape}"
        )
    return slice(r0, r0 + h), slice(c0, c0 + w)


def window_slices(shape, center, size) -> tuple[slice, slice]:
    """Slices of a ``size`` window whose own center pixel lands on ``center``.

    ``center`` is (row, col). The window's center pixel is ``(h//2, w//2)``,
    matching the DC convention, so an extracted spectrum patch keeps its
    frequency origin at the patch center.
    """
    return _window_slices(shape, center, size)


def extract_window(s: ComplexGrid, center, size) -> ComplexGrid:
    rs, cs = _window_slices(s.shape, center, size)
    return ComplexGrid(s.data[rs, cs], pitch=s.pitch)


def embed_window(s: SpectrumGrid, patch: ComplexGrid, center, mode: str = "replace") -> SpectrumGrid:
    """Write ``patch`` into a copy of ``s`` centered at ``center``.

    ``mode`` is ``"replace"`` or ``"add"``.
    """
    if mode not in ("replace", "add"):
        raise GridError(f"unknown embed mode {mode!r}")
    rs, cs = _window_slices(s.shape, center, patch.shape)
    out = s.data.copy()
    if mode == "replace":
        out[rs, cs] = patch.data
    else:
        out[rs, cs] += patch.data
    return type(s)(out, pitch=s.pitch)


# -- raw grid files ----------------------------------------------------------

def meta_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.name + ".meta")


def write_grid(path, g: ComplexGrid) -> None:
    """Store ``g`` as little-endian float32 (re, im) pairs plus a ``.meta`` sidecar."""
    path = Path(path)
    pairs = np.empty(g.data.shape + (2,), dtype="<f4")
    pairs[..., 0] = g.data.real
    pairs[..., 1] = g.data.imag
    path.write_bytes(pairs.tobytes(order="C"))
    kind = "spectrum" if isinstance(g, SpectrumGrid) else "spatial"
    write_keyvalue(
        meta_path(path),
        {"width": g.width, "height": g.height, "pitch": repr(float(g.pitch)), "kind": kind},
    )


def read_grid(path) -> ComplexGrid:
    path = Path(path)
    meta = read_keyvalue(meta_path(path))
    w, h = int(meta["width"]), int(meta["height"])
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    if raw.size != 2 * w * h:
        raise GridError(f"{path}: expected {2 * w * h} floats, found {raw.size}")
    pairs = raw.reshape(h, w, 2)
    data = pairs[..., 0].astype(np.float64) + 1j * pairs[..., 1].astype(np.float64)
    cls = SpectrumGrid if meta.get("kind") == "spectrum" else ComplexGrid
    return cls(data, pitch=float(meta["pitch"]))
