"""Pixel offsets to pupil positions in the reconstruction spectrum.

The chain is: optical resolution of the scanning aperture, its cut-off
frequency, the sensor Nyquist frequency, and from those the pupil diameter
in spectrum pixels. ``ratio1`` converts Fourier-plane meters to spectrum
pixels; ``ratio2`` converts image pixels to sample-plane meters and comes
from the checkerboard.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

import numpy as np


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class OpticalBudget:
    wavelength: float
    focal_length: float
    aperture: float
    pixel: float
    grid_size: int
    res_aperture: float
    k_aperture: float
    k_max: float
    d_pixel: float
    ratio1: float
    ratio2: float | None = None

    def with_ratio2(self, ratio2: float) -> "OpticalBudget":
        if not ratio2 > 0:
            raise BudgetError(f"ratio2 must be positive, got {ratio2}")
        return dataclasses.replace(self, ratio2=float(ratio2))

    @property
    def pixel_to_spectrum(self) -> float:
        """Spectrum pixels per image pixel of drift (``ratio1 * ratio2``)."""
        if self.ratio2 is None:
            raise BudgetError("ratio2 has not been calibrated")
        return self.ratio1 * self.ratio2


def build_budget(wavelength, focal_length, aperture, pixel, grid_size) -> OpticalBudget:
    for name, v in (("wavelength", wavelength), ("focal_length", focal_length),
                    ("aperture", aperture), ("pixel", pixel), ("grid_size", grid_size)):
        if not v > 0:
            raise BudgetError(f"{name} must be positive, got {v}")
    res = 1.22 * wavelength * focal_length / aperture
    k_ap = 1.0 / (2.0 * res)
    k_max = 1.0 / (2.0 * pixel)
    d_pixel = grid_size * k_ap / k_max
    if d_pixel > grid_size:
        raise BudgetError(
            f"pupil ({d_pixel:.1f} px) exceeds the {grid_size} px grid: aperture cut-off above sensor Nyquist"
        )
    return OpticalBudget(
        wavelength=float(wavelength), focal_length=float(focal_length), aperture=float(aperture),
        pixel=float(pixel), grid_size=int(grid_size), res_aperture=res, k_aperture=k_ap,
        k_max=k_max, d_pixel=d_pixel, ratio1=d_pixel / aperture,
    )


def choose_grid_size(wavelength, focal_length, aperture, pixel, capture_size,
                     max_travel, margin=16) -> int:
    """Smallest even grid that holds every pupil window with ``margin`` px to spare.

    ``max_travel`` is the largest per-axis aperture displacement (meters)
    from the reference position. The pupil must also fit in the capture
    window.
    """
    m = max(int(capture_size), 2)
    m += m % 2
    while m < 1 << 16:
        try:
            budget = build_budget(wavelength, focal_length, aperture, pixel, m)
        except BudgetError:
            m += 2
            continue
        half = np.ceil(max_travel * budget.ratio1) + capture_size // 2 + margin
        if m // 2 >= half and m - m // 2 > half and budget.d_pixel <= capture_size:
            return m
        m += 2
    raise BudgetError("no grid size satisfies the window constraints")


# -- ratio2 from the board ---------------------------------------------------

def corner_spans(pixels, rows: int, cols: int) -> tuple[np.ndarray, np.ndarray]:
    """Adjacent-corner pixel distances along board rows and columns.

    ``pixels`` is (rows*cols, 2), corners in row-major order.
    """
    g = np.asarray(pixels, dtype=float).reshape(rows, cols, 2)
    horiz = np.linalg.norm(np.diff(g, axis=1), axis=2).ravel()
    vert = np.linalg.norm(np.diff(g, axis=0), axis=2).ravel()
    return horiz, vert


def ratio2_from_calibration(board_square, mean_pixel_span) -> float:
    """Sample-plane length per image pixel, in the unit of ``board_square`` per px."""
    if not (np.isfinite(mean_pixel_span) and mean_pixel_span > 0):
        raise BudgetError(f"degenerate corner span {mean_pixel_span}")
    return float(board_square) / float(mean_pixel_span)


def ratio2_from_board(pixels, rows, cols, board_square) -> float:
    horiz, vert = corner_spans(pixels, rows, cols)
    return ratio2_from_calibration(board_square, np.concatenate([horiz, vert]).mean())


# -- frequency offsets -------------------------------------------------------

def frequency_offsets(offsets_px: dict, budget: OpticalBudget) -> tuple[dict, dict]:
    """Map image-pixel offsets to spectrum-pixel offsets.

    Returns ``(exact, rounded)``: real-valued offsets and the nearest-integer
    ones used for windowing.
    """
    scale = budget.pixel_to_spectrum
    exact = {k: (du * scale, dv * scale) for k, (du, dv) in offsets_px.items()}
    rounded = {k: (int(np.rint(a)), int(np.rint(b))) for k, (a, b) in exact.items()}
    return exact, rounded


# -- overlap -----------------------------------------------------------------

def linear_overlap(step, diameter) -> float:
    return max(0.0, 1.0 - step / diameter)


def area_overlap(step, diameter) -> float:
    """Intersection area of two equal circles over one circle's area."""
    r = diameter / 2.0
    d = abs(step)
    if d >= 2 * r:
        return 0.0
    lens = 2 * r * r * np.arccos(d / (2 * r)) - 0.5 * d * np.sqrt(4 * r * r - d * d)
    return float(lens / (np.pi * r * r))


# -- bright/dark field classification ----------------------------------------

BRIGHT, DARK, JUNCTION = "bright", "dark", "junction"


def classify_captures(images: dict, ref_index, threshold_fraction=0.25,
                      bright_fraction=0.6, dark_fraction=0.05) -> dict:
    """Label each capture as bright, dark or junction.

    A pixel counts as lit when it reaches ``threshold_fraction`` times the
    mean intensity of the reference capture.
    """
    ref_index = tuple(ref_index)
    if not images:
        raise BudgetError("no captures to classify")
    if ref_index not in images:
        raise BudgetError(f"reference capture {ref_index} not present")
    level = threshold_fraction * float(np.mean(images[ref_index]))
    labels = {}
    for k, img in images.items():
        lit = float(np.mean(np.asarray(img) >= level))
        if lit > bright_fraction:
            labels[k] = BRIGHT
        elif lit < dark_fraction:
            labels[k] = DARK
        else:
            labels[k] = JUNCTION
    return labels


@dataclass(frozen=True)
class PruneReport:
    labels: dict
    removed: list
    threshold_fraction: float
    bright_fraction: float
    dark_fraction: float

    @property
    def n_removed(self) -> int:
        return len(self.removed)


def classify_and_prune(capture_set, threshold_fraction=0.25, bright_fraction=0.6,
                       dark_fraction=0.05, region=None):
    """Drop junction captures from ``capture_set``.

    ``region`` (x0, y0, w, h) restricts the statistics to a window of each
    image; by default the set's ROI is used when it has one.
    """
    if not capture_set.captures:
        raise BudgetError("empty capture set")
    region = region if region is not None else getattr(capture_set, "roi", None)

    def view(img):
        if region is None:
            return img
        x0, y0, w, h = region
        return img[y0:y0 + h, x0:x0 + w]

    images = {c.index: view(c.intensity) for c in capture_set.captures}
    labels = classify_captures(images, capture_set.ref_index, threshold_fraction,
                               bright_fraction, dark_fraction)
    if labels[tuple(capture_set.ref_index)] == JUNCTION:
        raise BudgetError("reference capture classified as junction; refusing to prune it")
    removed = sorted(k for k, lab in labels.items() if lab == JUNCTION)
    kept = [c for c in capture_set.captures if labels[c.index] != JUNCTION]
    report = PruneReport(labels, removed, threshold_fraction, bright_fraction, dark_fraction)
    return capture_set.with_captures(kept), report
