"""Calibration, correction and reconstruction chained per correction mode.

Modes
-----
``location_only``
    Captures are shifted by the rounded pixel offset of the board origin;
    pupil windows sit at their nominal scan positions.
``homography_only``
    Captures are warped into the reference frame by the board-induced
    homography; pupil windows stay nominal.
``full``
    Homography warp plus pupil windows moved to the calibrated offsets.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import align, calib, freqmap
from .calib import CameraIntrinsics
from .recon import ReconConfig, reconstruct

log = logging.getLogger(__name__)

MODES = ("location_only", "homography_only", "full")
MIN_CALIB_VIEWS = 3


class PipelineError(ValueError):
    pass


@dataclass(frozen=True)
class CalibrationResult:
    homographies: dict
    fit_rms: dict
    origins: dict
    offsets: dict
    ratio2: float
    intrinsics: CameraIntrinsics | None = None
    poses: dict = field(default_factory=dict)


def _board_fit(corr):
    corr = np.asarray(corr, dtype=float)
    return calib.estimate_homography_dlt(corr[:, :2] * 1e-3, corr[:, 2:4])


def calibrate(capture_set) -> CalibrationResult:
    """Board homography, extrinsics and origin offset for every capture.

    Intrinsics come from the set's tilted calibration views. Without enough
    of them the origin is read straight off the homography, which gives the
    same pixel position because the projection of the world origin does not
    depend on K.
    """
    ref = tuple(capture_set.ref_index)
    if ref not in capture_set.indices:
        raise PipelineError(f"reference capture {ref} missing from the set")
    fits = {}
    for c in capture_set.captures:
        if c.correspondences is None:
            raise PipelineError(f"capture {c.index} has no checkerboard correspondences")
        fits[c.index] = _board_fit(c.correspondences)
    K = None
    if len(capture_set.calib_views) >= MIN_CALIB_VIEWS:
        views = [_board_fit(v).H for v in capture_set.calib_views]
        K = calib.estimate_intrinsics_zhang(views).intrinsics
    origins, poses = {}, {}
    for idx, fit in fits.items():
        if K is not None:
            pose = calib.decompose_extrinsics(fit.H, K)
            poses[idx] = pose
            origins[idx] = calib.project_world_origin(K, pose)
        else:
            origins[idx] = (fit.H[0, 2] / fit.H[2, 2], fit.H[1, 2] / fit.H[2, 2])
    offsets = calib.pixel_offsets(origins, ref)
    b = capture_set.board
    ref_px = np.asarray(capture_set.by_index()[ref].correspondences, float)[:, 2:4]
    ratio2 = freqmap.ratio2_from_board(ref_px, b.rows, b.cols, b.square)
    return CalibrationResult(
        homographies={k: f.H for k, f in fits.items()},
        fit_rms={k: f.rms for k, f in fits.items()},
        origins=origins, offsets=offsets, ratio2=ratio2, intrinsics=K, poses=poses,
    )


def true_offsets(capture_set) -> dict:
    """Origin offsets from the stored true homographies (simulation only)."""
    caps = capture_set.by_index()
    if any(c.true_pose is None for c in caps.values()):
        raise PipelineError("capture set carries no truth")
    origins = {}
    for k, c in caps.items():
        H = c.true_pose.board_homography
        origins[k] = (H[0, 2] / H[2, 2], H[1, 2] / H[2, 2])
    return calib.pixel_offsets(origins, capture_set.ref_index)


def extraction_errors(estimated: dict, truth: dict) -> np.ndarray:
    return np.array([np.hypot(estimated[k][0] - truth[k][0], estimated[k][1] - truth[k][1])
                     for k in sorted(truth)])


# -- spectrum positions ------------------------------------------------------

def dc_center(grid_size: int) -> np.ndarray:
    return np.array([grid_size // 2, grid_size // 2])


def nominal_centers(capture_set, budget) -> dict:
    """Pupil centers (row, col) at the planned aperture positions."""
    dc = dc_center(budget.grid_size)
    out = {}
    for idx in capture_set.indices:
        x, y = capture_set.plan.nominal_center(idx)
        out[idx] = tuple(int(v) for v in np.rint(dc + np.array([y, x]) * budget.ratio1))
    return out


def calibrated_centers(offsets: dict, budget) -> dict:
    """Pupil centers (row, col) from calibrated pixel offsets."""
    _, rounded = freqmap.frequency_offsets(offsets, budget)
    dc = dc_center(budget.grid_size)
    return {k: (int(dc[0] + dv), int(dc[1] + du)) for k, (du, dv) in rounded.items()}


# -- one mode ----------------------------------------------------------------

@dataclass(frozen=True)
class ModeResult:
    mode: str
    object: np.ndarray
    pupil: np.ndarray
    history: list
    centers: dict
    indices: list
    warnings: list
    n_pruned: int = 0


def correct(capture_set, mode: str, calibration: CalibrationResult):
    """Align the set and choose pupil centers as ``mode`` prescribes."""
    if mode not in MODES:
        raise PipelineError(f"unknown correction mode {mode!r}; expected one of {', '.join(MODES)}")
    budget = capture_set.budget().with_ratio2(calibration.ratio2)
    region = None if capture_set.aligned else capture_set.roi
    if capture_set.aligned:
        aligned = capture_set
    elif mode == "location_only":
        aligned = align.translation_alignment(capture_set, calibration.offsets, region=region)
    else:
        aligned = align.align_dataset(capture_set, calibration.homographies, region=region)
    if mode == "full":
        centers = calibrated_centers(calibration.offsets, budget)
    else:
        centers = nominal_centers(capture_set, budget)
    return aligned, centers, budget


def run_mode(capture_set, mode: str, config: ReconConfig | None = None,
             calibration: CalibrationResult | None = None, prune: bool = False,
             prune_threshold: float = 0.25) -> ModeResult:
    """Calibrate (unless given), correct, optionally prune, and reconstruct."""
    config = ReconConfig() if config is None else config
    calibration = calibrate(capture_set) if calibration is None else calibration
    aligned, centers, budget = correct(capture_set, mode, calibration)
    n_pruned = 0
    if prune:
        aligned, report = freqmap.classify_and_prune(aligned, threshold_fraction=prune_threshold)
        n_pruned = report.n_removed
    idx = aligned.indices
    images = np.array([c.intensity for c in aligned.captures], dtype=float)
    ctr = [centers[k] for k in idx]
    ref = idx.index(tuple(aligned.ref_index))
    res = reconstruct(images, ctr, budget, ref, config)
    return ModeResult(mode, res.object.data, res.pupil.data, res.history, centers, idx,
                      list(res.state.warnings), n_pruned)


# -- metrics -----------------------------------------------------------------

def central_crop(a, margin_fraction=0.125):
    n, m = a.shape
    mr, mc = int(n * margin_fraction), int(m * margin_fraction)
    return a[mr:n - mr, mc:m - mc]


def fit_global_phase(estimate, truth) -> np.ndarray:
    """``estimate`` rotated by the constant phase that best matches ``truth``."""
    g = np.vdot(estimate, truth)
    return estimate * (np.exp(1j * np.angle(g)) if abs(g) > 0 else 1.0)


def amplitude_rmse(estimate, truth, margin_fraction=0.125) -> float:
    d = np.abs(estimate) - np.abs(truth)
    return float(np.sqrt(np.mean(central_crop(d, margin_fraction) ** 2)))


def phase_rmse(estimate, truth, margin_fraction=0.125) -> float:
    e = central_crop(estimate, margin_fraction)
    t = central_crop(truth, margin_fraction)
    d = np.angle(fit_global_phase(e, t) * np.conj(t))
    return float(np.sqrt(np.mean(d**2)))


def psnr(estimate, truth, margin_fraction=0.125) -> float:
    r = amplitude_rmse(estimate, truth, margin_fraction)
    peak = float(np.abs(truth).max())
    return float("inf") if r == 0 else float(20 * np.log10(peak / r))


def pupil_phase_correlation(estimate, truth, support) -> float:
    """Normalized correlation of pupil phases on ``support`` after piston removal."""
    support = np.asarray(support, bool)
    e, t = np.asarray(estimate)[support], np.asarray(truth)[support]
    e = e * np.exp(-1j * np.angle(np.vdot(t, e)))
    pe, pt = np.angle(e), np.angle(t)
    pe = pe - pe.mean()
    pt = pt - pt.mean()
    den = np.linalg.norm(pe) * np.linalg.norm(pt)
    return float(pe @ pt / den) if den > 0 else 0.0
