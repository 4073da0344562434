"""Dataset alignment through board-induced homographies.

Every capture is mapped into the reference capture's pixel frame. Because
the board does not move between captures, the pixel-to-pixel homography is
``H_ref @ inv(H_i)`` where ``H`` maps the board plane to pixels.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .calib import CalibrationError, normalize_homography


class AlignmentError(ValueError):
    pass


def relative_homography(H_i, H_ref) -> np.ndarray:
    """Pixel map from capture ``i`` into the reference frame."""
    H_i = np.asarray(H_i, dtype=float)
    H_ref = np.asarray(H_ref, dtype=float)
    for name, H in (("H_i", H_i), ("H_ref", H_ref)):
        if np.linalg.cond(H) > 1e14:
            raise AlignmentError(f"{name} is singular")
    try:
        return normalize_homography(H_ref @ np.linalg.inv(H_i))
    except CalibrationError as exc:
        raise AlignmentError(str(exc)) from None


def translation(tx: float, ty: float) -> np.ndarray:
    return np.array([[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]])


def _source_coords(H, shape, origin):
    h, w = shape
    x0, y0 = origin
    yy, xx = np.mgrid[y0:y0 + h, x0:x0 + w].astype(float)
    Hinv = np.linalg.inv(np.asarray(H, dtype=float))
    den = Hinv[2, 0] * xx + Hinv[2, 1] * yy + Hinv[2, 2]
    sx = (Hinv[0, 0] * xx + Hinv[0, 1] * yy + Hinv[0, 2]) / den
    sy = (Hinv[1, 0] * xx + Hinv[1, 1] * yy + Hinv[1, 2]) / den
    return sx, sy


def warp_image(img, H, out_shape=None, origin=(0, 0), return_mask=False):
    """Inverse-mapped bilinear warp: ``out(p) = img(inv(H) @ p)``.

    Samples that fall outside the source are zero. ``out_shape`` and
    ``origin`` (x0, y0) select a window of the output plane; by default the
    whole plane of the input's size is produced.
    """
    img = np.asarray(img)
    out_shape = img.shape if out_shape is None else tuple(out_shape)
    sx, sy = _source_coords(H, out_shape, origin)
    # snap coordinates that are integral up to rounding noise so that
    # identity and integer shifts reproduce the input exactly
    for a in (sx, sy):
        r = np.rint(a)
        close = np.abs(a - r) < 1e-9
        a[close] = r[close]
    out = ndimage.map_coordinates(img.astype(np.float64, copy=False), [sy, sx], order=1,
                                  mode="constant", cval=0.0, prefilter=False)
    out = out.astype(img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64, copy=False)
    if not return_mask:
        return out
    h, w = img.shape
    mask = (sx >= 0) & (sx <= w - 1) & (sy >= 0) & (sy <= h - 1)
    return out, mask


def align_dataset(capture_set, board_homographies: dict, ref_index=None, region=None):
    """Warp every capture into the reference frame.

    ``board_homographies`` maps capture index to its board-to-pixel
    homography. With ``region`` (x0, y0, w, h) only that window of the
    aligned frame is produced, which is what reconstruction consumes.
    """
    ref_index = tuple(capture_set.ref_index if ref_index is None else ref_index)
    idx = capture_set.indices
    if set(board_homographies) != set(idx):
        missing = sorted(set(idx) - set(board_homographies))
        extra = sorted(set(board_homographies) - set(idx))
        raise AlignmentError(f"homography/capture mismatch: missing {missing}, unexpected {extra}")
    if ref_index not in board_homographies:
        raise AlignmentError(f"reference capture {ref_index} not present")
    H_ref = board_homographies[ref_index]
    rel = {k: relative_homography(H, H_ref) for k, H in board_homographies.items()}
    return apply_alignment(capture_set, rel, region)


def apply_alignment(capture_set, pixel_homographies: dict, region=None):
    """Warp each capture by its own capture-to-reference homography."""
    import dataclasses

    if region is None:
        shape, origin = None, (0, 0)
        roi = capture_set.roi
    else:
        x0, y0, w, h = region
        shape, origin = (h, w), (x0, y0)
        roi = (0, 0, w, h)
    out = []
    for c in capture_set.captures:
        H = pixel_homographies[c.index]
        img, mask = warp_image(c.intensity, H, shape, origin, return_mask=True)
        out.append(dataclasses.replace(c, intensity=np.maximum(img, 0), mask=mask))
    return capture_set.with_captures(out, aligned=True, roi=roi)


def translation_alignment(capture_set, offsets_px: dict, region=None):
    """Integer-shift alignment from per-capture pixel offsets (no twist model)."""
    rel = {k: translation(-np.rint(du), -np.rint(dv)) for k, (du, dv) in offsets_px.items()}
    missing = set(capture_set.indices) - set(rel)
    if missing:
        raise AlignmentError(f"no offset for captures {sorted(missing)}")
    return apply_alignment(capture_set, rel, region)
