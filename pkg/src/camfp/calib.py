"""Pinhole-camera calibration from planar targets.

Homographies map board-plane coordinates (meters, Z_w = 0) to pixels. The
per-capture pixel offset used downstream is the pixel position of the world
origin, taken relative to the reference capture.

Conventions: pixel ``(u, v)`` is (column, row); homographies are 3x3 arrays
normalized to unit Frobenius norm with a positive bottom-right entry.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class CalibrationError(ValueError):
    pass


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    u0: float
    v0: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise CalibrationError(f"focal scales must be positive: fx={self.fx}, fy={self.fy}")

    @classmethod
    def from_physical(cls, f: float, dx: float, dy: float, u0: float, v0: float) -> "CameraIntrinsics":
        # only f/dx and f/dy are observable
        return cls(f / dx, f / dy, u0, v0)

    @classmethod
    def from_matrix(cls, K) -> "CameraIntrinsics":
        K = np.asarray(K, dtype=float)
        K = K / K[2, 2]
        return cls(K[0, 0], K[1, 1], K[0, 2], K[1, 2])

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.u0], [0.0, self.fy, self.v0], [0.0, 0.0, 1.0]])


@dataclass(frozen=True)
class ExtrinsicPose:
    """World-to-camera transform: ``X_c = R @ X_w + T`` (meters)."""

    R: np.ndarray
    T: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.R, dtype=float).reshape(3, 3)
        T = np.asarray(self.T, dtype=float).reshape(3)
        if np.abs(R.T @ R - np.eye(3)).max() > 1e-9 or abs(np.linalg.det(R) - 1.0) > 1e-9:
            raise CalibrationError("R is not a proper rotation")
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "T", T)

    @property
    def camera_center(self) -> np.ndarray:
        return -self.R.T @ self.T


class HomographyFit(NamedTuple):
    H: np.ndarray
    rms: float


class IntrinsicsFit(NamedTuple):
    intrinsics: CameraIntrinsics
    residual: float


def normalize_homography(H) -> np.ndarray:
    H = np.asarray(H, dtype=float)
    norm = np.linalg.norm(H)
    if not np.isfinite(norm) or norm == 0:
        raise CalibrationError("homography is zero or not finite")
    H = H / norm
    corner = H[2, 2]
    if corner == 0:
        corner = H.flat[np.argmax(np.abs(H))]
    return H if corner > 0 else -H


def apply_homography(H, pts) -> np.ndarray:
    """Map an (N, 2) array of points through ``H``."""
    pts = np.asarray(pts, dtype=float)
    hom = np.column_stack([pts, np.ones(len(pts))]) @ np.asarray(H).T
    return hom[:, :2] / hom[:, 2:3]


def rotation_from_angles(rx: float, ry: float, rz: float) -> np.ndarray:
    """Rotation ``Rz @ Ry @ Rx`` from three small angles about the camera axes."""
    cx, sx = np.cos(rx), np.sin(rx)
    cy, sy = np.cos(ry), np.sin(ry)
    cz, sz = np.cos(rz), np.sin(rz)
    Rx = np.array([[1, 0, 0], [0, cx, -sx], [0, sx, cx]])
    Ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    Rz = np.array([[cz, -sz, 0], [sz, cz, 0], [0, 0, 1]])
    return Rz @ Ry @ Rx


def nearest_rotation(Q) -> np.ndarray:
    U, _, Vt = np.linalg.svd(np.asarray(Q, dtype=float))
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def project_points(K: CameraIntrinsics, pose: ExtrinsicPose, world) -> np.ndarray:
    """Perspective projection of (N, 3) world points to (N, 2) pixels."""
    world = np.asarray(world, dtype=float)
    cam = world @ pose.R.T + pose.T
    if np.any(cam[:, 2] <= 0):
        raise CalibrationError("point at or behind the camera (Z_c <= 0)")
    pix = cam @ K.K.T
    return pix[:, :2] / pix[:, 2:3]


def board_homography(K: CameraIntrinsics, pose: ExtrinsicPose) -> np.ndarray:
    """Plane-to-pixel homography ``K [r1 r2 T]`` of the Z_w = 0 plane."""
    return normalize_homography(K.K @ np.column_stack([pose.R[:, 0], pose.R[:, 1], pose.T]))


# -- homography estimation ---------------------------------------------------

def _hartley(pts):
    mean = pts.mean(axis=0)
    dist = np.sqrt(((pts - mean) ** 2).sum(axis=1)).mean()
    if dist <= 0:
        raise CalibrationError("all points coincide")
    s = np.sqrt(2.0) / dist
    return np.array([[s, 0, -s * mean[0]], [0, s, -s * mean[1]], [0, 0, 1.0]])


def estimate_homography_dlt(src, dst) -> HomographyFit:
    """Normalized DLT fit of ``dst ~ H @ src``.

    Parameters
    ----------
    src, dst : (N, 2) arrays, N >= 4
        Plane coordinates and their pixel images.

    Returns
    -------
    HomographyFit
        Normalized ``H`` and the RMS reprojection error in ``dst`` units.
    """
    src = np.asarray(src, dtype=float)
    dst = np.asarray(dst, dtype=float)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise CalibrationError("src and dst must be matching (N, 2) arrays")
    n = len(src)
    if n < 4:
        raise CalibrationError(f"need at least 4 correspondences, got {n}")
    Ts, Td = _hartley(src), _hartley(dst)
    s = apply_homography(Ts, src)
    d = apply_homography(Td, dst)
    A = np.zeros((2 * n, 9))
    x, y = s[:, 0], s[:, 1]
    u, v = d[:, 0], d[:, 1]
    A[0::2, 0:3] = np.column_stack([x, y, np.ones(n)])
    A[0::2, 6:9] = -u[:, None] * A[0::2, 0:3]
    A[1::2, 3:6] = A[0::2, 0:3]
    A[1::2, 6:9] = -v[:, None] * A[0::2, 0:3]
    _, sv, Vt = np.linalg.svd(A)
    # a second (near) null vector means the points do not pin down H
    if sv[-2] <= 1e-10 * sv[0]:
        raise CalibrationError("degenerate point configuration (collinear source points?)")
    Hn = Vt[-1].reshape(3, 3)
    H = np.linalg.inv(Td) @ Hn @ Ts
    if abs(np.linalg.det(H)) < 1e-14 * np.linalg.norm(H) ** 3:
        raise CalibrationError("estimated homography is singular")
    H = normalize_homography(H)
    return HomographyFit(H, reprojection_rms(H, src, dst))


def reprojection_errors(H, src, dst) -> np.ndarray:
    return np.linalg.norm(apply_homography(H, src) - np.asarray(dst, dtype=float), axis=1)


def reprojection_rms(H, src, dst) -> float:
    e = reprojection_errors(H, src, dst)
    return float(np.sqrt(np.mean(e**2)))


# -- Zhang closed form -------------------------------------------------------

def _zhang_row(h, i, j):
    # v_ij with the B12 (skew) column dropped: unknowns B11, B22, B13, B23, B33
    hi, hj = h[:, i], h[:, j]
    return np.array([
        hi[0] * hj[0],
        hi[1] * hj[1],
        hi[2] * hj[0] + hi[0] * hj[2],
        hi[2] * hj[1] + hi[1] * hj[2],
        hi[2] * hj[2],
    ])


def estimate_intrinsics_zhang(homographies) -> IntrinsicsFit:
    """Zero-skew intrinsics from three or more board homographies.

    Pixel coordinates are recentered and rescaled before building the
    absolute-conic system; without it long-focus cameras make the system
    badly scaled.
    """
    Hs = [np.asarray(H, dtype=float) for H in homographies]
    if len(Hs) < 3:
        raise CalibrationError(f"need at least 3 views, got {len(Hs)}")
    origins = np.array([H[:2, 2] / H[2, 2] for H in Hs])
    c = origins.mean(axis=0)
    s = max(float(np.abs(origins).mean()), 1.0)
    N = np.array([[1 / s, 0, -c[0] / s], [0, 1 / s, -c[1] / s], [0, 0, 1.0]])
    rows = []
    for H in Hs:
        h = N @ H
        h = h / np.linalg.norm(h)
        rows.append(_zhang_row(h, 0, 1))
        rows.append(_zhang_row(h, 0, 0) - _zhang_row(h, 1, 1))
    V = np.array(rows)
    V = V / np.linalg.norm(V, axis=1, keepdims=True).max()
    _, sv, Vt = np.linalg.svd(V)
    if sv[-2] <= 1e-9 * sv[0]:
        raise CalibrationError("degenerate views: board orientations do not vary enough")
    B11, B22, B13, B23, B33 = Vt[-1]
    if B11 < 0:
        B11, B22, B13, B23, B33 = -B11, -B22, -B13, -B23, -B33
    if B11 <= 0 or B22 <= 0:
        raise CalibrationError("absolute conic estimate is not positive definite")
    u0 = -B13 / B11
    v0 = -B23 / B22
    lam = B33 - B13**2 / B11 - B23**2 / B22
    if lam <= 0:
        raise CalibrationError("absolute conic estimate is not positive definite")
    Kn = np.array([[np.sqrt(lam / B11), 0, u0], [0, np.sqrt(lam / B22), v0], [0, 0, 1.0]])
    K = np.linalg.inv(N) @ Kn
    return IntrinsicsFit(CameraIntrinsics.from_matrix(K), float(sv[-1]))


# -- extrinsics and offsets --------------------------------------------------

def decompose_extrinsics(H, K: CameraIntrinsics) -> ExtrinsicPose:
    Kinv = np.linalg.inv(K.K)
    h = np.asarray(H, dtype=float)
    a1 = Kinv @ h[:, 0]
    n1 = np.linalg.norm(a1)
    if n1 < 1e-15 * np.linalg.norm(h):
        raise CalibrationError("cannot decompose: first homography column vanishes")
    lam = 1.0 / n1
    T = lam * (Kinv @ h[:, 2])
    if T[2] < 0:
        lam, T = -lam, -T
    r1 = lam * a1
    r2 = lam * (Kinv @ h[:, 1])
    R = nearest_rotation(np.column_stack([r1, r2, np.cross(r1, r2)]))
    return ExtrinsicPose(R, T)


def project_world_origin(K: CameraIntrinsics, pose: ExtrinsicPose) -> tuple[float, float]:
    p = K.K @ pose.T
    if pose.T[2] <= 0:
        raise CalibrationError("world origin is not in front of the camera")
    return float(p[0] / p[2]), float(p[1] / p[2])


def pixel_offsets(origins: dict, center_index) -> dict:
    """Offsets ``(du, dv)`` of every origin relative to the one at ``center_index``."""
    center_index = tuple(center_index)
    if center_index not in origins:
        raise CalibrationError(f"reference capture {center_index} not present")
    uc, vc = origins[center_index]
    return {k: (u - uc, v - vc) for k, (u, v) in origins.items()}
