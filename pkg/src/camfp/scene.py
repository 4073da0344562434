"""Ground-truth scenes and simulated camera-scanning captures.

Geometry of the simulated rig
-----------------------------
The world frame is the checkerboard frame (board on the Z_w = 0 plane,
meters). The sample lies in the same plane, centered at
``rig.object_center``. The reference camera looks straight at the sample
(R = I) from distance ``z = fx * image_pitch``, so one image pixel covers
``image_pitch`` meters of the sample plane.

Moving the scanning aperture by ``a`` (meters, Fourier plane) moves the
camera center by ``-a`` in the sample plane; the sample plane axes are
mirrored with respect to the Fourier-plane axes by the transform lens. With
that convention the pixel drift of the world origin is ``+a / image_pitch``
and the pupil window moves by ``+a * ratio1`` spectrum pixels, both along
the same axis.

Each capture is rendered in the reference pixel frame (the low-resolution
image sits in the ROI of a larger sensor frame) and then warped into the
capture's own frame with the exact plane-induced homography
``H_i @ inv(H_ref)``, which carries both the scanning drift and the twist.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from . import calib
from .calib import CameraIntrinsics, ExtrinsicPose
from .field import ComplexGrid, GridError, SpectrumGrid, fft2c, ifft2c, window_slices
from .freqmap import OpticalBudget, build_budget


class SimulationError(ValueError):
    pass


# -- scene and pupil ---------------------------------------------------------

@dataclass(frozen=True)
class ObjectScene:
    field: ComplexGrid

    def __post_init__(self):
        amp = np.abs(self.field.data)
        if amp.max() > 1.0 + 1e-12:
            raise SimulationError(f"object amplitude exceeds 1 (max {amp.max():.6f})")

    @property
    def pitch(self) -> float:
        return self.field.pitch

    @property
    def size(self) -> int:
        return self.field.width

    @property
    def amplitude(self) -> np.ndarray:
        return np.abs(self.field.data)

    @property
    def phase(self) -> np.ndarray:
        return np.angle(self.field.data)

    @classmethod
    def from_amplitude_phase(cls, amplitude, phase, pitch=1.0) -> "ObjectScene":
        amplitude = np.clip(np.asarray(amplitude, dtype=float), 0.0, 1.0)
        return cls(ComplexGrid(amplitude * np.exp(1j * np.asarray(phase, dtype=float)), pitch))


def disk_mask(size: int, diameter: float) -> np.ndarray:
    """Boolean disk of ``diameter`` pixels centered on pixel (size//2, size//2)."""
    y, x = np.indices((size, size)) - size // 2
    return x * x + y * y <= (diameter / 2.0) ** 2


def lowpass(field: np.ndarray, radius: float) -> np.ndarray:
    """Keep only spatial frequencies within ``radius`` spectrum pixels of DC."""
    n = field.shape[0]
    return ifft2c(fft2c(field) * disk_mask(n, 2 * radius))


def _bars(size: int) -> np.ndarray:
    """Resolution chart: triplets of bars at shrinking periods, both orientations."""
    img = np.zeros((size, size))
    margin = size // 16
    top = margin
    for p in (size // 10, size // 14, size // 20, size // 28):
        if p < 4:
            break
        w = p // 2
        length = 5 * w
        for k in range(3):
            # vertical bars on the left half, horizontal bars on the right
            img[top:top + length, margin + k * p:margin + k * p + w] = 1.0
            img[top + k * p:top + k * p + w, size // 2 + margin:size // 2 + margin + length] = 1.0
        top += 3 * p + w
    return img


def resolution_target(size: int = 256, pitch: float = 1.0, band_radius: float | None = None,
                      phase_range: float = 1.0, floor: float = 0.25) -> ObjectScene:
    """Procedural bar-chart amplitude with a smooth phase, band-limited.

    The complex field is low-passed to ``band_radius`` spectrum pixels
    (default ``0.25 * size``) and rescaled so its peak modulus is 1. The
    amplitude never falls below roughly ``floor`` so the phase stays defined.
    """
    if size < 16 or size % 2:
        raise SimulationError("target size must be even and at least 16")
    band_radius = 0.25 * size if band_radius is None else band_radius
    amp = floor + (1.0 - floor) * _bars(size)
    yy, xx = (np.indices((size, size)) - size / 2.0) / size
    phase = phase_range * (
        0.6 * np.sin(2 * np.pi * (1.5 * xx + 0.5 * yy))
        + 0.4 * np.exp(-((xx + 0.2) ** 2 + (yy - 0.25) ** 2) / 0.02)
        - 0.4 * np.exp(-((xx - 0.25) ** 2 + (yy + 0.2) ** 2) / 0.01)
    )
    f = lowpass(amp * np.exp(1j * phase), band_radius)
    f /= np.abs(f).max()
    return ObjectScene(ComplexGrid(f, pitch))


def aberration_screen(size: int, diameter: float, strength: float = 1.0, seed: int = 0,
                      correlation: float = 0.2) -> np.ndarray:
    """Unit-modulus random phase screen on a disk, zero outside.

    Gaussian-smoothed white noise with correlation length
    ``correlation * diameter``. Piston and tilt are projected out because
    they only translate the image and cannot be told apart from an object
    shift; what remains is scaled to a peak-to-valley of ``2 * strength``
    radians.
    """
    rng = np.random.default_rng(seed)
    noise = ndimage.gaussian_filter(rng.standard_normal((size, size)), correlation * diameter,
                                    mode="wrap")
    mask = disk_mask(size, diameter)
    y, x = np.nonzero(mask)
    basis = np.column_stack([np.ones(x.size), x - size // 2, y - size // 2]).astype(float)
    vals = noise[mask]
    vals = vals - basis @ np.linalg.lstsq(basis, vals, rcond=None)[0]
    ph = np.zeros((size, size))
    ph[mask] = vals * (2 * strength / max(np.ptp(vals), 1e-300))
    return np.where(mask, np.exp(1j * ph), 0.0)


@dataclass(frozen=True)
class PupilSpec:
    wavelength: float = 520e-9
    focal_length: float = 75e-3
    aperture: float = 75e-3 / 30
    pixel: float = 2.2e-6
    aberration: np.ndarray | None = None

    def __post_init__(self):
        for name in ("wavelength", "focal_length", "aperture", "pixel"):
            if not getattr(self, name) > 0:
                raise SimulationError(f"{name} must be positive")
        if self.aberration is not None:
            ab = np.asarray(self.aberration, dtype=complex)
            if ab.ndim != 2 or ab.shape[0] != ab.shape[1]:
                raise SimulationError("aberration must be a square grid")
            mod = np.abs(ab)
            if np.any((np.abs(mod - 1) > 1e-9) & (mod > 1e-12)):
                raise SimulationError("aberration must be unit modulus on its support")
            object.__setattr__(self, "aberration", ab)

    def budget(self, grid_size: int) -> OpticalBudget:
        return build_budget(self.wavelength, self.focal_length, self.aperture, self.pixel, grid_size)

    def intrinsics(self, u0: float, v0: float) -> CameraIntrinsics:
        return CameraIntrinsics.from_physical(self.focal_length, self.pixel, self.pixel, u0, v0)


def pupil_function(pupil: PupilSpec, grid_size: int, size: int) -> np.ndarray:
    """Disk of diameter ``d_pixel`` times the aberration, on a ``size`` window."""
    d = pupil.budget(grid_size).d_pixel
    disk = disk_mask(size, d).astype(complex)
    if pupil.aberration is None:
        return disk
    if pupil.aberration.shape != (size, size):
        raise SimulationError(f"aberration is {pupil.aberration.shape}, window is {size}")
    return disk * np.where(disk_mask(size, d), pupil.aberration, 0.0)


# -- forward model -----------------------------------------------------------

def fraunhofer_spectrum(scene: ObjectScene) -> SpectrumGrid:
    """Far-field spectrum of the object; constant phase and scale are dropped."""
    return SpectrumGrid(fft2c(scene.field.data), pitch=1.0 / (scene.size * scene.pitch))


def shifted_spectrum(spectrum: np.ndarray, frac) -> np.ndarray:
    """Spectrum resampled at ``k + frac`` (row, col) through a spatial phase ramp."""
    fr, fc = frac
    if fr == 0 and fc == 0:
        return spectrum
    n, m = spectrum.shape
    y = (np.arange(n) - n // 2)[:, None]
    x = (np.arange(m) - m // 2)[None, :]
    ramp = np.exp(-2j * np.pi * (fr * y / n + fc * x / m))
    return fft2c(ifft2c(spectrum) * ramp)


def capture_field(spectrum: np.ndarray, pupil_fn: np.ndarray, center) -> np.ndarray:
    """Low-resolution complex field for a pupil centered at ``center`` (row, col).

    Non-integer centers are handled exactly through :func:`shifted_spectrum`.
    """
    center = np.asarray(center, dtype=float)
    base = np.rint(center)
    frac = center - base
    spec = shifted_spectrum(spectrum, frac)
    try:
        rs, cs = window_slices(spec.shape, base.astype(int), pupil_fn.shape)
    except GridError as exc:
        raise SimulationError(f"capture beyond the recorded spectrum: {exc}") from None
    return ifft2c(spec[rs, cs] * pupil_fn)


def capture(spectrum: SpectrumGrid, pupil: PupilSpec, center_px, out_size: int) -> np.ndarray:
    """Intensity image recorded through the aperture centered at ``center_px``."""
    pfn = pupil_function(pupil, spectrum.width, out_size)
    return np.abs(capture_field(spectrum.data, pfn, center_px)) ** 2


# -- scan plan, board, rig ---------------------------------------------------

@dataclass(frozen=True)
class ScanPlan:
    rows: int = 15
    cols: int = 15
    nominal_step: float = 7.6e-4
    step_error_bound: float = 0.0
    twist_pixel_bound: float = 0.0
    rng_seed: int = 0

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise SimulationError("scan grid must be at least 1x1")
        if self.nominal_step < 0 or self.step_error_bound < 0 or self.twist_pixel_bound < 0:
            raise SimulationError("scan steps and bounds must be nonnegative")

    @property
    def ref_index(self) -> tuple[int, int]:
        return self.rows // 2, self.cols // 2

    def indices(self):
        return [(r, c) for r in range(self.rows) for c in range(self.cols)]

    def nominal_center(self, index) -> np.ndarray:
        """Nominal aperture position (x, y) in meters relative to the reference."""
        r, c = index
        rr, cc = self.ref_index
        return np.array([(c - cc) * self.nominal_step, (r - rr) * self.nominal_step])


@dataclass(frozen=True)
class Checkerboard:
    rows: int = 6
    cols: int = 9
    square: float = 2e-3

    def world_points(self) -> np.ndarray:
        """Inner corners, row-major, as (N, 3) meters on Z_w = 0."""
        i, j = np.mgrid[0:self.rows, 0:self.cols]
        return np.column_stack([j.ravel() * self.square, i.ravel() * self.square,
                                np.zeros(self.rows * self.cols)])


@dataclass(frozen=True)
class Rig:
    """Simulated camera placement and sensor framing."""

    capture_size: int = 64
    image_pitch: float = 2.5337e-5
    object_center: tuple[float, float] = (-2.5e-3, -2.5e-3)
    board: Checkerboard = field(default_factory=Checkerboard)
    corner_noise_px: float = 0.0
    calib_views: int = 8
    quantize_bits: int | None = None

    def __post_init__(self):
        if self.capture_size < 2 or self.capture_size % 2:
            raise SimulationError("capture_size must be even")
        if not self.image_pitch > 0:
            raise SimulationError("image_pitch must be positive")


def frame_size(plan: ScanPlan, rig: Rig) -> int:
    """Even sensor-frame size holding the ROI in every capture.

    The twist rotates the frame about the principal point, so content that
    drifted far from the center also moves by ``drift * angle``; the largest
    roll compatible with the twist bound sets that extra margin.
    """
    rr, cc = plan.ref_index
    reach = max(rr, plan.rows - 1 - rr, cc, plan.cols - 1 - cc) * plan.nominal_step
    drift = (reach + plan.step_error_bound) / rig.image_pitch
    roll = plan.twist_pixel_bound / (rig.capture_size / 2.0)
    half = rig.capture_size // 2 + int(np.ceil(drift * (1 + np.sqrt(2) * roll) + 2 * plan.twist_pixel_bound)) + 2
    return 2 * half


@dataclass(frozen=True)
class TruePose:
    actual_center: tuple[float, float]
    twist: tuple[float, float, float]
    induced_homography: np.ndarray
    board_homography: np.ndarray
    pose: ExtrinsicPose


@dataclass(frozen=True)
class Capture:
    index: tuple[int, int]
    intensity: np.ndarray
    true_pose: TruePose | None = None
    correspondences: np.ndarray | None = None
    mask: np.ndarray | None = None


@dataclass(frozen=True)
class CaptureSet:
    """Stack of captures plus the metadata needed to process them.

    ``correspondences`` rows are ``(Xw_mm, Yw_mm, u_px, v_px)``.
    ``calib_views`` holds extra tilted board views for intrinsics.
    ``roi`` is ``(x0, y0, w, h)`` of the sample window in the reference frame.
    """

    captures: list
    pupil_spec: PupilSpec
    plan: ScanPlan
    grid_size: int
    roi: tuple[int, int, int, int]
    board: Checkerboard = field(default_factory=Checkerboard)
    calib_views: list = field(default_factory=list)
    aligned: bool = False
    truth: dict | None = None

    def __post_init__(self):
        shapes = {c.intensity.shape for c in self.captures}
        if len(shapes) > 1:
            raise SimulationError(f"captures differ in size: {sorted(shapes)}")
        for c in self.captures:
            if np.any(c.intensity < 0):
                raise SimulationError(f"negative intensity in capture {c.index}")
            if c.correspondences is not None and len(c.correspondences) < 4:
                raise SimulationError(f"capture {c.index} has fewer than 4 correspondences")

    @property
    def ref_index(self) -> tuple[int, int]:
        return self.plan.ref_index

    @property
    def indices(self) -> list:
        return [c.index for c in self.captures]

    def by_index(self) -> dict:
        return {c.index: c for c in self.captures}

    def budget(self) -> OpticalBudget:
        return self.pupil_spec.budget(self.grid_size)

    def with_captures(self, captures, **changes) -> "CaptureSet":
        return dataclasses.replace(self, captures=list(captures), **changes)

    def blind(self) -> "CaptureSet":
        caps = [dataclasses.replace(c, true_pose=None) for c in self.captures]
        return dataclasses.replace(self, captures=caps, truth=None)


# -- checkerboard projection -------------------------------------------------

def project_checkerboard(board: Checkerboard, intrinsics: CameraIntrinsics, pose: ExtrinsicPose,
                         noise_sigma_px: float = 0.0, rng=None) -> np.ndarray:
    """Board corners and their pixel images as (N, 4) ``Xw_mm, Yw_mm, u, v`` rows."""
    world = board.world_points()
    try:
        pix = calib.project_points(intrinsics, pose, world)
    except calib.CalibrationError as exc:
        raise SimulationError(str(exc)) from None
    if noise_sigma_px > 0:
        rng = np.random.default_rng() if rng is None else rng
        pix = pix + rng.normal(0.0, noise_sigma_px, pix.shape)
    return np.column_stack([world[:, :2] * 1e3, pix])


# -- pose sampling -----------------------------------------------------------

def _max_displacement(G, corners) -> float:
    return float(np.abs(calib.apply_homography(G, corners) - corners).max())


def twist_homography(K: CameraIntrinsics, angles) -> np.ndarray:
    Km = K.K
    return calib.normalize_homography(Km @ calib.rotation_from_angles(*angles) @ np.linalg.inv(Km))


def sample_twist(rng, K: CameraIntrinsics, size: int, bound: float) -> tuple[float, float, float]:
    """Three small camera rotations whose pixel effect peaks at a random value <= ``bound``.

    The displacement is measured at the corners of the ``size``-pixel
    capture window centered on the principal point. Each axis gets a uniform
    pixel-scale weight before the common scale is solved for, so the
    in-plane rotation is not drowned out by the tilts of a long-focus lens.
    """
    weights = rng.uniform(-1.0, 1.0, 3)
    target = rng.uniform(0.0, bound)
    if bound == 0 or target == 0:
        return (0.0, 0.0, 0.0)
    h = (size - 1) / 2.0
    corners = np.array([[-h, -h], [h, -h], [-h, h], [h, h]]) + [K.u0, K.v0]
    per_px = np.array([1.0 / K.fy, 1.0 / K.fx, 1.0 / (h * np.sqrt(2))])
    direction = weights * per_px

    def disp(t):
        return _max_displacement(twist_homography(K, t * direction), corners)

    lo, hi = 0.0, 1.0
    while disp(hi) < target:
        hi *= 2.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if disp(mid) < target:
            lo = mid
        else:
            hi = mid
    a = 0.5 * (lo + hi) * direction
    return (float(a[0]), float(a[1]), float(a[2]))


def rig_intrinsics(pupil: PupilSpec, frame: int) -> CameraIntrinsics:
    return pupil.intrinsics(frame / 2.0, frame / 2.0)


def pose_for(rig: Rig, K: CameraIntrinsics, actual_center, twist) -> ExtrinsicPose:
    """Extrinsics of the camera whose aperture sits at ``actual_center``."""
    z = K.fx * rig.image_pitch
    cref = np.array([rig.object_center[0], rig.object_center[1], -z])
    center = cref - np.array([actual_center[0], actual_center[1], 0.0])
    R = calib.rotation_from_angles(*twist)
    return ExtrinsicPose(R, -R @ center)


def calibration_view_poses(rng, rig: Rig, K: CameraIntrinsics, n: int) -> list:
    """Tilted board views (15 to 35 degrees) for intrinsics estimation."""
    z = K.fx * rig.image_pitch
    b = rig.board
    mid = np.array([(b.cols - 1) * b.square / 2, (b.rows - 1) * b.square / 2, 0.0])
    poses = []
    for _ in range(n):
        axis = rng.normal(size=3)
        axis[2] *= 0.3
        axis /= np.linalg.norm(axis)
        ang = np.deg2rad(rng.uniform(15, 35))
        R = _axis_angle(axis, ang)
        lateral = rng.uniform(-0.5, 0.5, 2) * (b.cols * b.square)
        T = np.array([lateral[0], lateral[1], z]) - R @ mid
        poses.append(ExtrinsicPose(R, T))
    return poses


def _axis_angle(axis, angle) -> np.ndarray:
    k = np.asarray(axis, float)
    Kx = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(angle) * Kx + (1 - np.cos(angle)) * Kx @ Kx


def draw_poses(plan: ScanPlan, rig: Rig, pupil: PupilSpec) -> dict:
    """All true poses for the plan, drawn in one serial pass of the seeded RNG.

    The reference capture carries no error: offsets are measured relative to
    it. Returns ``{index: TruePose}`` plus the calibration views under the
    key ``"calib"`` and the correspondences under ``"corr"``.
    """
    rng = np.random.default_rng(plan.rng_seed)
    frame = frame_size(plan, rig)
    K = rig_intrinsics(pupil, frame)
    poses = {}
    for idx in plan.indices():
        err = rng.uniform(-plan.step_error_bound, plan.step_error_bound, 2)
        twist = sample_twist(rng, K, rig.capture_size, plan.twist_pixel_bound)
        if idx == plan.ref_index:
            err, twist = np.zeros(2), (0.0, 0.0, 0.0)
        center = plan.nominal_center(idx) + err
        pose = pose_for(rig, K, center, twist)
        poses[idx] = TruePose(
            actual_center=(float(center[0]), float(center[1])),
            twist=tuple(twist),
            induced_homography=twist_homography(K, twist),
            board_homography=calib.board_homography(K, pose),
            pose=pose,
        )
    views = calibration_view_poses(rng, rig, K, rig.calib_views)
    corr = {idx: project_checkerboard(rig.board, K, p.pose, rig.corner_noise_px, rng)
            for idx, p in poses.items()}
    view_corr = [project_checkerboard(rig.board, K, v, rig.corner_noise_px, rng) for v in views]
    return {"poses": poses, "corr": corr, "calib": view_corr, "K": K, "frame": frame}


# -- image warping used by the renderer --------------------------------------

def warp_into(img: np.ndarray, G: np.ndarray, src_origin, frame: int) -> np.ndarray:
    """Place ``img`` (whose pixel (0,0) sits at ``src_origin`` in the reference
    frame) into a ``frame``-sized image warped by ``G`` (reference -> capture)."""
    from .align import warp_image  # local import: align depends on scene types

    h, w = img.shape
    ox, oy = src_origin
    corners = np.array([[ox - 1, oy - 1], [ox + w, oy - 1], [ox - 1, oy + h], [ox + w, oy + h]], float)
    mapped = calib.apply_homography(G, corners)
    x0 = int(np.clip(np.floor(mapped[:, 0].min()), 0, frame))
    y0 = int(np.clip(np.floor(mapped[:, 1].min()), 0, frame))
    x1 = int(np.clip(np.ceil(mapped[:, 0].max()) + 1, 0, frame))
    y1 = int(np.clip(np.ceil(mapped[:, 1].max()) + 1, 0, frame))
    out = np.zeros((frame, frame), dtype=img.dtype)
    if x1 <= x0 or y1 <= y0:
        return out
    # output pixel q (bbox coords) -> frame pixel q + b -> ref pixel -> img pixel
    shift_out = np.array([[1, 0, x0], [0, 1, y0], [0, 0, 1.0]])
    shift_src = np.array([[1, 0, -ox], [0, 1, -oy], [0, 0, 1.0]])
    Hq = np.linalg.inv(shift_out) @ G @ np.linalg.inv(shift_src)
    out[y0:y1, x0:x1] = warp_image(img, Hq, out_shape=(y1 - y0, x1 - x0))
    return out


def quantize(img: np.ndarray, bits: int, full_scale: float) -> np.ndarray:
    levels = 2**bits - 1
    return np.round(np.clip(img / full_scale, 0, 1) * levels) * (full_scale / levels)


# -- dataset -----------------------------------------------------------------

def simulate_dataset(scene: ObjectScene, pupil: PupilSpec, plan: ScanPlan, rig: Rig | None = None) -> CaptureSet:
    """Render the full scan: poses, correspondences and warped intensity frames."""
    rig = Rig() if rig is None else rig
    m = scene.size
    budget = pupil.budget(m)
    W = rig.capture_size
    if budget.d_pixel > W:
        raise SimulationError(f"pupil ({budget.d_pixel:.1f} px) does not fit the {W} px capture window")
    drawn = draw_poses(plan, rig, pupil)
    frame = drawn["frame"]
    pfn = pupil_function(pupil, m, W)
    spec = fraunhofer_spectrum(scene).data
    dc = np.array([m // 2, m // 2], dtype=float)
    roi = (frame // 2 - W // 2, frame // 2 - W // 2, W, W)
    H_ref = drawn["poses"][plan.ref_index].board_homography
    H_ref_inv = np.linalg.inv(H_ref)

    captures = []
    peak = None
    for idx in plan.indices():
        tp = drawn["poses"][idx]
        ax, ay = tp.actual_center
        center = dc + np.array([ay, ax]) * budget.ratio1
        img = np.abs(capture_field(spec, pfn, center)) ** 2
        G = tp.board_homography @ H_ref_inv
        framed = warp_into(img, G, roi[:2], frame)
        captures.append(Capture(idx, framed.astype(np.float32), tp, drawn["corr"][idx]))
        if idx == plan.ref_index:
            peak = float(img.max())
    if rig.quantize_bits:
        captures = [dataclasses.replace(c, intensity=quantize(c.intensity, rig.quantize_bits, peak)
                                        .astype(np.float32)) for c in captures]
    truth = {
        "object": scene.field,
        "pupil": pfn,
        "intrinsics": drawn["K"],
        "image_pitch": rig.image_pitch,
        "object_center": rig.object_center,
        "rig": rig,
    }
    return CaptureSet(
        captures=captures, pupil_spec=dataclasses.replace(pupil, aberration=None), plan=plan,
        grid_size=m, roi=roi, board=rig.board, calib_views=drawn["calib"], truth=truth,
    )
