"""CaptureSet directories and 16-bit graymap renderings.

Layout of a dataset directory::

    manifest              key=value: plan, pupil spec, grid, ROI, board
    cap_RR_CC.f32         raw little-endian float32 intensity, row-major
    cap_RR_CC.corr        "Xw_mm Yw_mm u_px v_px" per line
    cap_RR_CC.mask        packed validity bits (aligned sets only)
    calview_VV.corr       extra board views for intrinsics
    truth.txt             "row col cx_m cy_m h11 .. h33" (induced homography)
    truth_poses.txt       "row col rx ry rz R11 .. R33 Tx Ty Tz"
    truth_object.c64      true object, field grid format (+ .meta)
    truth_pupil.c64       true pupil function (+ .meta)

The ``truth*`` files are left out of blind exports.
"""

from __future__ import annotations

import os
import shutil
from pathlib import Path

import numpy as np

from . import calib
from .calib import CameraIntrinsics, ExtrinsicPose
from .field import ComplexGrid, read_grid, write_grid
from .kv import fmt, parse_bool, parse_floats, read_keyvalue, write_keyvalue
from .scene import Capture, CaptureSet, Checkerboard, PupilSpec, ScanPlan, TruePose, twist_homography

FORMAT = "camfp-captureset"
TRUTH_FILES = ("truth.txt", "truth_poses.txt", "truth_rig", "truth_object.c64",
               "truth_object.c64.meta", "truth_pupil.c64", "truth_pupil.c64.meta")


class DatasetError(ValueError):
    pass


def capture_name(index) -> str:
    r, c = index
    return f"cap_{r:02d}_{c:02d}"


def _write_corr(path, corr):
    np.savetxt(path, np.asarray(corr, dtype=float), fmt="%.17g")


def _read_corr(path):
    a = np.loadtxt(path, dtype=float, ndmin=2)
    if a.shape[1] != 4:
        raise DatasetError(f"{path}: expected 4 columns, got {a.shape[1]}")
    return a


def save_capture_set(cs: CaptureSet, directory, include_truth: bool = True) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    h, w = cs.captures[0].intensity.shape
    p, ps = cs.plan, cs.pupil_spec
    manifest = {
        "format": FORMAT,
        "version": 1,
        "rows": p.rows, "cols": p.cols,
        "nominal_step": fmt(float(p.nominal_step)),
        "step_error_bound": fmt(float(p.step_error_bound)),
        "twist_pixel_bound": fmt(float(p.twist_pixel_bound)),
        "seed": p.rng_seed,
        "wavelength": fmt(ps.wavelength), "focal_length": fmt(ps.focal_length),
        "aperture": fmt(ps.aperture), "pixel": fmt(ps.pixel),
        "grid_size": cs.grid_size,
        "width": w, "height": h,
        "roi": fmt(tuple(int(v) for v in cs.roi)),
        "board_rows": cs.board.rows, "board_cols": cs.board.cols,
        "board_square": fmt(float(cs.board.square)),
        "calib_views": len(cs.calib_views),
        "aligned": fmt(bool(cs.aligned)),
        "captures": " ".join(capture_name(c.index) for c in cs.captures),
    }
    write_keyvalue(d / "manifest", manifest)
    for c in cs.captures:
        name = capture_name(c.index)
        np.ascontiguousarray(c.intensity, dtype="<f4").tofile(d / f"{name}.f32")
        if c.correspondences is not None:
            _write_corr(d / f"{name}.corr", c.correspondences)
        if c.mask is not None:
            np.packbits(np.asarray(c.mask, bool).ravel()).tofile(d / f"{name}.mask")
    for v, corr in enumerate(cs.calib_views):
        _write_corr(d / f"calview_{v:02d}.corr", corr)
    if include_truth and cs.truth is not None:
        _write_truth(cs, d)
    return d


def _write_truth(cs, d):
    lines, pose_lines = [], []
    for c in cs.captures:
        tp = c.true_pose
        if tp is None:
            continue
        r, col = c.index
        h = " ".join(f"{v:.17g}" for v in tp.induced_homography.ravel())
        lines.append(f"{r} {col} {tp.actual_center[0]:.17g} {tp.actual_center[1]:.17g} {h}")
        rot = " ".join(f"{v:.17g}" for v in tp.pose.R.ravel())
        tr = " ".join(f"{v:.17g}" for v in tp.pose.T)
        tw = " ".join(f"{v:.17g}" for v in tp.twist)
        pose_lines.append(f"{r} {col} {tw} {rot} {tr}")
    (d / "truth.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
    (d / "truth_poses.txt").write_text("\n".join(pose_lines) + "\n", encoding="utf-8")
    t = cs.truth
    K = t["intrinsics"]
    write_keyvalue(d / "truth_rig", {
        "fx": fmt(K.fx), "fy": fmt(K.fy), "u0": fmt(K.u0), "v0": fmt(K.v0),
        "image_pitch": fmt(float(t["image_pitch"])),
        "object_center": fmt(tuple(float(v) for v in t["object_center"])),
    })
    write_grid(d / "truth_object.c64", t["object"])
    write_grid(d / "truth_pupil.c64", ComplexGrid(t["pupil"], 1.0))


def export_variants(cs: CaptureSet, out) -> tuple[Path, Path]:
    """Write ``out/dataset`` (with truth) and ``out/blind`` (without).

    Data files of the blind copy are hard links where the filesystem allows.
    """
    out = Path(out)
    full = save_capture_set(cs, out / "dataset")
    blind = out / "blind"
    if blind.exists():
        shutil.rmtree(blind)
    blind.mkdir(parents=True)
    for f in sorted(full.iterdir()):
        if f.name in TRUTH_FILES:
            continue
        try:
            os.link(f, blind / f.name)
        except OSError:
            shutil.copy2(f, blind / f.name)
    return full, blind


def _parse_index(name):
    _, r, c = name.split("_")
    return int(r), int(c)


def load_capture_set(directory) -> CaptureSet:
    d = Path(directory)
    if not (d / "manifest").is_file():
        raise DatasetError(f"{d}: not a dataset directory (no manifest)")
    m = read_keyvalue(d / "manifest")
    if m.get("format") != FORMAT:
        raise DatasetError(f"{d}: unknown dataset format {m.get('format')!r}")
    try:
        h, w = int(m["height"]), int(m["width"])
        plan = ScanPlan(int(m["rows"]), int(m["cols"]), float(m["nominal_step"]),
                        float(m["step_error_bound"]), float(m["twist_pixel_bound"]), int(m["seed"]))
        pupil = PupilSpec(float(m["wavelength"]), float(m["focal_length"]),
                          float(m["aperture"]), float(m["pixel"]))
        board = Checkerboard(int(m["board_rows"]), int(m["board_cols"]), float(m["board_square"]))
        roi = tuple(int(v) for v in parse_floats(m["roi"]))
        aligned = parse_bool(m["aligned"])
        names = m["captures"].split()
        n_views = int(m["calib_views"])
    except KeyError as exc:
        raise DatasetError(f"{d}/manifest: missing key {exc}") from None
    truth_poses = _read_truth(d)
    captures = []
    for name in names:
        idx = _parse_index(name)
        f = d / f"{name}.f32"
        if not f.is_file():
            raise DatasetError(f"{f}: missing capture file")
        data = np.fromfile(f, dtype="<f4")
        if data.size != h * w:
            raise DatasetError(f"{f}: expected {h * w} samples, found {data.size}")
        corr_path = d / f"{name}.corr"
        corr = _read_corr(corr_path) if corr_path.is_file() else None
        mask = None
        mask_path = d / f"{name}.mask"
        if mask_path.is_file():
            bits = np.unpackbits(np.fromfile(mask_path, dtype=np.uint8))[: h * w]
            mask = bits.astype(bool).reshape(h, w)
        captures.append(Capture(idx, data.reshape(h, w).astype(np.float32), truth_poses.get(idx), corr, mask))
    views = []
    for v in range(n_views):
        f = d / f"calview_{v:02d}.corr"
        if not f.is_file():
            raise DatasetError(f"{f}: missing calibration view")
        views.append(_read_corr(f))
    return CaptureSet(captures=captures, pupil_spec=pupil, plan=plan, grid_size=int(m["grid_size"]),
                      roi=roi, board=board, calib_views=views, aligned=aligned,
                      truth=_read_truth_extras(d))


def _read_truth(d) -> dict:
    f = d / "truth_poses.txt"
    rig = d / "truth_rig"
    if not (f.is_file() and rig.is_file() and (d / "truth.txt").is_file()):
        return {}
    r = read_keyvalue(rig)
    K = CameraIntrinsics(float(r["fx"]), float(r["fy"]), float(r["u0"]), float(r["v0"]))
    centers = {}
    for row in np.loadtxt(d / "truth.txt", ndmin=2):
        centers[(int(row[0]), int(row[1]))] = (float(row[2]), float(row[3]))
    out = {}
    for row in np.loadtxt(f, ndmin=2):
        idx = (int(row[0]), int(row[1]))
        twist = tuple(float(v) for v in row[2:5])
        pose = ExtrinsicPose(calib.nearest_rotation(row[5:14].reshape(3, 3)), row[14:17])
        out[idx] = TruePose(centers[idx], twist, twist_homography(K, twist),
                            calib.board_homography(K, pose), pose)
    return out


def _read_truth_extras(d) -> dict | None:
    if not (d / "truth_rig").is_file():
        return None
    r = read_keyvalue(d / "truth_rig")
    truth = {
        "intrinsics": CameraIntrinsics(float(r["fx"]), float(r["fy"]), float(r["u0"]), float(r["v0"])),
        "image_pitch": float(r["image_pitch"]),
        "object_center": tuple(parse_floats(r["object_center"])),
    }
    if (d / "truth_object.c64").is_file():
        truth["object"] = read_grid(d / "truth_object.c64")
    if (d / "truth_pupil.c64").is_file():
        truth["pupil"] = read_grid(d / "truth_pupil.c64").data
    return truth


# -- graymaps ----------------------------------------------------------------

def to_uint16(img, lo=None, hi=None) -> np.ndarray:
    img = np.asarray(img, dtype=float)
    lo = float(np.min(img)) if lo is None else lo
    hi = float(np.max(img)) if hi is None else hi
    scale = 65535.0 / (hi - lo) if hi > lo else 0.0
    return np.round(np.clip((img - lo) * scale, 0, 65535)).astype(np.uint16)


def write_pgm16(path, img, lo=None, hi=None) -> None:
    """Binary 16-bit PGM (P5, maxval 65535, big-endian samples)."""
    data = to_uint16(img, lo, hi)
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.astype(">u2").tobytes())


def read_pgm16(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    fields, pos = [], 0
    while len(fields) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        fields.append(raw[pos:end].decode("ascii"))
        pos = end
    if fields[0] != "P5":
        raise DatasetError(f"{path}: not a binary graymap")
    w, h, maxval = int(fields[1]), int(fields[2]), int(fields[3])
    pos += 1
    dtype = ">u2" if maxval > 255 else "u1"
    return np.frombuffer(raw[pos:], dtype=dtype, count=w * h).reshape(h, w).astype(np.uint16)
