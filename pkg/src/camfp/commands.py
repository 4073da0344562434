"""The five user-facing commands. Each writes only inside its output directory."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import align, io, pipeline
from .config import ExperimentConfig
from .field import ComplexGrid, read_grid, write_grid
from .kv import fmt, read_keyvalue, write_keyvalue
from .scene import disk_mask, simulate_dataset

log = logging.getLogger(__name__)

PERCENTILES = (50, 90, 95, 100)
INIT_NOTE = ("spectrum seeded with the reference amplitude (flat phase) instead of zero; "
             "eps=1e-12 guards the amplitude projection")


class CommandError(RuntimeError):
    pass


@dataclass(frozen=True)
class MetricsReport:
    amplitude_rmse: float | None
    phase_rmse: float | None
    psnr: float | None
    pupil_phase_correlation: float | None
    history: list
    extraction_percentiles: dict | None
    n_pruned: int

    def __post_init__(self):
        for name in ("amplitude_rmse", "phase_rmse", "psnr", "pupil_phase_correlation"):
            v = getattr(self, name)
            if v is not None and not math.isfinite(v):
                raise CommandError(f"metric {name} is not finite ({v})")
        if self.extraction_percentiles is not None:
            vals = list(self.extraction_percentiles.values())
            if vals != sorted(vals):
                raise CommandError("extraction percentiles are not sorted")

    def as_items(self) -> dict:
        def show(v):
            return "absent" if v is None else fmt(float(v))

        items = {
            "amplitude_rmse": show(self.amplitude_rmse),
            "phase_rmse": show(self.phase_rmse),
            "psnr_db": show(self.psnr),
            "pupil_phase_correlation": show(self.pupil_phase_correlation),
            "iterations": len(self.history) - 1,
            "misfit_initial": fmt(float(self.history[0])),
            "misfit_final": fmt(float(self.history[-1])),
            "pruned": self.n_pruned,
        }
        if self.extraction_percentiles is None:
            items["extraction_error_px"] = "absent"
        else:
            for p, v in self.extraction_percentiles.items():
                items[f"extraction_error_p{p}_px"] = fmt(float(v))
        return items


def percentiles(errors) -> dict:
    vals = np.percentile(np.asarray(errors, float), PERCENTILES)
    return {p: float(v) for p, v in zip(PERCENTILES, np.maximum.accumulate(vals))}


# -- simulate ----------------------------------------------------------------

def cmd_simulate(config: ExperimentConfig, out) -> tuple[Path, Path]:
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    cs = simulate_dataset(config.object_scene(), config.pupil_spec(), config.scan_plan(), config.rig_spec())
    full, blind = io.export_variants(cs, out)
    config.write(out / "config.ini")
    log.info("wrote %d captures to %s (blind copy in %s)", len(cs.captures), full, blind)
    return full, blind


# -- calibrate ---------------------------------------------------------------

def calibration_items(cs, cal: pipeline.CalibrationResult) -> dict:
    items = {"captures": len(cs.captures), "reference": fmt(cs.ref_index),
             "ratio2_m_per_px": fmt(cal.ratio2)}
    K = cal.intrinsics
    if K is None:
        items["intrinsics"] = "absent"
    else:
        items.update({"fx": fmt(K.fx), "fy": fmt(K.fy), "u0": fmt(K.u0), "v0": fmt(K.v0)})
    for idx in sorted(cal.offsets):
        name = io.capture_name(idx)
        items[f"{name}.offset_px"] = fmt(cal.offsets[idx])
        items[f"{name}.origin_px"] = fmt(cal.origins[idx])
        items[f"{name}.fit_rms_px"] = fmt(float(cal.fit_rms[idx]))
        if idx in cal.poses:
            items[f"{name}.R"] = fmt(tuple(cal.poses[idx].R.ravel()))
            items[f"{name}.T"] = fmt(tuple(cal.poses[idx].T))
    return items


def extraction_report(cs, cal) -> dict | None:
    if any(c.true_pose is None for c in cs.captures):
        return None
    errs = pipeline.extraction_errors(cal.offsets, pipeline.true_offsets(cs))
    return percentiles(errs)


def cmd_calibrate(dataset, out=None) -> Path:
    cs = io.load_capture_set(dataset)
    cal = pipeline.calibrate(cs)
    items = calibration_items(cs, cal)
    pct = extraction_report(cs, cal)
    if pct is None:
        items["extraction_error_px"] = "absent"
    else:
        items.update({f"extraction_error_p{p}_px": fmt(v) for p, v in pct.items()})
    out = Path(out) if out is not None else Path(dataset)
    out.mkdir(parents=True, exist_ok=True)
    path = out / "calibration.txt"
    write_keyvalue(path, items)
    return path


# -- align -------------------------------------------------------------------

def cmd_align(dataset, out, mode="homography_only") -> Path:
    if mode not in pipeline.MODES:
        raise CommandError(f"unknown mode {mode!r}")
    cs = io.load_capture_set(dataset)
    if cs.aligned:
        raise CommandError(f"{dataset} is already aligned")
    cal = pipeline.calibrate(cs)
    if mode == "location_only":
        aligned = align.translation_alignment(cs, cal.offsets, region=cs.roi)
    else:
        aligned = align.align_dataset(cs, cal.homographies, region=cs.roi)
    return io.save_capture_set(aligned, out)


# -- reconstruct -------------------------------------------------------------

def _metrics(cs, cal, result: pipeline.ModeResult) -> MetricsReport:
    truth = cs.truth or {}
    obj = truth.get("object")
    amp = ph = ps = corr = None
    if obj is not None:
        t = obj.data if isinstance(obj, ComplexGrid) else np.asarray(obj)
        if t.shape == result.object.shape:
            amp = pipeline.amplitude_rmse(result.object, t)
            ph = pipeline.phase_rmse(result.object, t)
            ps = pipeline.psnr(result.object, t)
    pupil = truth.get("pupil")
    if pupil is not None and np.shape(pupil) == result.pupil.shape:
        d = cs.budget().d_pixel
        corr = pipeline.pupil_phase_correlation(result.pupil, pupil, disk_mask(result.pupil.shape[0], d))
    return MetricsReport(amp, ph, ps, corr, list(result.history), extraction_report(cs, cal),
                         result.n_pruned)


def cmd_reconstruct(dataset, config: ExperimentConfig, out, mode=None) -> MetricsReport:
    mode = config.mode if mode is None else mode
    if mode not in pipeline.MODES:
        raise CommandError(f"unknown mode {mode!r}; expected one of {', '.join(pipeline.MODES)}")
    cs = io.load_capture_set(dataset)
    cal = pipeline.calibrate(cs)
    result = pipeline.run_mode(cs, mode, config.recon_config(), cal, prune=config.recon.prune,
                               prune_threshold=config.recon.prune_threshold)
    metrics = _metrics(cs, cal, result)

    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    budget = cs.budget().with_ratio2(cal.ratio2)
    write_grid(out / "object.c64", ComplexGrid(result.object, 1.0))
    write_grid(out / "pupil.c64", ComplexGrid(result.pupil, 1.0 / budget.grid_size))
    io.write_pgm16(out / "amplitude.pgm", np.abs(result.object))
    io.write_pgm16(out / "phase.pgm", np.angle(result.object), -np.pi, np.pi)
    io.write_pgm16(out / "pupil_phase.pgm", np.angle(result.pupil), -np.pi, np.pi)
    with open(out / "misfit.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["iteration", "misfit"])
        for k, v in enumerate(result.history):
            w.writerow([k, repr(float(v))])
    write_keyvalue(out / "metrics.txt", metrics.as_items())
    run = {
        "dataset": str(Path(dataset).resolve()),
        "mode": mode,
        "grid_size": budget.grid_size,
        "d_pixel": fmt(budget.d_pixel),
        "ratio1_px_per_m": fmt(budget.ratio1),
        "ratio2_m_per_px": fmt(budget.ratio2),
        "res_aperture_m": fmt(budget.res_aperture),
        "k_aperture": fmt(budget.k_aperture),
        "k_max": fmt(budget.k_max),
        "initialization": INIT_NOTE,
        "warnings": len(result.warnings),
    }
    for idx in result.indices:
        name = io.capture_name(idx)
        run[f"{name}.offset_px"] = fmt(cal.offsets[idx])
        run[f"{name}.center"] = fmt(result.centers[idx])
    write_keyvalue(out / "run", run)
    config.write(out / "config.ini")
    return metrics


# -- report ------------------------------------------------------------------

def _panel(images, gap=4):
    h = max(a.shape[0] for a in images)
    w = sum(a.shape[1] for a in images) + gap * (len(images) - 1)
    panel = np.zeros((h, w))
    x = 0
    for a in images:
        panel[:a.shape[0], x:x + a.shape[1]] = a
        x += a.shape[1] + gap
    return panel


def cmd_report(run_dirs, out) -> Path:
    run_dirs = [Path(d) for d in run_dirs]
    if not run_dirs:
        raise CommandError("report needs at least one run directory")
    tables, rows_amp, rows_ph = [], [], []
    for d in run_dirs:
        if not (d / "metrics.txt").is_file():
            raise CommandError(f"{d}: not a reconstruction run (no metrics.txt)")
        m = read_keyvalue(d / "metrics.txt")
        m["mode"] = read_keyvalue(d / "run").get("mode", "?")
        tables.append(m)
        obj = read_grid(d / "object.c64").data
        amp = np.abs(obj)
        rows_amp.append(amp / max(float(amp.max()), 1e-300))
        rows_ph.append((np.angle(obj) + np.pi) / (2 * np.pi))
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    keys = ["mode"] + sorted({k for t in tables for k in t} - {"mode"})
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["metric"] + [d.name for d in run_dirs])
        for k in keys:
            w.writerow([k] + [t.get(k, "absent") for t in tables])
    panel = np.vstack([_panel(rows_amp), np.zeros((4, _panel(rows_amp).shape[1])), _panel(rows_ph)])
    io.write_pgm16(out / "panel.pgm", panel, 0.0, 1.0)
    return out / "comparison.csv"
