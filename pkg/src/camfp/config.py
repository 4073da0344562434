"""Experiment configuration: INI-style sections of ``key = value`` lines.

Example::

    [scene]
    source = target          ; or "files" with amplitude/phase paths
    size = 256

    [scan]
    rows = 15
    cols = 15
    spectrum_step_px = 9     ; pupil step in reconstruction-spectrum pixels
    image_step_px = 30       ; image drift per nominal step
    step_error_px = 15
    twist_px = 2

    [run]
    mode = full
    seed = 0
"""

from __future__ import annotations

import configparser
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .field import read_grid
from .recon import ReconConfig
from .scene import (ObjectScene, PupilSpec, Rig, ScanPlan, aberration_screen,
                    resolution_target)

MODES = ("location_only", "homography_only", "full")
SOURCES = ("target", "files")


class ConfigError(ValueError):
    pass


@dataclass
class SceneConfig:
    source: str = "target"
    size: int = 256
    band_fraction: float = 0.25
    phase_range: float = 1.0
    amplitude: str = ""
    phase: str = ""


@dataclass
class PupilConfig:
    wavelength: float = 520e-9
    focal_length: float = 75e-3
    f_number: float = 30.0
    pixel: float = 2.2e-6
    aberration_strength: float = 0.0
    aberration_seed: int = 0


@dataclass
class ScanConfig:
    rows: int = 15
    cols: int = 15
    spectrum_step_px: float = 9.0
    image_step_px: float = 30.0
    step_error_px: float = 0.0
    twist_px: float = 0.0


@dataclass
class RigConfig:
    capture_size: int = 64
    corner_noise_px: float = 0.0
    calib_views: int = 8
    quantize_bits: int = 0


@dataclass
class ReconSection:
    alpha: float = 1.0
    beta: float = 1.0
    max_iters: int = 50
    tol: float = 1e-4
    order: str = "spiral"
    update_pupil: bool = True
    pupil_warmup: int = 0
    prune: bool = False
    prune_threshold: float = 0.25


@dataclass
class ExperimentConfig:
    scene: SceneConfig = field(default_factory=SceneConfig)
    pupil: PupilConfig = field(default_factory=PupilConfig)
    scan: ScanConfig = field(default_factory=ScanConfig)
    rig: RigConfig = field(default_factory=RigConfig)
    recon: ReconSection = field(default_factory=ReconSection)
    mode: str = "full"
    seed: int = 0
    out: str = "runs"
    base_dir: str = "."

    def validate(self) -> "ExperimentConfig":
        if self.mode not in MODES:
            raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {self.mode!r}")
        if self.scene.source not in SOURCES:
            raise ConfigError(f"scene source must be one of {SOURCES}, got {self.scene.source!r}")
        if self.scene.source == "files":
            for name in ("amplitude", "phase"):
                p = self.resolve(getattr(self.scene, name))
                if not getattr(self.scene, name) or not p.is_file():
                    raise ConfigError(f"scene {name} file not found: {p}")
        for sec in ("scene", "pupil", "scan", "rig"):
            for f in dataclasses.fields(getattr(self, sec)):
                v = getattr(getattr(self, sec), f.name)
                if isinstance(v, (int, float)) and not isinstance(v, bool) and v < 0:
                    raise ConfigError(f"[{sec}] {f.name} must be nonnegative, got {v}")
        try:
            self.recon_config()
        except ValueError as exc:
            raise ConfigError(f"[recon] {exc}") from None
        return self

    def resolve(self, path: str) -> Path:
        p = Path(path)
        return p if p.is_absolute() else Path(self.base_dir) / p

    # -- derived objects ----------------------------------------------------

    def recon_config(self) -> ReconConfig:
        r = self.recon
        return ReconConfig(alpha=r.alpha, beta=r.beta, max_iters=r.max_iters, tol=r.tol,
                           order=r.order, update_pupil=r.update_pupil,
                           pupil_warmup=r.pupil_warmup, seed=self.seed)

    def pupil_spec(self, with_aberration=True) -> PupilSpec:
        p = self.pupil
        spec = PupilSpec(p.wavelength, p.focal_length, p.focal_length / p.f_number, p.pixel)
        if with_aberration and p.aberration_strength > 0:
            d = spec.budget(self.scene.size).d_pixel
            ab = aberration_screen(self.rig.capture_size, d, p.aberration_strength, p.aberration_seed)
            spec = dataclasses.replace(spec, aberration=ab)
        return spec

    def geometry(self) -> tuple[float, float]:
        """Nominal aperture step (m) and sample-plane size of one image pixel (m)."""
        b = self.pupil_spec(False).budget(self.scene.size)
        step = self.scan.spectrum_step_px / b.ratio1
        return step, step / self.scan.image_step_px

    def scan_plan(self) -> ScanPlan:
        step, pitch = self.geometry()
        s = self.scan
        return ScanPlan(s.rows, s.cols, step, s.step_error_px * pitch, s.twist_px, self.seed)

    def rig_spec(self) -> Rig:
        _, pitch = self.geometry()
        r = self.rig
        return Rig(capture_size=r.capture_size, image_pitch=pitch, corner_noise_px=r.corner_noise_px,
                   calib_views=r.calib_views, quantize_bits=r.quantize_bits or None)

    def object_scene(self) -> ObjectScene:
        s = self.scene
        if s.source == "target":
            return resolution_target(s.size, band_radius=s.band_fraction * s.size,
                                     phase_range=s.phase_range)
        amp = load_image(self.resolve(s.amplitude))
        ph = load_image(self.resolve(s.phase))
        if amp.shape != ph.shape or amp.shape[0] != amp.shape[1]:
            raise ConfigError("amplitude and phase images must be square and the same size")
        if amp.shape[0] != s.size:
            raise ConfigError(f"scene images are {amp.shape[0]} px but size = {s.size}")
        amp = amp / max(float(amp.max()), 1e-300)
        ph = (ph - ph.min()) / max(float(np.ptp(ph)), 1e-300) * s.phase_range
        return ObjectScene.from_amplitude_phase(amp, ph)

    # -- persistence --------------------------------------------------------

    def to_parser(self) -> configparser.ConfigParser:
        cp = configparser.ConfigParser()
        for sec in ("scene", "pupil", "scan", "rig", "recon"):
            obj = getattr(self, sec)
            cp[sec] = {f.name: _text(getattr(obj, f.name)) for f in dataclasses.fields(obj)}
        cp["run"] = {"mode": self.mode, "seed": str(self.seed), "out": self.out}
        return cp

    def write(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            self.to_parser().write(fh)


def _text(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _coerce(cls_field, raw: str):
    kind = cls_field.type if isinstance(cls_field.type, str) else cls_field.type.__name__
    try:
        if kind == "bool":
            return configparser.ConfigParser.BOOLEAN_STATES[raw.strip().lower()]
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
    except (KeyError, ValueError):
        raise ConfigError(f"{cls_field.name}: cannot read {raw!r} as {kind}") from None
    return raw.strip()


def load_config(path=None, **overrides) -> ExperimentConfig:
    """Read a config file (or defaults) and apply ``mode``/``seed``/``out`` overrides."""
    cfg = ExperimentConfig()
    if path is not None:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        cp = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise ConfigError(f"{path}: {exc}") from None
        cfg.base_dir = str(path.parent)
        for sec in cp.sections():
            if sec == "run":
                run = cp["run"]
                cfg.mode = run.get("mode", cfg.mode)
                cfg.seed = int(run.get("seed", cfg.seed))
                cfg.out = run.get("out", cfg.out)
                continue
            if sec not in ("scene", "pupil", "scan", "rig", "recon"):
                raise ConfigError(f"{path}: unknown section [{sec}]")
            obj = getattr(cfg, sec)
            known = {f.name: f for f in dataclasses.fields(obj)}
            for key, raw in cp[sec].items():
                if key not in known:
                    raise ConfigError(f"{path}: unknown key {key!r} in [{sec}]")
                setattr(obj, key, _coerce(known[key], raw))
    for k, v in overrides.items():
        if v is not None:
            setattr(cfg, k, v)
    return cfg.validate()


def load_image(path: Path) -> np.ndarray:
    """Read a scene image: binary graymap, ``.npy`` array or raw field grid."""
    from .io import read_pgm16

    suffix = path.suffix.lower()
    if suffix == ".npy":
        return np.asarray(np.load(path), dtype=float)
    if suffix in (".pgm", ".pnm"):
        return read_pgm16(path).astype(float)
    if Path(str(path) + ".meta").is_file():
        return np.abs(read_grid(path).data)
    raise ConfigError(f"unsupported scene image format: {path}")
