"""Camera-scanning Fourier ptychography: simulation, calibration-based pose
correction and alternating-projection reconstruction."""

from .field import ComplexGrid, SpectrumGrid, fft2_centered, ifft2_centered
from .freqmap import OpticalBudget, build_budget
from .scene import CaptureSet, PupilSpec, ScanPlan, resolution_target, simulate_dataset

__version__ = "0.1.0"

__all__ = [
    "ComplexGrid", "SpectrumGrid", "fft2_centered", "ifft2_centered",
    "OpticalBudget", "build_budget",
    "CaptureSet", "PupilSpec", "ScanPlan", "resolution_target", "simulate_dataset",
]
