import numpy as np
import pytest

from camfp import scene
from camfp.freqmap import build_budget

# desk-scale version of the simulated study: 256 px reconstruction grid,
# 64 px captures, 9 spectrum px between pupil positions (about 70% linear
# overlap for a 29.6 px pupil), 30 image px of drift per scan step
GRID = 256
CAPTURE = 64
SPECTRUM_STEP_PX = 9
IMAGE_STEP_PX = 30


def desk_geometry(grid=GRID):
    b = scene.PupilSpec().budget(grid)
    step = SPECTRUM_STEP_PX / b.ratio1
    return b, step, step / IMAGE_STEP_PX


def scan_plan(seed=0, step_error_px=15.0, twist_px=2.0, rows=15, cols=15):
    _, step, pitch = desk_geometry()
    return scene.ScanPlan(rows, cols, step, step_error_px * pitch, twist_px, seed)


def desk_rig(**kw):
    _, _, pitch = desk_geometry()
    return scene.Rig(capture_size=CAPTURE, image_pitch=pitch, **kw)


@pytest.fixture(scope="session")
def budget():
    return build_budget(520e-9, 75e-3, 2.5e-3, 2.2e-6, GRID)


@pytest.fixture(scope="session")
def target():
    return scene.resolution_target(GRID)


@pytest.fixture(scope="session")
def ideal_set(target):
    """15x15 scan without pose error (drift only)."""
    return scene.simulate_dataset(target, scene.PupilSpec(), scan_plan(0, 0.0, 0.0), desk_rig())


@pytest.fixture(scope="session")
def perturbed_set(target):
    """15x15 scan with the full pose-error protocol."""
    return scene.simulate_dataset(target, scene.PupilSpec(), scan_plan(1), desk_rig())


@pytest.fixture(scope="session")
def small_perturbed_set():
    """5x5 scan on a 128 px grid, cheap enough for repeated reconstructions."""
    obj = scene.resolution_target(128)
    b = scene.PupilSpec().budget(128)
    step = 5 / b.ratio1
    pitch = step / 30
    plan = scene.ScanPlan(5, 5, step, 10 * pitch, 2.0, rng_seed=4)
    rig = scene.Rig(capture_size=32, image_pitch=pitch)
    return scene.simulate_dataset(obj, scene.PupilSpec(), plan, rig)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
