import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from camfp import recon, scene
from camfp.field import fft2c, ifft2c, window_slices
from camfp.freqmap import build_budget
from camfp.recon import ReconConfig, ReconstructionError


def budget_with(grid, d_pixel):
    """Desk optics with the aperture chosen to give ``d_pixel`` on ``grid``."""
    wl, f, px = 520e-9, 75e-3, 2.2e-6
    return build_budget(wl, f, d_pixel * 1.22 * wl * f / (grid * px), px, grid)


def synthetic(seed, M=64, W=16, n=3, step=3, d=8.0, pupil_phase=0.0):
    """Noise-free captures of a random band-limited object on an n x n grid of centers."""
    rng = np.random.default_rng(seed)
    field = rng.uniform(0.5, 1.0, (M, M)) * np.exp(1j * rng.uniform(0, 1, (M, M)))
    X = fft2c(scene.lowpass(field, M / 4))
    b = budget_with(M, d)
    support = scene.disk_mask(W, b.d_pixel)
    yy, xx = np.mgrid[:W, :W] - W // 2
    P = support * np.exp(1j * pupil_phase * (xx * yy) / (W / 2) ** 2)
    half = n // 2
    centers = [(M // 2 + i * step, M // 2 + j * step)
               for i in range(-half, half + 1) for j in range(-half, half + 1)]
    images = []
    for c in centers:
        rs, cs = window_slices((M, M), c, W)
        images.append(np.abs(ifft2c(X[rs, cs] * P)) ** 2)
    return np.array(images), centers, b, X, P


# -- configuration -----------------------------------------------------------

@pytest.mark.parametrize("kw", [dict(alpha=0), dict(alpha=2.5), dict(beta=-1), dict(beta=2.01),
                                dict(order="zigzag"), dict(max_iters=-1)])
def test_config_rejects_bad_values(kw):
    with pytest.raises(ReconstructionError):
        ReconConfig(**kw)


def test_config_accepts_edges():
    ReconConfig(alpha=2.0, beta=2.0, order="random", max_iters=0)


# -- traversal ---------------------------------------------------------------

def test_spiral_starts_at_reference_and_moves_outward():
    centers = [(r, c) for r in range(20, 45, 6) for c in range(20, 45, 6)]
    ref = 12
    order = recon.traversal_order(centers, ref, "spiral")
    assert order[0] == ref
    d = np.asarray(centers, float)[order] - np.asarray(centers[ref], float)
    radius = np.hypot(d[:, 0], d[:, 1])
    assert np.all(np.diff(radius) >= -1e-9)
    assert sorted(order) == list(range(len(centers)))


def test_raster_and_random_orders():
    centers = [(10, 10), (10, 20), (20, 10), (20, 20)]
    assert list(recon.traversal_order(centers, 0, "raster")) == [0, 1, 2, 3]
    a = recon.traversal_order(centers, 0, "random", np.random.default_rng(3))
    b = recon.traversal_order(centers, 0, "random", np.random.default_rng(3))
    assert list(a) == list(b)
    assert sorted(a) == [0, 1, 2, 3]


# -- the projection ------------------------------------------------------------

complex_grids = arrays(np.complex128, (8, 8),
                       elements=st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False))
amplitudes = arrays(np.float64, (8, 8), elements=st.floats(0, 1e3))


@settings(max_examples=60, deadline=None)
@given(complex_grids, amplitudes)
def test_amplitude_projection_imposes_modulus(phi, amp):
    eps = 1e-12
    out = recon.amplitude_projection(phi, amp, eps)
    live = np.abs(phi) > eps
    assert np.max(np.abs(np.abs(out) - amp), initial=0.0) < 1e-10 * max(1.0, amp.max())
    # phase kept wherever it is defined
    unit = phi[live] / np.abs(phi[live])
    assert np.all(np.abs(out[live] - amp[live] * unit) <= 1e-12 * amp[live] + 1e-300)


def test_amplitude_projection_guard_uses_zero_phase():
    out = recon.amplitude_projection(np.zeros((4, 4), complex), np.full((4, 4), 2.0), 1e-12)
    assert np.array_equal(out, np.full((4, 4), 2.0 + 0j))


# -- single updates ------------------------------------------------------------

def test_ground_truth_is_a_fixed_point():
    images, centers, b, X, P = synthetic(0, pupil_phase=1.5)
    state = recon.ReconState(X.copy(), P.copy(), scene.disk_mask(P.shape[0], b.d_pixel))
    amps = np.sqrt(images)
    for amp, c in zip(amps, centers):
        W = amp.shape[0]
        rs, cs = window_slices(X.shape, c, W)
        psi = X[rs, cs] * P
        psi_hat = fft2c(recon.amplitude_projection(ifft2c(psi), amp, 1e-12))
        assert np.linalg.norm(psi_hat - psi) < 1e-9
        recon.update_capture(state, amp, c)
    assert np.max(np.abs(state.O - X)) < 1e-9
    assert np.max(np.abs(state.P - P)) < 1e-9


def test_single_capture_update_algebra(rng):
    M, W = 64, 16
    b = budget_with(M, 10.0)
    support = scene.disk_mask(W, b.d_pixel)
    img = rng.uniform(0.1, 1.0, (W, W))
    O = rng.normal(size=(M, M)) + 1j * rng.normal(size=(M, M))
    state = recon.ReconState(O.copy(), support.astype(complex), support)
    center = (M // 2, M // 2)
    rs, cs = window_slices((M, M), center, W)
    phi = ifft2c(O[rs, cs] * support)
    expected = fft2c(np.sqrt(img) * phi / np.abs(phi))
    recon.update_capture(state, np.sqrt(img), center, update_pupil=False)
    win = state.O[rs, cs]
    # inside the disk the window takes the projected spectrum, outside it is untouched
    assert np.max(np.abs(win[support] - expected[support])) < 1e-12
    assert np.array_equal(win[~support], O[rs, cs][~support])
    outside = np.ones((M, M), bool)
    outside[rs, cs] = False
    assert np.array_equal(state.O[outside], O[outside])


def test_pupil_stays_zero_outside_support():
    images, centers, b, _, _ = synthetic(1, pupil_phase=1.0)
    res = recon.reconstruct(images, centers, b, 4, ReconConfig(max_iters=5, tol=0))
    support = scene.disk_mask(images.shape[1], b.d_pixel)
    assert np.all(res.pupil.data[~support] == 0)
    assert not np.array_equal(res.pupil.data, support.astype(complex))


def test_frozen_pupil_is_never_touched():
    images, centers, b, _, _ = synthetic(2)
    res = recon.reconstruct(images, centers, b, 4, ReconConfig(max_iters=4, tol=0, update_pupil=False))
    support = scene.disk_mask(images.shape[1], b.d_pixel)
    assert np.array_equal(res.pupil.data, support.astype(complex))


def test_pupil_warmup_delays_pupil_updates():
    images, centers, b, _, _ = synthetic(2)
    cfg = ReconConfig(max_iters=3, tol=0, pupil_warmup=3)
    res = recon.reconstruct(images, centers, b, 4, cfg)
    support = scene.disk_mask(images.shape[1], b.d_pixel)
    assert np.array_equal(res.pupil.data, support.astype(complex))
    more = recon.reconstruct(images, centers, b, 4, ReconConfig(max_iters=4, tol=0, pupil_warmup=3),
                             state=res.state)
    assert not np.array_equal(more.pupil.data, support.astype(complex))


# -- initialization --------------------------------------------------------------

def test_initial_estimate_reproduces_reference(ideal_set):
    from camfp import pipeline

    cal = pipeline.calibrate(ideal_set)
    aligned, centers, b = pipeline.correct(ideal_set, "full", cal)
    idx = aligned.indices
    ref = idx.index(aligned.ref_index)
    images = np.array([c.intensity for c in aligned.captures], float)
    ctr = [centers[k] for k in idx]
    state = recon.initialize_state(images, ctr, b, ref)
    W = images.shape[1]
    rs, cs = window_slices(state.O.shape, ctr[ref], W)
    est = np.abs(ifft2c(state.O[rs, cs] * state.P))
    truth = np.sqrt(images[ref])
    assert np.linalg.norm(est - truth) / np.linalg.norm(truth) < 0.05
    assert state.k == 0
    assert np.array_equal(state.P, scene.disk_mask(W, b.d_pixel).astype(complex))


def test_zero_reference_runs_guarded():
    images, centers, b, _, _ = synthetic(3)
    images = images.copy()
    images[4] = 0.0
    state = recon.initialize_state(images, centers, b, 4)
    assert not np.any(state.O)
    res = recon.reconstruct(images, centers, b, 4, ReconConfig(max_iters=3, tol=0))
    assert res.state.warnings
    assert np.all(np.isfinite(res.object.data))
    assert np.all(np.isfinite(res.history))


def test_init_rejects_bad_inputs():
    images, centers, b, _, _ = synthetic(0)
    with pytest.raises(ReconstructionError):
        recon.initialize_state(images, centers, b, ref=len(images))
    with pytest.raises(ReconstructionError):
        recon.initialize_state(images, centers[:-1], b, 0)
    with pytest.raises(ReconstructionError):
        recon.initialize_state(images, [(2, 2)] * len(images), b, 0)
    with pytest.raises(ReconstructionError):
        recon.reconstruct(np.zeros((0, 16, 16)), [], b)


# -- full runs ---------------------------------------------------------------------

def test_all_pass_single_capture_returns_its_amplitude(rng):
    M, W = 64, 16
    b = budget_with(M, 24.0)  # wider than W * sqrt(2): the disk passes the whole window
    img = rng.uniform(0.2, 1.0, (W, W))
    res = recon.reconstruct(img[None], [(M // 2, M // 2)], b, 0, ReconConfig(max_iters=5, tol=0))
    rs, cs = window_slices((M, M), (M // 2, M // 2), W)
    back = ifft2c(fft2c(res.object.data)[rs, cs])
    g = np.vdot(back, np.sqrt(img))
    assert np.max(np.abs(back * np.exp(1j * np.angle(g)) - np.sqrt(img))) < 1e-6


def test_history_layout_and_convergence_stop():
    images, centers, b, _, _ = synthetic(4)
    res = recon.reconstruct(images, centers, b, 4, ReconConfig(max_iters=6, tol=0))
    assert len(res.history) == 7 and res.state.k == 6
    early = recon.reconstruct(images, centers, b, 4, ReconConfig(max_iters=200, tol=0.5))
    assert early.state.k < 200


def test_converged_window():
    assert not recon.converged([1.0, 0.5, 0.25], 1e-3)
    assert recon.converged([1.0, 1.0, 1.0, 1.0], 1e-3)
    assert not recon.converged([1.0, 1.0, 1.0, 0.5], 1e-3)


def test_misfit_descends_on_clean_data():
    # joint object and pupil updates at about 70% overlap: the misfit falls
    # monotonically while it drops by four decades
    seeds = range(20)
    monotone = 0
    for seed in seeds:
        images, centers, b, _, _ = synthetic(seed, M=128, W=32, n=5, step=6, d=20.0)
        h = np.array(recon.reconstruct(images, centers, b, 12, ReconConfig(max_iters=8, tol=0)).history)
        monotone += bool(np.all(np.diff(h) <= 0))
        assert h[-1] < 1e-3 * h[0]
    assert monotone >= 0.95 * len(seeds)


def test_misfit_monotone_with_frozen_pupil():
    for seed in range(5):
        images, centers, b, _, _ = synthetic(seed)
        cfg = ReconConfig(max_iters=30, tol=0, update_pupil=False)
        h = np.array(recon.reconstruct(images, centers, b, 4, cfg).history)
        assert np.all(np.diff(h) <= 0)
