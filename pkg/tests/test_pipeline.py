import dataclasses

import numpy as np
import pytest

from camfp import calib, pipeline, scene
from camfp.config import ConfigError, ExperimentConfig, load_config
from camfp.recon import ReconConfig

from conftest import scan_plan, desk_rig


@pytest.fixture(scope="module")
def small_ideal_set():
    """5x5 scan on a 128 px grid without pose error."""
    obj = scene.resolution_target(128)
    b = scene.PupilSpec().budget(128)
    step = 5 / b.ratio1
    plan = scene.ScanPlan(5, 5, step, 0.0, 0.0, rng_seed=7)
    rig = scene.Rig(capture_size=32, image_pitch=step / 30)
    return scene.simulate_dataset(obj, scene.PupilSpec(), plan, rig)


# -- calibration ---------------------------------------------------------------

def test_calibrate_matches_truth_exactly(perturbed_set):
    cal = pipeline.calibrate(perturbed_set)
    errs = pipeline.extraction_errors(cal.offsets, pipeline.true_offsets(perturbed_set))
    assert len(errs) == 225
    assert errs.max() < 1e-6
    assert cal.offsets[perturbed_set.ref_index] == (0.0, 0.0)
    K = perturbed_set.truth["intrinsics"]
    assert cal.intrinsics.fx == pytest.approx(K.fx, rel=1e-6)
    assert cal.ratio2 == pytest.approx(perturbed_set.truth["image_pitch"], rel=1e-9)


def test_calibrate_without_views_reads_origin_off_homography(small_perturbed_set):
    full = pipeline.calibrate(small_perturbed_set)
    bare = pipeline.calibrate(dataclasses.replace(small_perturbed_set, calib_views=[]))
    assert bare.intrinsics is None and not bare.poses
    for k in full.offsets:
        assert np.allclose(bare.offsets[k], full.offsets[k], atol=1e-6)


def test_calibrate_recovers_poses(small_perturbed_set):
    cal = pipeline.calibrate(small_perturbed_set)
    for c in small_perturbed_set.captures:
        p = cal.poses[c.index]
        assert np.abs(p.R.T @ p.R - np.eye(3)).max() < 1e-12
        assert np.allclose(p.R, c.true_pose.pose.R, atol=1e-6)
        assert np.allclose(p.T, c.true_pose.pose.T, rtol=1e-6)


def test_calibrate_needs_correspondences(small_ideal_set):
    caps = list(small_ideal_set.captures)
    caps[3] = dataclasses.replace(caps[3], correspondences=None)
    with pytest.raises(pipeline.PipelineError, match="correspondences"):
        pipeline.calibrate(dataclasses.replace(small_ideal_set, captures=caps))


def test_calibrate_needs_reference(small_ideal_set):
    caps = [c for c in small_ideal_set.captures if c.index != small_ideal_set.ref_index]
    with pytest.raises(pipeline.PipelineError, match="reference"):
        pipeline.calibrate(dataclasses.replace(small_ideal_set, captures=caps))


def test_true_offsets_need_truth(small_ideal_set):
    caps = [dataclasses.replace(c, true_pose=None) for c in small_ideal_set.captures]
    with pytest.raises(pipeline.PipelineError):
        pipeline.true_offsets(dataclasses.replace(small_ideal_set, captures=caps))


def test_noise_free_offsets_are_nominal_drift(small_ideal_set):
    cal = pipeline.calibrate(small_ideal_set)
    r0, c0 = small_ideal_set.ref_index
    for (r, c), (du, dv) in cal.offsets.items():
        assert abs(abs(du) - 30 * abs(c - c0)) < 1e-6
        assert abs(abs(dv) - 30 * abs(r - r0)) < 1e-6


# -- centers ----------------------------------------------------------------------

def test_nominal_and_calibrated_centers_agree_without_error(small_ideal_set):
    cal = pipeline.calibrate(small_ideal_set)
    b = small_ideal_set.budget().with_ratio2(cal.ratio2)
    assert pipeline.nominal_centers(small_ideal_set, b) == pipeline.calibrated_centers(cal.offsets, b)
    assert pipeline.nominal_centers(small_ideal_set, b)[small_ideal_set.ref_index] == (64, 64)


# -- modes --------------------------------------------------------------------------

def test_unknown_mode_is_rejected(small_ideal_set):
    with pytest.raises(pipeline.PipelineError, match="unknown correction mode"):
        pipeline.run_mode(small_ideal_set, "both")


def test_modes_agree_without_pose_error(small_ideal_set):
    cal = pipeline.calibrate(small_ideal_set)
    truth = small_ideal_set.truth["object"].data
    cfg = ReconConfig(max_iters=20, tol=0)
    rmse = [pipeline.amplitude_rmse(pipeline.run_mode(small_ideal_set, m, cfg, cal).object, truth)
            for m in pipeline.MODES]
    assert max(rmse) <= 1.02 * min(rmse)


def test_run_mode_prunes_and_reports(small_ideal_set):
    res = pipeline.run_mode(small_ideal_set, "full", ReconConfig(max_iters=2, tol=0), prune=True)
    assert res.n_pruned == 25 - len(res.indices)
    assert small_ideal_set.ref_index in res.indices


def test_aligned_input_is_not_warped_twice(small_perturbed_set):
    from camfp import align

    cal = pipeline.calibrate(small_perturbed_set)
    aligned = align.align_dataset(small_perturbed_set, cal.homographies, region=small_perturbed_set.roi)
    again, _, _ = pipeline.correct(aligned, "homography_only", cal)
    assert again is aligned


# -- metrics -------------------------------------------------------------------------

def test_metrics_ignore_global_phase(rng):
    truth = rng.uniform(0.5, 1, (32, 32)) * np.exp(1j * rng.uniform(-1, 1, (32, 32)))
    est = truth * np.exp(0.7j)
    assert pipeline.amplitude_rmse(est, truth) == pytest.approx(0, abs=1e-12)
    assert pipeline.phase_rmse(est, truth) == pytest.approx(0, abs=1e-12)
    assert pipeline.psnr(est, truth) > 200
    assert pipeline.psnr(truth, truth) == float("inf")


def test_metrics_on_crop_only():
    truth = np.ones((16, 16), complex)
    est = truth.copy()
    est[0, :] = 5
    assert pipeline.amplitude_rmse(est, truth) == 0
    est[8, 8] = 2
    assert pipeline.amplitude_rmse(est, truth) == pytest.approx(np.sqrt(1 / 144))
    assert pipeline.psnr(est, truth) == pytest.approx(20 * np.log10(12))


def test_pupil_correlation_removes_piston(rng):
    support = scene.disk_mask(32, 20)
    phase = scene.aberration_screen(32, 20, 1.0, 3)
    truth = support * np.exp(1j * phase)
    est = support * np.exp(1j * (phase + 2.0)) * 0.5
    assert pipeline.pupil_phase_correlation(est, truth, support) == pytest.approx(1.0, abs=1e-9)
    flat = support.astype(complex)
    assert pipeline.pupil_phase_correlation(flat, truth, support) == pytest.approx(0.0, abs=1e-9)
    noise = support * np.exp(1j * rng.normal(size=(32, 32)))
    assert abs(pipeline.pupil_phase_correlation(noise, truth, support)) < 0.3


# -- configuration ----------------------------------------------------------------------

def test_default_config_is_valid():
    cfg = load_config()
    assert cfg.mode == "full" and cfg.scan.rows == 15
    plan = cfg.scan_plan()
    assert plan.nominal_step == pytest.approx(scan_plan().nominal_step)
    assert cfg.rig_spec().image_pitch == pytest.approx(desk_rig().image_pitch)


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "exp.ini"
    p.write_text("[scan]\nrows = 5\ncols = 7  ; inline note\n\n[recon]\nbeta = 0.5\nupdate_pupil = no\n"
                 "\n[run]\nmode = location_only\nseed = 3\n", encoding="utf-8")
    cfg = load_config(p, seed=9)
    assert (cfg.scan.rows, cfg.scan.cols) == (5, 7)
    assert cfg.mode == "location_only" and cfg.seed == 9
    rc = cfg.recon_config()
    assert rc.beta == 0.5 and rc.update_pupil is False and rc.seed == 9


def test_config_round_trips_through_file(tmp_path):
    cfg = load_config(mode="homography_only", seed=4)
    cfg.pupil.aberration_strength = 0.75
    cfg.write(tmp_path / "c.ini")
    back = load_config(tmp_path / "c.ini")
    assert back.mode == "homography_only" and back.seed == 4
    assert back.pupil == cfg.pupil and back.scan == cfg.scan and back.recon == cfg.recon


@pytest.mark.parametrize("text, match", [
    ("[run]\nmode = sideways\n", "mode"),
    ("[scan]\nrows = many\n", "rows"),
    ("[scan]\nwidth = 3\n", "unknown key"),
    ("[lens]\nf = 1\n", "unknown section"),
    ("[scan]\ntwist_px = -1\n", "nonnegative"),
    ("[recon]\nalpha = 3\n", "recon"),
    ("[scene]\nsource = files\namplitude = a.npy\nphase = b.npy\n", "not found"),
])
def test_config_errors(tmp_path, text, match):
    p = tmp_path / "bad.ini"
    p.write_text(text, encoding="utf-8")
    with pytest.raises(ConfigError, match=match):
        load_config(p)


def test_missing_config_file(tmp_path):
    with pytest.raises(ConfigError, match="not found"):
        load_config(tmp_path / "nope.ini")


def test_scene_from_image_files(tmp_path, rng):
    amp = rng.uniform(0, 1, (32, 32))
    np.save(tmp_path / "a.npy", amp)
    np.save(tmp_path / "p.npy", rng.uniform(0, 1, (32, 32)))
    p = tmp_path / "s.ini"
    p.write_text("[scene]\nsource = files\namplitude = a.npy\nphase = p.npy\nsize = 32\n", encoding="utf-8")
    obj = load_config(p).object_scene()
    assert obj.size == 32
    assert np.allclose(np.abs(obj.field.data), amp / amp.max())
    p.write_text("[scene]\nsource = files\namplitude = a.npy\nphase = p.npy\nsize = 64\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="size"):
        load_config(p).object_scene()


def test_aberration_comes_from_config():
    cfg = ExperimentConfig()
    assert cfg.pupil_spec().aberration is None
    cfg.pupil.aberration_strength = 1.0
    ab = cfg.pupil_spec().aberration
    assert ab.shape == (64, 64)
    d = cfg.pupil_spec().budget(256).d_pixel
    ph = np.angle(ab)[scene.disk_mask(64, d)]
    assert np.ptp(ph) == pytest.approx(2.0, rel=1e-6)


def test_calib_helpers_are_consistent():
    # world-origin projection is the dehomogenized third column of the board homography
    K = calib.CameraIntrinsics(800.0, 810.0, 320.0, 240.0)
    pose = calib.ExtrinsicPose(np.eye(3), np.array([0.01, -0.02, 0.3]))
    H = calib.board_homography(K, pose)
    u, v = calib.project_world_origin(K, pose)
    assert (u, v) == pytest.approx((H[0, 2] / H[2, 2], H[1, 2] / H[2, 2]))
