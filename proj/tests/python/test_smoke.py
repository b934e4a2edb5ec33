import math

import numpy as np
import pytest

import cohft


def test_structural_identities():
    rng = np.random.default_rng(0)
    x = rng.uniform(-1, 1, (6, 6, 3))
    for p in (1, 2, 3):
        assert np.array_equal(cohft.fold(cohft.unfold(x, p), p, 6, 6), x)
    y = rng.uniform(-1, 1, (3, 4, 8))
    assert np.array_equal(cohft.pixel_unshuffle(cohft.pixel_shuffle(y, 2), 2), y)
    assert cohft.pixel_shuffle(y, 2).shape == (6, 8, 2)
    assert np.all(cohft.gradient_map(np.full((5, 5, 1), 0.4)) == 1e-3)
    img = rng.uniform(0, 1, (16, 16, 1))
    assert cohft.ssim(img, img) == 1.0
    assert cohft.psnr(img, img) == math.inf
    assert cohft.psnr(np.zeros((4, 4, 1)), np.full((4, 4, 1), 0.1)) == pytest.approx(20)


def test_softmax_rows():
    s = cohft.softmax(np.random.default_rng(1).normal(size=(5, 7)))
    assert np.allclose(s.sum(axis=-1), 1, atol=1e-12)


def test_windows_are_bijective():
    for mode in (cohft.WindowMode.Short, cohft.WindowMode.Long):
        pixels = cohft.window_pixels(12, 6, 3, mode)
        assert sorted(pixels) == list(range(72))
        x = np.arange(72.0).reshape(12, 6, 1)
        assert np.array_equal(cohft.merge(cohft.partition(x, 3, mode), 12, 6, 3, mode), x)


def test_bicubic():
    c = np.full((6, 6, 1), 0.3)
    assert np.allclose(cohft.bicubic_upsample(c, 2), 0.3)
    assert np.allclose(cohft.bicubic_downsample(np.full((12, 12, 1), 0.3), 2), 0.3)


def test_pair_and_safe_start_prediction():
    pair = cohft.make_pair(seed=3, side=24, r=2)
    assert pair["t2_lr"].shape == (12, 12, 1)
    assert pair["t1_hr_grad"].shape == (24, 24, 1)
    cfg = cohft.ModelConfig("tiny")
    state = cohft.init_model(cfg, seed=1)
    assert state.parameter_count == cfg.parameter_count
    i_out, r_out = cohft.predict(state, cfg, pair["t2_lr"], pair["t1_hr_grad"])
    assert np.array_equal(i_out, cohft.bicubic_upsample(pair["t2_lr"], 2))
    assert np.all(r_out == 0)


def test_config_errors():
    cfg = cohft.ModelConfig("tiny")
    with pytest.raises(ValueError):
        cfg.preflight(10, 10)
    with pytest.raises(ValueError):
        cfg.set("no_such_key", "1")
    with pytest.raises(ValueError):
        cohft.ModelConfig("XL")


def test_loss_at_perfect_prediction():
    gt = cohft.make_pair(seed=0, side=24)["t2_hr"]
    total, intensity, gradient = cohft.loss(gt, cohft.gradient_map(gt), gt)
    assert total == pytest.approx(-0.05 * 1.5)
    assert intensity == pytest.approx(-0.05)


def test_commands(tmp_path):
    data, run = tmp_path / "data", tmp_path / "run"
    settings = {"samples": "2", "side": "24", "data": str(data), "checkpoint": str(run), "epochs": "1"}
    cohft.gen_data(settings, data)
    assert (data / "manifest.txt").read_text().split() == ["sample_0000", "sample_0001"]
    cohft.train(settings, run)
    assert (run / "loss.csv").read_text().splitlines()[0] == "step,total,loss_in,loss_c"
    rows = cohft.evaluate(settings, tmp_path / "eval")
    assert [r["sample_id"] for r in rows] == ["sample_0000", "sample_0001"]
    assert all(math.isfinite(r["psnr_db"]) for r in rows)
    state = cohft.ModelState.load(run / "model.chft")
    assert "out.intensity.w" in state


def test_check_suite_detects_faults():
    assert all(passed for _, _, passed, _ in cohft.run_checks())
    faulty = cohft.run_checks(fault_op="conv2d")
    assert any(not passed and name == "gradcheck conv2d" for _, name, passed, _ in faulty)
