import json

import numpy as np
import pytest

import progan

TINY_CONFIG = """\
seed = 2
channels = 8, 4
base_height = 4
latent_dim = 8
images_stable = 16
images_fade = 0, 16
batch_size = 8
n_critic = 1
log_every = 8
grid_every = 32
checkpoint_every = 32
"""


def test_ssim_identity_and_range():
    img, view = progan.phantom(32, 32, seed=1, index=0)
    assert img.shape == (32, 32)
    assert view == progan.View.CC
    assert progan.ssim(img, img) == 1.0
    other, _ = progan.phantom(32, 32, seed=1, index=2)
    assert -1.0 <= progan.ssim(img, other) < 1.0
    assert progan.ms_ssim(img, img, scales=1) == pytest.approx(1.0)


def test_phantom_views_alternate():
    _, v0 = progan.phantom(16, 16, index=0)
    _, v1 = progan.phantom(16, 16, index=1)
    assert (v0, v1) == (progan.View.CC, progan.View.MLO)


def test_pyramid_reconstructs():
    rng = np.random.default_rng(0)
    img = rng.random((32, 32), dtype=np.float32)
    levels = progan.laplacian_pyramid(img, 3)
    assert [lv.shape for lv in levels] == [(32, 32), (16, 16), (8, 8)]
    # Rebuild by nearest 2x upsampling of each coarser level.
    cur = levels[-1]
    for band in reversed(levels[:-1]):
        cur = np.kron(cur, np.ones((2, 2))) + band
    np.testing.assert_allclose(cur, img, atol=1e-6)


def test_sliced_wasserstein_shift():
    rng = np.random.default_rng(1)
    a = rng.standard_normal((200, 9)).astype(np.float32)
    assert progan.sliced_wasserstein(a, a, projections=16) == 0.0
    assert progan.sliced_wasserstein(a, a + 0.5, projections=16) > 0.0
    with pytest.raises(ValueError):
        progan.sliced_wasserstein(a[:, :8], a[:, :8])


def test_swd_and_diversity_reports():
    imgs = [progan.phantom(32, 32, seed=3, index=i)[0] for i in range(6)]
    rep = progan.swd(imgs, imgs, patches_per_image=16, projections=32)
    assert rep["swd_mean"] == 0.0
    assert rep["msssim_cross"] is None
    div = progan.msssim_diversity(imgs, imgs, identity=True)
    assert div["msssim_cross"] == pytest.approx(1.0)


def test_preprocess_shapes(tmp_path):
    img = np.linspace(0, 1, 40 * 30, dtype=np.float32).reshape(40, 30)
    out = progan.preprocess(img, 80, 64)
    assert out.shape == (80, 64)
    assert progan.center_fit(out, 64, 64).shape == (64, 64)
    progan.save_image(out, tmp_path / "x.pgm")
    np.testing.assert_allclose(progan.load_image(tmp_path / "x.pgm"), np.round(out * 255) / 255, atol=1e-6)


def test_train_and_sample(tmp_path):
    cfg = tmp_path / "run.cfg"
    cfg.write_text(TINY_CONFIG)
    pairs = [progan.phantom(8, 8, seed=5, index=i) for i in range(16)]
    trainer = progan.Trainer(cfg, [p[0] for p in pairs], [p[1] for p in pairs])
    trainer.run(tmp_path / "run")
    assert trainer.done()
    assert trainer.stage == 1 and trainer.alpha == 1.0
    assert len(trainer.diagnostics) > 0
    ckpts = progan.list_checkpoints(tmp_path / "run")
    assert ckpts[0].name == "ckpt_0"
    ck = progan.load_checkpoint(ckpts[-1])
    samples = ck.generate(3, seed=4, view=progan.View.MLO)
    assert samples.shape == (3, 8, 8)
    assert samples.min() >= 0.0 and samples.max() <= 1.0
    np.testing.assert_array_equal(samples, ck.generate(3, seed=4, view=progan.View.MLO))


def test_cli_entry(tmp_path):
    code, out, _ = progan.run_cli(["preprocess", "--phantoms", "4", "--fit-height", "16", "--fit-width", "16",
                                   "--out", str(tmp_path / "d")])
    assert code == 0
    (tmp_path / "d" / "manifest.csv").unlink()
    code, out, _ = progan.run_cli(["eval-swd", str(tmp_path / "d"), str(tmp_path / "d"), "--patches", "8",
                                   "--projections", "16", "--out", str(tmp_path / "r")])
    assert code == 0
    assert json.loads(out)["swd_mean"] == 0.0
    code, _, err = progan.run_cli(["train"])
    assert code == 2
    assert "--config" in err


def test_config_errors(tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text(TINY_CONFIG + "lambda = -1\n")
    with pytest.raises(ValueError):
        progan.Trainer(cfg, [np.zeros((8, 8), np.float32)], [progan.View.CC])
