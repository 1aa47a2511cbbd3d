import json

import numpy as np
import pytest

import eanet


def test_config_roundtrip():
    cfg = eanet.default_config()
    assert cfg["train"]["batch_size"] == 32
    assert eanet.validate_config(cfg) == cfg
    with pytest.raises(eanet.ConfigError, match="train.epocs"):
        eanet.validate_config({"train": {"epocs": 1}})


def test_hand_model_identity():
    verts, joints = eanet.pose_hand(np.zeros(48), np.zeros(10), "right")
    assert verts.shape == (64, 3)
    assert joints.shape == (21, 3)
    assert np.all(joints[0] == 0.0)
    left, _ = eanet.pose_hand(np.zeros(48), np.zeros(10), "left")
    np.testing.assert_allclose(left[:, 0], -verts[:, 0], atol=1e-12)
    faces = eanet.template_faces()
    assert max(max(f) for f in faces) < 64


def test_metrics():
    _, gt = eanet.pose_hand(np.zeros(48), np.zeros(10))
    assert eanet.mpjpe(gt, gt) == 0.0
    assert abs(eanet.mpjpe(2.0 * gt, gt)) < 1e-12
    assert eanet.mrrpe(np.array([0.003, 0.004, 0.0]), np.zeros(3)) == pytest.approx(5.0)
    theta = np.random.default_rng(0).uniform(-0.3, 0.3, 48)
    mirrored = theta.copy()
    mirrored[1::3] *= -1
    mirrored[2::3] *= -1
    assert eanet.pose_difference(theta, np.zeros(10), mirrored, np.zeros(10)) < 1e-9


def test_generate_and_forward():
    samples = eanet.generate(3, 4)
    assert len(samples) == 4
    s = samples[0]
    assert s["image"].shape == (64, 64, 3)
    assert s["image"].min() >= 0.0 and s["image"].max() <= 1.0
    model = eanet.Model(seed=1)
    assert model.parameter_count > 0
    out = model.forward(s["image"])
    assert out["left"]["theta"].shape == (48,)
    assert out["right"]["beta"].shape == (10,)
    assert out["right"]["vertices"].shape == (64, 3)
    assert out["rel_translation"].shape == (3,)
    again = model.forward(s["image"])
    assert np.array_equal(again["left"]["vertices"], out["left"]["vertices"])


def test_gradcheck_rows_pass():
    rows = eanet.gradcheck()
    assert rows and all(ok for _, _, ok in rows)


def test_pipeline(tmp_path):
    cfg = eanet.default_config()
    cfg["data"].update(train_count=8, val_count=4)
    cfg["train"].update(epochs=1, batch_size=4)
    names = eanet.generate_datasets(cfg, tmp_path / "data")
    assert "train.eads" in names and "val.eads" in names
    assert len(eanet.read_dataset(tmp_path / "data" / "val.eads")) == 4
    result = eanet.train(cfg, tmp_path / "data", tmp_path / "train")
    assert result["steps"] == 2
    assert np.isfinite(result["final_loss"])
    report = eanet.evaluate(tmp_path / "train" / "final.ckpt", tmp_path / "data" / "val.eads", tmp_path / "eval")
    assert report["n_single"] + report["n_two"] == 4
    assert report["mpjpe_all"] > 0.0
    restored = eanet.Model.load(tmp_path / "train" / "final.ckpt")
    assert restored.config["block"] == "fuseformer"
    with pytest.raises(OSError):
        eanet.evaluate(tmp_path / "missing.ckpt", tmp_path / "data" / "val.eads", tmp_path / "x")
