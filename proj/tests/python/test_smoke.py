# SPDX-License-Identifier: Apache-2.0
import math

import numpy as np
import pytest

import lumbar_align as la


def unit_rows(rng, n, d):
    z = rng.normal(size=(n, d))
    return z / np.linalg.norm(z, axis=1, keepdims=True)


def test_soft_targets_rows_sum_to_one():
    t = la.soft_targets([[1, 0], [1, 0], [0, 1]], 0.07)
    assert t.shape == (3, 3)
    np.testing.assert_allclose(t.sum(axis=1), 1.0, atol=1e-12)
    assert t[0, 1] == pytest.approx(1.0 / (2.0 + math.exp(-1.0 / 0.07)), abs=1e-12)
    assert t[2, 2] == pytest.approx(1.0 / (1.0 + 2.0 * math.exp(-1.0 / 0.07)), abs=1e-12)


def test_loss_matches_numpy_reference():
    rng = np.random.default_rng(3)
    labels = [[1, 0], [0, 1], [1, 0], [1, 0], [0, 1]]
    zi, zt, za = (unit_rows(rng, 5, 4) for _ in range(3))
    tau, alpha = 0.3, 0.4
    y = np.array(labels, dtype=float)
    l = y @ y.T

    def softmax(m):
        e = np.exp(m - m.max(axis=1, keepdims=True))
        return e / e.sum(axis=1, keepdims=True)

    def ce(s, targets):
        return -(targets * np.log(softmax(s / tau))).sum() / s.shape[0]

    soft = softmax(l / tau)
    soft_t = softmax(l.T / tau)
    s, sa = zi @ zt.T, zi @ za.T
    expected = alpha * (ce(s, soft) + ce(s.T, soft_t)) + (1 - alpha) * (ce(sa, soft) + ce(sa.T, soft_t))
    out = la.soft_clip_loss(zi, zt, za, labels, alpha, tau)
    assert out["total"] == pytest.approx(expected, abs=1e-10)
    assert out["i2t"] == pytest.approx(ce(s, soft), abs=1e-10)


def test_metrics():
    r = la.metrics([0, 0, 1, 1], [0, 1, 1, 1])
    assert r["accuracy"] == pytest.approx(0.75)
    assert r["precision"] == pytest.approx(0.5)
    assert r["recall"] == pytest.approx(1.0)
    assert r["confusion"] == {"tp": 1, "fp": 1, "fn": 0, "tn": 2}


def test_config_errors():
    c = la.ExperimentConfig()
    c.set("train.tau", "0.5")
    assert float(c.get("train.tau")) == 0.5
    assert "proj.mode" in la.config_keys()
    with pytest.raises(la.InputError):
        c.set("no.such.key", "1")


def test_pipeline_end_to_end(tmp_path):
    manifest, n_lbp, n_nf = la.synth_data(tmp_path / "data", pairs=48, ratio=0.75, seed=3, resolution=16)
    assert n_lbp + n_nf == 48
    c = la.ExperimentConfig()
    c.apply_text(
        "\n".join(
            [
                f"manifest = {manifest}",
                "data.resolution = 16",
                "image.width = 4",
                "image.output_dim = 16",
                "text.embed_dim = 8",
                "text.output_dim = 16",
                "proj.dim = 8",
                "train.epochs = 2",
                "train.batch_size = 8",
                "probe.epochs = 5",
            ]
        )
    )
    run = la.pretrain(c, tmp_path / "run")
    assert len(run["epochs"]) == 2
    assert all(math.isfinite(e[1]) for e in run["epochs"])
    metrics = la.probe(c, run["checkpoint"], "test", tmp_path / "probe")
    assert 0.0 <= metrics["accuracy"] <= 1.0
    again = la.probe(c, run["checkpoint"], "test", tmp_path / "probe2")
    assert again == metrics
    assert "Pretraining" in la.report(tmp_path / "run")
