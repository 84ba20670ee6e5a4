import numpy as np
import pytest
import torch

from undive.checkpoint import ModelCheckpoint, param_hash
from undive.config import PhaseSettings
from undive.data import make_synthetic_pairs, make_synthetic_video
from undive.enhancer import EnhancerConfig, enhancer_checkpoint, enhancer_from_checkpoint
from undive.losses import LossWeights
from undive.training import epoch_means, train_spatial, train_temporal

CFG = EnhancerConfig(guide_channels=4, fusion_channels=8)
FAST = PhaseSettings(epochs=2, batch_size=2, lr=1e-3)


@pytest.fixture(scope="module")
def pairs():
    return make_synthetic_pairs(4, 16, seed=0)


@pytest.fixture(scope="module")
def frame_pairs():
    vids = [make_synthetic_video(4, 16, offset=(1, 0), seed=s) for s in range(2)]
    return [p for v in vids for p in v.pairs()]


@pytest.fixture
def spatial_ckpt(tiny_encoder, pairs):
    return train_spatial(pairs, FAST, tiny_encoder, cfg=CFG, seed=0)


def test_spatial_checkpoint_contents(spatial_ckpt):
    assert spatial_ckpt.stage == "spatial"
    log = spatial_ckpt.meta["log"]
    assert len(log) == 4 and [r["epoch"] for r in log] == [1, 1, 2, 2]
    assert set(log[0]) == {"step", "epoch", "l_r", "l_sm", "l_c", "total"}
    assert len(epoch_means(log)) == 2


def test_logged_total_is_weighted_sum(tiny_encoder, pairs):
    w = LossWeights(1.0, 0.2, 0.1)
    ck = train_spatial(pairs, FAST, tiny_encoder, w, CFG, seed=1)
    for r in ck.meta["log"]:
        assert abs(r["total"] - (w.lambda1 * r["l_r"] + w.lambda2 * r["l_sm"] + w.lambda3 * r["l_c"])) <= 1e-6


def test_empty_dataset_rejected(tiny_encoder):
    with pytest.raises(ValueError):
        train_spatial([], FAST, tiny_encoder, cfg=CFG)
    with pytest.raises(ValueError):
        train_spatial(make_synthetic_pairs(1, 16), FAST, None, cfg=CFG)


def test_encoder_untouched_by_spatial_training(tiny_encoder, spatial_ckpt):
    trained = enhancer_from_checkpoint(spatial_ckpt)
    assert param_hash(trained.encoder) == param_hash(tiny_encoder)


def test_spatial_training_is_deterministic(tiny_encoder, pairs, spatial_ckpt):
    again = train_spatial(pairs, FAST, tiny_encoder, cfg=CFG, seed=0)
    assert again.to_bytes() == spatial_ckpt.to_bytes()


def test_temporal_requires_spatial_stage(spatial_ckpt, frame_pairs):
    for stage in ("prior", "temporal"):
        with pytest.raises(ValueError):
            train_temporal(frame_pairs, FAST, ModelCheckpoint(stage, spatial_ckpt.params, spatial_ckpt.meta))


def test_temporal_logs_nonnegative_lt(spatial_ckpt, frame_pairs):
    ck = train_temporal(frame_pairs, FAST, spatial_ckpt, seed=0)
    assert ck.stage == "temporal" and ck.meta["spatial_digest"] == spatial_ckpt.digest()
    w = LossWeights()
    for r in ck.meta["log"]:
        assert r["l_t"] >= 0
        parts = w.lambda1 * r["l_r"] + w.lambda2 * r["l_sm"] + w.lambda3 * r["l_c"] + w.lambda_t * r["l_t"]
        assert abs(r["total"] - parts) <= 1e-6


def test_zero_lambda_t_matches_continued_spatial(spatial_ckpt, frame_pairs):
    w = LossWeights(lambda_t=0.0)
    temporal = train_temporal(frame_pairs, FAST, spatial_ckpt, w, seed=3)
    spatial = train_spatial([p.first() for p in frame_pairs], FAST, weights=w, seed=3, init=spatial_ckpt)
    for a, b in zip(temporal.meta["log"], spatial.meta["log"]):
        assert a["total"] == b["total"] and a["l_r"] == b["l_r"]
    assert all(np.array_equal(temporal.params[k], spatial.params[k]) for k in spatial.params)


def test_temporal_estimates_flow_when_missing(spatial_ckpt, frame_pairs):
    bare = [type(p)(p.x_t, p.x_tp1, p.depth_t, p.depth_tp1, None, None, p.gt_t, p.gt_tp1) for p in frame_pairs[:2]]
    ck = train_temporal(bare, PhaseSettings(1, 2, 1e-3), spatial_ckpt)
    assert len(ck.meta["log"]) == 1


def test_temporal_needs_ground_truth(spatial_ckpt, frame_pairs):
    p = frame_pairs[0]
    with pytest.raises(ValueError):
        train_temporal([type(p)(p.x_t, p.x_tp1, p.depth_t, p.depth_tp1)], FAST, spatial_ckpt)


def test_prior_digest_carried(tiny_encoder, pairs):
    ck = train_spatial(pairs, PhaseSettings(1, 4, 1e-3), tiny_encoder, cfg=CFG, prior_digest="abc")
    assert ck.meta["prior_digest"] == "abc"
    assert ModelCheckpoint.from_bytes(ck.to_bytes()).meta["prior_digest"] == "abc"
