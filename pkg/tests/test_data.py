import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from undive.data import (
    FixedWater,
    WaterRanges,
    load_pairs,
    load_video_pairs,
    make_synthetic_dataset,
    make_synthetic_pairs,
    make_synthetic_video,
    random_depth,
    save_pairs,
    save_video,
    select_training_crops,
    synthetic_scene,
    true_backscatter,
    uniformity_score,
)
from undive.flow import warp
from undive.imgcore import frame_name, save_frame
from undive.metrics import psnr
from undive.physics import WaterParams


def test_uniformity_extremes():
    assert uniformity_score(np.full((32, 32, 3), 0.4)) == pytest.approx(-2 * (1 - 1 / 32))
    ramp = ((np.arange(32 * 32) + 0.5) / (32 * 32)).reshape(32, 32)[..., None] * np.ones(3)
    assert uniformity_score(ramp) == pytest.approx(0.0, abs=1e-12)


def test_selection_prefers_uniform_crops():
    rng = np.random.default_rng(0)
    frames = [synthetic_scene(rng, 48, 48) for _ in range(6)] + [np.full((48, 48, 3), 0.3)] * 3
    kept, scores = select_training_crops(frames, 16, 0.5, per_frame=6, seed=1)
    _, all_scores = select_training_crops(frames, 16, 1.0, per_frame=6, seed=1)
    assert len(kept) == len(all_scores) // 2
    rejected = all_scores[len(kept):]
    assert scores.mean() >= rejected.mean()
    assert np.all(np.diff(scores) <= 0)


def test_selection_errors(tmp_path):
    with pytest.raises(ValueError):
        select_training_crops([np.zeros((8, 8, 3))], 16, 0.5)
    with pytest.raises(ValueError):
        select_training_crops([np.zeros((32, 32, 3))], 16, 0.0)
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError):
        select_training_crops(tmp_path / "empty", 16, 0.5)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 1000), st.sampled_from(["smooth", "ramp"]))
def test_depth_fields_are_positive_and_bounded(seed, mode):
    z = random_depth(np.random.default_rng(seed), 16, 20, mode)
    assert z.shape == (16, 20) and z.min() == pytest.approx(1.0) and z.max() == pytest.approx(5.0)


def test_degraded_pairs_are_below_cap():
    for p in make_synthetic_pairs(5, 32, seed=0):
        assert psnr(p.degraded, p.gt) < 99.0
        assert p.degraded.shape == p.gt.shape and p.depth.shape == p.gt.shape[:2]


def test_fixed_water():
    w = WaterParams((0.3, 0.2, 0.1), (0.5, 0.6, 0.7), (0.1, 0.2, 0.3))
    pairs = make_synthetic_pairs(3, 16, ranges=FixedWater(w), seed=0)
    assert all(p.water is w for p in pairs)


def test_video_zero_translation_has_zero_flow():
    v = make_synthetic_video(3, 16, offset=(0, 0), seed=0)
    assert all(np.all(u == 0) for u in v.flows_back + v.flows_fwd)
    assert np.array_equal(v.gt[0], v.gt[1])


@pytest.mark.parametrize("offset", [(3, 0), (0, -2), (-1, 2)])
def test_video_translation_flow_is_exact(offset):
    v = make_synthetic_video(3, 16, offset=offset, seed=1)
    for i in range(2):
        assert np.all(v.flows_back[i][..., 0] == offset[0]) and np.all(v.flows_back[i][..., 1] == offset[1])
        out, valid = warp(v.gt[i], v.flows_back[i])
        assert np.array_equal(out[valid], v.gt[i + 1][valid])
        out, valid = warp(v.gt[i + 1], v.flows_fwd[i])
        assert np.array_equal(out[valid], v.gt[i][valid])


def test_pairs_are_non_overlapping():
    v = make_synthetic_video(6, 16, seed=2)
    pairs = v.pairs()
    assert len(pairs) == 3
    assert np.array_equal(pairs[1].x_t, v.frames[2])
    first = pairs[0].first()
    assert np.array_equal(first.clean_input, pairs[0].clean_t)


def test_dataset_from_clean_dir(tmp_path):
    rng = np.random.default_rng(0)
    for i in range(2):
        save_frame(synthetic_scene(rng, 40, 40), tmp_path / frame_name(i + 1))
    pairs = make_synthetic_dataset(tmp_path, WaterRanges(), "ramp", n=3, size=16, seed=0)
    vids = make_synthetic_dataset(tmp_path, None, "smooth", n=2, size=16, seed=0, kind="videos", n_frames=4)
    assert len(pairs) == 3 and len(vids) == 2 and len(vids[0].frames) == 4
    with pytest.raises(ValueError):
        make_synthetic_dataset(None, kind="other")


def test_pair_and_video_layouts_roundtrip(tmp_path):
    pairs = make_synthetic_pairs(3, 16, seed=0)
    save_pairs(pairs, tmp_path / "p")
    back = load_pairs(tmp_path / "p")
    assert len(back) == 3 and np.abs(back[0].gt - pairs[0].gt).max() <= 1 / 255
    assert np.allclose(back[0].depth, pairs[0].depth, atol=1e-5)
    v = make_synthetic_video(4, 16, seed=0)
    save_video(v, tmp_path / "v")
    fp = load_video_pairs(tmp_path / "v")
    assert len(fp) == 2 and np.array_equal(fp[0].u_back, v.flows_back[0])
    assert np.array_equal(fp[1].u_fwd, v.flows_fwd[2])


def test_true_backscatter_matches_model():
    p = make_synthetic_pairs(1, 16, seed=0)[0]
    assert true_backscatter(p).shape == p.gt.shape
