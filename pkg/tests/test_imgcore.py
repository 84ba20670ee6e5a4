import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays
from skimage import color

from undive.imgcore import (
    FormatError,
    ShapeError,
    as_frame,
    downsample2,
    frame_name,
    from_tensor,
    hsv_to_rgb,
    lab_to_rgb,
    list_frames,
    load_depth,
    load_frame,
    rgb_to_hsv,
    rgb_to_lab,
    save_depth,
    save_frame,
    to_tensor,
)

unit_frames = arrays(np.float64, st.tuples(st.integers(8, 12), st.integers(8, 12), st.just(3)),
                     elements=st.floats(0, 1, allow_nan=False))


def test_as_frame_rejects_bad_input():
    with pytest.raises(ShapeError):
        as_frame(np.zeros((8, 8)))
    with pytest.raises(ValueError):
        as_frame(np.full((8, 8, 3), np.nan))


def test_load_8bit_extremes(tmp_path):
    f = np.zeros((8, 8, 3))
    f[0, 0] = 1.0
    save_frame(f, tmp_path / "a.png")
    g = load_frame(tmp_path / "a.png")
    assert g[0, 0, 0] == 1.0 and g[1, 1, 1] == 0.0


def test_load_16bit_scaling(tmp_path):
    import cv2

    raw = np.full((8, 8, 3), 32768, np.uint16)
    cv2.imwrite(str(tmp_path / "b.png"), raw)
    assert load_frame(tmp_path / "b.png")[0, 0, 0] == pytest.approx(32768 / 65535, abs=1e-12)


def test_load_frame_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_frame(tmp_path / "missing.png")
    (tmp_path / "junk.png").write_bytes(b"not an image")
    with pytest.raises(FormatError):
        load_frame(tmp_path / "junk.png")


@settings(max_examples=20, deadline=None)
@given(unit_frames)
def test_save_load_roundtrip_8bit(tmp_path_factory, f):
    p = tmp_path_factory.mktemp("rt") / "f.png"
    save_frame(f, p)
    assert np.abs(load_frame(p) - f).max() <= 1 / 255 + 1e-12


def test_constant_frames_roundtrip_exactly(tmp_path):
    for v in (0.0, 1.0):
        save_frame(np.full((8, 8, 3), v), tmp_path / "c.png")
        assert np.all(load_frame(tmp_path / "c.png") == v)


def test_save_16bit_is_finer(tmp_path, rng):
    f = rng.random((8, 8, 3))
    save_frame(f, tmp_path / "h.png", bit_depth=16)
    assert np.abs(load_frame(tmp_path / "h.png") - f).max() <= 1 / 65535


def test_depth_raw_roundtrip_bit_exact(tmp_path, rng):
    z = rng.uniform(0.5, 9.0, (10, 12))
    save_depth(z, tmp_path / "z.udpm")
    back = load_depth(tmp_path / "z.udpm")
    assert np.array_equal(back, z.astype(np.float32).astype(np.float64))


def test_depth_uniform(tmp_path):
    save_depth(np.ones((4, 4)), tmp_path / "one.udpm")
    assert np.all(load_depth(tmp_path / "one.udpm") == 1.0)


def test_depth_header_mismatch(tmp_path):
    blob = b"UDPM" + struct.pack("<HH", 4, 4) + np.zeros(15, "<f4").tobytes()
    (tmp_path / "bad.udpm").write_bytes(blob)
    with pytest.raises(FormatError):
        load_depth(tmp_path / "bad.udpm")


def test_depth_png16_with_sidecar(tmp_path, rng):
    z = rng.uniform(0.5, 5.0, (8, 8))
    save_depth(z, tmp_path / "z.png")
    assert np.abs(load_depth(tmp_path / "z.png") - z).max() < 1e-3


def test_lab_black_and_red_against_skimage():
    assert rgb_to_lab(np.zeros((8, 8, 3)))[..., 0].max() == pytest.approx(0.0, abs=1e-9)
    red = np.zeros((8, 8, 3))
    red[..., 0] = 1.0
    ours = rgb_to_lab(red)[0, 0]
    ref = color.rgb2lab(red)[0, 0]
    assert np.abs(ours - ref).max() < 0.5


@settings(max_examples=25, deadline=None)
@given(unit_frames)
def test_lab_matches_skimage(f):
    assert np.abs(rgb_to_lab(f) - color.rgb2lab(f)).max() < 1e-3


@settings(max_examples=25, deadline=None)
@given(unit_frames)
def test_color_roundtrips(f):
    assert np.abs(lab_to_rgb(rgb_to_lab(f)) - f).max() < 1e-3
    assert np.abs(hsv_to_rgb(rgb_to_hsv(f)) - f).max() < 1e-3


@given(st.floats(0, 1))
def test_gray_has_zero_saturation(g):
    assert np.all(rgb_to_hsv(np.full((8, 8, 3), g))[..., 1] == 0.0)


def test_hsv_matches_skimage(frame):
    assert np.abs(rgb_to_hsv(frame) - color.rgb2hsv(frame)).max() < 1e-9


def test_downsample2_examples():
    assert np.all(downsample2(np.full((8, 8, 3), 0.3)) == pytest.approx(0.3))
    block = np.zeros((2, 2, 3))
    block[1] = 1.0
    assert np.allclose(downsample2(np.tile(block, (4, 4, 1))), 0.5)
    checker = (np.indices((8, 8)).sum(0) % 2)[..., None].repeat(3, -1).astype(float)
    assert np.allclose(downsample2(checker), 0.5)
    with pytest.raises(ShapeError):
        downsample2(np.zeros((9, 8, 3)))


@given(unit_frames.filter(lambda a: a.shape[0] % 2 == 0 and a.shape[1] % 2 == 0), st.permutations([0, 1, 2]))
def test_downsample2_commutes_with_channel_permutation(f, perm):
    assert np.array_equal(downsample2(f[..., perm]), downsample2(f)[..., perm])


def test_frame_naming_and_listing(tmp_path):
    assert frame_name(1) == "frame_000001.png"
    for i in (3, 1, 2):
        save_frame(np.zeros((8, 8, 3)), tmp_path / frame_name(i))
    (tmp_path / "notes.txt").write_text("x")
    assert [p.name for p in list_frames(tmp_path)] == [frame_name(i) for i in (1, 2, 3)]


def test_tensor_roundtrip(frame):
    t = to_tensor(frame)
    assert tuple(t.shape) == (1, 3, 16, 16)
    assert np.allclose(from_tensor(t)[0], frame, atol=1e-7)


def test_conversions_are_pure(frame):
    assert np.array_equal(rgb_to_lab(frame), rgb_to_lab(frame.copy()))
