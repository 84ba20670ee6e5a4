import json

import numpy as np
import pytest
import torch

from undive.checkpoint import ModelCheckpoint
from undive.cli import main
from undive.data import make_synthetic_video, save_video
from undive.diffusion import PriorSettings, UNetConfig, train_prior
from undive.enhancer import enhancer_checkpoint
from undive.imgcore import frame_name, list_frames, load_frame, save_depth, save_frame
from undive.video import enhance_video


def write_clip(root, n=3, size=16, seed=0):
    rng = np.random.default_rng(seed)
    (root / "frames").mkdir(parents=True)
    (root / "depth").mkdir()
    frames = []
    for i in range(1, n + 1):
        f = rng.random((size, size, 3))
        save_frame(f, root / "frames" / frame_name(i))
        save_depth(np.full((size, size), 2.0), root / "depth" / frame_name(i, ".udpm"))
        frames.append(load_frame(root / "frames" / frame_name(i)))
    return frames


def identity_model(model):
    with torch.no_grad():
        model.proj2.weight.zero_()
        model.proj2.bias.fill_(float(np.log(np.e - 1)))
    model.cfg.epsilon_stability = 1e-12
    return model


def test_enhance_video_mirrors_names_and_writes_manifest(tmp_path, tiny_enhancer):
    frames = write_clip(tmp_path)
    ck = enhancer_checkpoint(tiny_enhancer, "spatial", {})
    man = enhance_video(tmp_path / "frames", tmp_path / "out", ck, tmp_path / "depth", backscatter=False,
                        model=identity_model(tiny_enhancer))
    outs = list_frames(tmp_path / "out")
    assert [p.name for p in outs] == [frame_name(i) for i in (1, 2, 3)]
    assert man["frame_count"] == 3 and man["checkpoint_sha256"] == ck.digest()
    assert json.loads((tmp_path / "out" / "manifest.json").read_text())["frame_count"] == 3
    for f, p in zip(frames, outs):
        assert np.abs(load_frame(p) - f).max() <= 1 / 255


def test_enhance_video_errors(tmp_path, tiny_enhancer):
    ck = enhancer_checkpoint(tiny_enhancer, "spatial", {})
    (tmp_path / "empty").mkdir()
    with pytest.raises(ValueError):
        enhance_video(tmp_path / "empty", tmp_path / "o", ck, tmp_path / "empty")
    write_clip(tmp_path / "clip")
    (tmp_path / "clip" / "depth" / frame_name(2, ".udpm")).unlink()
    with pytest.raises(FileNotFoundError):
        enhance_video(tmp_path / "clip" / "frames", tmp_path / "o", ck, tmp_path / "clip" / "depth")


def test_video_shared_backscatter_mode(tmp_path, tiny_enhancer):
    # a static clip: one shared fit must agree with per-frame fits
    vid = make_synthetic_video(3, size=32, offset=(0, 0), seed=3)
    save_video(vid, tmp_path)
    ck = enhancer_checkpoint(tiny_enhancer, "spatial", {})
    per = enhance_video(tmp_path / "frames", tmp_path / "per", ck, tmp_path / "depth", model=tiny_enhancer)
    man = enhance_video(tmp_path / "frames", tmp_path / "vid", ck, tmp_path / "depth", backscatter="video",
                        model=tiny_enhancer)
    assert per["backscatter_removal"] == "frame" and man["backscatter_removal"] == "video"
    for a, b in zip(list_frames(tmp_path / "per"), list_frames(tmp_path / "vid")):
        assert np.abs(load_frame(a) - load_frame(b)).max() <= 2 / 255
    with pytest.raises(ValueError):
        enhance_video(tmp_path / "frames", tmp_path / "x", ck, tmp_path / "depth", backscatter="sometimes")


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["bogus"]) == 2
    assert main(["evaluate", "--frames", str(tmp_path / "missing")]) == 2
    (tmp_path / "x.udck").write_bytes(b"garbage")
    assert main(["enhance", "--ckpt", str(tmp_path / "x.udck"), "--frames", str(tmp_path),
                 "--depth", str(tmp_path), "--out", str(tmp_path / "o")]) == 2
    assert main(["train-spatial", "--prior", str(tmp_path / "x.udck"), "--data", str(tmp_path),
                 "--out", str(tmp_path / "s.udck"), "--set", "loss.nope=1"]) == 2


def test_cli_pipeline(tmp_path, capsys):
    tiny = ["--desk", "--set", "unet.base_channels=4", "--set", "unet.depth=2", "--set", "unet.time_embed_dim=8",
            "--set", "enhancer.guide_channels=4", "--set", "enhancer.fusion_channels=8"]
    assert main(["degrade", "--out", str(tmp_path / "pairs"), "-n", "4", "--size", "16", *tiny]) == 0
    assert main(["degrade", "--out", str(tmp_path / "vids"), "--kind", "videos", "-n", "1", "--size", "16",
                 "--frames", "4", "--dx", "1", *tiny]) == 0
    assert main(["select-crops", "--corpus", str(tmp_path / "pairs" / "gt"), "--crop", "8", "--fraction", "0.5",
                 "--out", str(tmp_path / "crops")]) == 0
    assert len(list_frames(tmp_path / "crops")) == 16
    assert main(["train-prior", "--corpus", str(tmp_path / "pairs" / "gt"), "--out", str(tmp_path / "p.udck"),
                 *tiny, "--set", "prior.epochs=1", "--set", "prior.crop=8"]) == 0
    assert main(["train-spatial", "--prior", str(tmp_path / "p.udck"), "--data", str(tmp_path / "pairs"),
                 "--out", str(tmp_path / "s.udck"), *tiny, "--set", "spatial.epochs=1"]) == 0
    assert main(["train-temporal", "--spatial", str(tmp_path / "s.udck"), "--data", str(tmp_path / "vids"),
                 "--out", str(tmp_path / "t.udck"), *tiny, "--set", "temporal.epochs=1"]) == 0
    assert ModelCheckpoint.load(tmp_path / "t.udck").stage == "temporal"
    # wrong phase order is a validation error
    assert main(["train-temporal", "--spatial", str(tmp_path / "p.udck"), "--data", str(tmp_path / "vids"),
                 "--out", str(tmp_path / "bad.udck"), *tiny]) == 2
    vid = tmp_path / "vids" / "video_0001"
    assert main(["enhance", "--ckpt", str(tmp_path / "t.udck"), "--frames", str(vid / "frames"),
                 "--depth", str(vid / "depth"), "--out", str(tmp_path / "enh")]) == 0
    assert len(list_frames(tmp_path / "enh")) == 4
    capsys.readouterr()
    assert main(["evaluate", "--frames", str(tmp_path / "enh"), "--csv", str(tmp_path / "r.csv")]) == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5 and "summary" in json.loads(lines[-1])
    assert main(["evaluate", "--frames", str(tmp_path / "enh"), "--metrics", "uiqm,nope"]) == 2
