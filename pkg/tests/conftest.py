import numpy as np
import pytest
import torch

from undive.diffusion import Encoder, EncoderHandle, UNetConfig
from undive.enhancer import EnhancerConfig, build_enhancer

CRITERIA_KEY = pytest.StashKey[list]()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def frame(rng):
    return rng.random((16, 16, 3))


@pytest.fixture
def tiny_encoder():
    torch.manual_seed(0)
    return EncoderHandle(Encoder(UNetConfig(base_channels=4, depth=2, time_embed_dim=8)))


@pytest.fixture
def tiny_enhancer(tiny_encoder):
    return build_enhancer(EnhancerConfig(guide_channels=4, fusion_channels=8), tiny_encoder, seed=0)


@pytest.fixture
def criterion(request):
    """``criterion(n, name, ok, detail)`` records one acceptance line and
    returns ``ok`` so the test can assert on it."""
    lines = request.config.stash.setdefault(CRITERIA_KEY, [])

    def record(n, name, ok, detail=""):
        lines.append((n, f"criterion {n:2d} {'PASS' if ok else 'FAIL'}  {name}: {detail}"))
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(CRITERIA_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
