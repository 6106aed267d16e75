import numpy as np
import pytest
import torch

from hiddenemo.encoders import SpatialEncoderConfig, TemporalEncoderConfig, TextEncoderConfig
from hiddenemo.features import SamplingConfig
from hiddenemo.model import TrimodalConfig
from hiddenemo.synthgen import SynthConfig, generate_dataset

TINY_VISUAL_WIDTH = 16


def tiny_config(kind="mlp", use_offsets=True, text_mode="tokens") -> TrimodalConfig:
    temporal = TemporalEncoderConfig(model_dim=8, layer_count=1, head_count=2, feedforward_dim=16,
                                     max_sequence_length=64, dropout_rate=0.0)
    return TrimodalConfig(
        spatial=SpatialEncoderConfig(kind=kind, hidden_dim=4, frame_embedding_dim=8),
        keypoint_temporal=temporal,
        visual_temporal=temporal,
        text=TextEncoderConfig(vocabulary_size=32, token_embedding_dim=8, head_count=2, feedforward_dim=16,
                               max_tokens=32, dropout_rate=0.0),
        sampling=SamplingConfig(keypoint_frames=12, visual_frames=10, use_offsets=use_offsets),
        visual_width=TINY_VISUAL_WIDTH,
        text_mode=text_mode,
        text_embedding_width=12,
        branch_dim=6,
    )


def tiny_synth(**kw) -> SynthConfig:
    base = dict(sample_count=16, frames_min=120, frames_max=160, event_count=3, visual_width=TINY_VISUAL_WIDTH,
                vocab_size=16, text_length=10, seed=5)
    base.update(kw)
    return SynthConfig(**base)


@pytest.fixture(scope="session")
def tiny_dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("tiny")
    manifest, samples = generate_dataset(tiny_synth(), out)
    return manifest, samples, out


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _restore_torch_dtype():
    yield
    torch.set_default_dtype(torch.float32)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
