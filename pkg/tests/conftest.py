"""
Shared fixtures for the MatteBuddy test suite
"""

import os
import sys

import numpy as np
import pytest

ROOT = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from src.core.compositing import synth_sequence, write_clip
from src.core.config_manager import PipelineConfig


@pytest.fixture
def rng():
    """Seeded numpy generator for test inputs (not used by the engine itself)"""
    return np.random.default_rng(1234)


@pytest.fixture
def small_cfg():
    """Narrow configuration that keeps end-to-end runs fast"""
    return PipelineConfig(C=16, w=3, ks=3, N=4, L=2, seed=7,
                          backbone_channels=(4, 4, 8, 8), decoder_channels=(8, 8, 4)).validate()


@pytest.fixture
def synth_clip():
    return synth_sequence(8, 64, 64, 2, seed=3)


@pytest.fixture
def clip_dir(tmp_path, synth_clip):
    """8-frame 64x64 synthetic clip written to disk; returns the manifest path"""
    out = tmp_path / "clip"
    write_clip(synth_clip, str(out), fps=25.0, seed=3)
    return str(out / "manifest.json")
