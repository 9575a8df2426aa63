from __future__ import annotations

import numpy as np
import pytest

from ascpipe.audio import AudioClip, save_wav


@pytest.fixture
def rng():
    return np.random.default_rng(20200701)


def make_tone(freq: float, seconds: float, sr: int, channels: int = 1, amp: float = 0.5):
    t = np.arange(int(round(seconds * sr))) / sr
    x = amp * np.sin(2 * np.pi * freq * t)
    if channels == 2:
        x = np.stack([x, 0.5 * x], axis=1)
    return AudioClip(x, sr)


@pytest.fixture
def tone_clip():
    return make_tone(1000.0, 1.0, 44100)


@pytest.fixture
def wav_factory(tmp_path):
    """Write small synthetic WAVs and return their paths."""

    def _make(name, seconds=1.0, sr=44100, channels=1, freq=440.0, encoding="pcm16"):
        clip = make_tone(freq, seconds, sr, channels)
        path = tmp_path / name
        save_wav(path, clip, encoding=encoding)
        return path

    return _make
