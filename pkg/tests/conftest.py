"""Shared fixtures: deterministic test signals and session-scoped bases."""
import numpy as np
import pytest

from graphspeech.graph_basis import build_adjacency, decompose_evd, decompose_svd

SR = 16000


def speech_like(seed: int, length: int, sr: int = SR) -> np.ndarray:
    """Voiced-speech stand-in: drifting-pitch harmonic stack with a slow
    amplitude envelope, peak-normalized to 0.5."""
    rng = np.random.default_rng(seed)
    t = np.arange(length) / sr
    f0 = 120.0 + 30.0 * np.sin(2.0 * np.pi * 1.3 * t) + 5.0 * rng.standard_normal()
    phase = 2.0 * np.pi * np.cumsum(f0) / sr
    x = np.zeros(length)
    for h in range(1, 12):
        x += (1.0 / h) * np.sin(h * phase + rng.uniform(0.0, 2.0 * np.pi))
    env = 0.4 + 0.6 * np.abs(np.sin(2.0 * np.pi * 3.1 * t + rng.uniform(0.0, 2.0 * np.pi)))
    x *= env
    return 0.5 * x / np.max(np.abs(x))


def white_noise(seed: int, length: int) -> np.ndarray:
    return np.random.default_rng(seed).standard_normal(length)


def pink_noise(seed: int, length: int) -> np.ndarray:
    """1/f-shaped noise via spectral weighting, unit variance."""
    rng = np.random.default_rng(seed)
    spec = np.fft.rfft(rng.standard_normal(length))
    weights = np.arange(spec.size, dtype=np.float64)
    weights[0] = 1.0
    x = np.fft.irfft(spec / np.sqrt(weights), n=length)
    return x / np.std(x)


def mix_to_snr(clean: np.ndarray, noise: np.ndarray, snr_db: float) -> np.ndarray:
    gain = np.sqrt(np.dot(clean, clean) / (np.dot(noise, noise) * 10.0 ** (snr_db / 10.0)))
    return clean + gain * noise


@pytest.fixture(scope="session")
def basis8_k3():
    return decompose_svd(build_adjacency(8, 3))


@pytest.fixture(scope="session")
def basis512_k3():
    return decompose_svd(build_adjacency(512, 3))


@pytest.fixture(scope="session")
def bases512():
    """Canonical 512-point bases for k in {1, 3, 5, 7}, computed once."""
    return {k: decompose_svd(build_adjacency(512, k)) for k in (1, 3, 5, 7)}


@pytest.fixture(scope="session")
def cbasis512_k1():
    return decompose_evd(build_adjacency(512, 1))
