"""Windowed framing and weighted overlap-add reconstruction.

Analysis pads the signal with a window-length of zeros on both sides, so
every original sample sits in the fully-overlapped interior and the
analyze/overlap-add round trip is an identity to float precision.
Frames are zero-padded at the tail from the window length up to the
transform length.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, ParameterError

WINDOW_KINDS = ("hann_periodic", "rectangular")

#: Floor for the overlap-add normalization denominator.
OLA_DENOM_FLOOR = 1e-8


@dataclass(frozen=True)
class FramingConfig:
    """Frame geometry: 25 ms windows, 6.25 ms hop, length-512 transform at 16 kHz."""

    sample_rate: int = 16000
    window_len: int = 400
    hop: int = 100
    transform_len: int = 512
    window_kind: str = "hann_periodic"

    def __post_init__(self):
        if min(self.sample_rate, self.window_len, self.hop, self.transform_len) <= 0:
            raise ParameterError("all framing parameters must be positive")
        if not (self.hop <= self.window_len <= self.transform_len):
            raise ParameterError(
                f"need hop <= window_len <= transform_len, got "
                f"{self.hop}/{self.window_len}/{self.transform_len}"
            )
        if self.window_kind not in WINDOW_KINDS:
            raise ParameterError(f"unknown window kind {self.window_kind!r}")


@dataclass(frozen=True)
class FrameMatrix:
    """F x N matrix of windowed, tail-padded frames plus the geometry that made it."""

    frames: np.ndarray
    config: FramingConfig
    original_len: int
    pad_pre: int

    def __post_init__(self):
        if self.frames.ndim != 2 or self.frames.shape[1] != self.config.transform_len:
            raise DimensionError(
                f"frames must be F x {self.config.transform_len}, got {self.frames.shape}"
            )
        self.frames.setflags(write=False)


def analysis_window(cfg: FramingConfig) -> np.ndarray:
    """The length-W analysis window (also used for synthesis)."""
    w = cfg.window_len
    if cfg.window_kind == "rectangular":
        return np.ones(w)
    return 0.5 * (1.0 - np.cos(2.0 * np.pi * np.arange(w) / w))


def frame_count(original_len: int, cfg: FramingConfig) -> int:
    """Number of frames produced for a signal of ``original_len`` samples."""
    padded = original_len + 2 * cfg.window_len
    return math.ceil((padded - cfg.window_len) / cfg.hop) + 1


def frame_signal(x: np.ndarray, cfg: FramingConfig = FramingConfig()) -> FrameMatrix:
    """Split a waveform into windowed frames of length transform_len.

    The signal is zero-padded by window_len samples on each side (plus a
    partial hop at the tail so the last frame is complete); frame m is
    ``padded[m*hop : m*hop + window_len] * window`` followed by zeros in
    columns window_len..transform_len-1.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionError(f"expected a 1-D waveform, got shape {x.shape}")
    if x.size < 1:
        raise ParameterError("cannot frame an empty signal")

    w, h, n = cfg.window_len, cfg.hop, cfg.transform_len
    f = frame_count(x.size, cfg)
    total = (f - 1) * h + w
    padded = np.zeros(total)
    padded[w : w + x.size] = x

    windows = np.lib.stride_tricks.sliding_window_view(padded, w)[::h]
    frames = np.zeros((f, n))
    frames[:, :w] = windows * analysis_window(cfg)
    return FrameMatrix(frames=frames, config=cfg, original_len=x.size, pad_pre=w)


def _window_overlap_sum(f: int, cfg: FramingConfig) -> np.ndarray:
    win = analysis_window(cfg)
    w, h = cfg.window_len, cfg.hop
    d = np.zeros((f - 1) * h + w)
    prod = win * win  # analysis window times synthesis window
    for m in range(f):
        d[m * h : m * h + w] += prod
    return np.maximum(d, OLA_DENOM_FLOOR)


def overlap_add(frames: FrameMatrix) -> np.ndarray:
    """Reconstruct the waveform: window, overlap-add, normalize, trim pads.

    Exact inverse of frame_signal for any window kind, because the
    normalization divides by the summed analysis*synthesis window products
    and the original samples all lie in the fully-overlapped interior.
    """
    cfg = frames.config
    f = frames.frames.shape[0]
    if f != frame_count(frames.original_len, cfg):
        raise DimensionError(
            f"frame count {f} inconsistent with original_len {frames.original_len}"
        )
    w, h = cfg.window_len, cfg.hop
    win = analysis_window(cfg)
    y = np.zeros((f - 1) * h + w)
    weighted = frames.frames[:, :w] * win
    for m in range(f):
        y[m * h : m * h + w] += weighted[m]
    y /= _window_overlap_sum(f, cfg)
    return y[frames.pad_pre : frames.pad_pre + frames.original_len].copy()


def overlap_add_adjoint(
    grad_output: np.ndarray, cfg: FramingConfig, f: int, original_len: int
) -> np.ndarray:
    """Adjoint of the linear map ``frames -> overlap_add(frames)``.

    Used to backpropagate a waveform-shaped gradient into frame space;
    columns window_len..transform_len-1 of the result are zero, matching
    the forward map's truncation.
    """
    grad_output = np.asarray(grad_output, dtype=np.float64)
    if grad_output.shape != (original_len,):
        raise DimensionError("gradient length must equal original_len")
    w, h, n = cfg.window_len, cfg.hop, cfg.transform_len
    total = (f - 1) * h + w
    full = np.zeros(total)
    full[w : w + original_len] = grad_output
    full /= _window_overlap_sum(f, cfg)
    win = analysis_window(cfg)
    grad_frames = np.zeros((f, n))
    for m in range(f):
        grad_frames[m, :w] = full[m * h : m * h + w] * win
    return grad_frames
