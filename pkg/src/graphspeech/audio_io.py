"""WAV I/O, SNR-controlled mixing, and dataset manifests.

The WAV codec is deliberately narrow: mono RIFF/WAVE carrying PCM16 or
IEEE float32, nothing else.  Anything outside that contract is rejected
with a specific error rather than silently converted, because a silent
resample or channel mixdown corrupts an experiment.
"""
from __future__ import annotations

import csv
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    MalformedWavError,
    ManifestError,
    ParameterError,
    SampleRateMismatchError,
    UnsupportedWavLayoutError,
)

_FMT_PCM = 1
_FMT_IEEE_FLOAT = 3

MANIFEST_HEADER = ["id", "clean_path", "noise_path", "snr_db"]


@dataclass(frozen=True)
class AudioClip:
    """Mono waveform as float64 samples (nominal range [-1, 1]) plus its rate."""

    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        if self.sample_rate <= 0:
            raise ParameterError("sample rate must be positive")
        if self.samples.ndim != 1:
            raise DimensionError("AudioClip holds mono 1-D sample arrays")
        if not np.isfinite(self.samples).all():
            raise ParameterError("samples contain non-finite values")
        self.samples.setflags(write=False)

    def __len__(self) -> int:
        return int(self.samples.size)


@dataclass(frozen=True)
class ManifestEntry:
    id: str
    clean_path: str
    noise_path: str
    snr_db: float


def read_wav(path, expected_rate: int | None = None) -> AudioClip:
    """Read a mono PCM16 or float32 WAV file.

    PCM16 samples decode as value/32768.  ``expected_rate``, when given,
    turns a rate disagreement into SampleRateMismatchError instead of a
    silently different clip.
    """
    data = Path(path).read_bytes()
    if len(data) < 12 or data[:4] != b"RIFF" or data[8:12] != b"WAVE":
        raise MalformedWavError(f"{path}: not a RIFF/WAVE file")

    fmt = None
    payload = None
    pos = 12
    while pos + 8 <= len(data):
        chunk_id = data[pos : pos + 4]
        (chunk_size,) = struct.unpack_from("<I", data, pos + 4)
        body = data[pos + 8 : pos + 8 + chunk_size]
        if len(body) < chunk_size:
            raise MalformedWavError(f"{path}: chunk {chunk_id!r} overruns the file")
        if chunk_id == b"fmt ":
            if chunk_size < 16:
                raise MalformedWavError(f"{path}: fmt chunk too short")
            fmt = struct.unpack_from("<HHIIHH", body, 0)
        elif chunk_id == b"data":
            payload = body
        pos += 8 + chunk_size + (chunk_size & 1)  # chunks are word-aligned

    if fmt is None or payload is None:
        raise MalformedWavError(f"{path}: missing fmt or data chunk")
    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if channels != 1:
        raise UnsupportedWavLayoutError(f"{path}: {channels} channels, expected mono")
    if audio_format == _FMT_PCM and bits == 16:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % 2], dtype="<i2")
        samples = raw.astype(np.float64) / 32768.0
    elif audio_format == _FMT_IEEE_FLOAT and bits == 32:
        raw = np.frombuffer(payload[: len(payload) - len(payload) % 4], dtype="<f4")
        samples = raw.astype(np.float64)
    else:
        raise UnsupportedWavLayoutError(
            f"{path}: unsupported encoding (format {audio_format}, {bits} bits)"
        )
    if expected_rate is not None and rate != expected_rate:
        raise SampleRateMismatchError(
            f"{path}: sample rate {rate} Hz, expected {expected_rate} Hz"
        )
    return AudioClip(samples=samples, sample_rate=int(rate))


def write_wav(path, clip: AudioClip, encoding: str = "float32") -> None:
    """Write a mono WAV file as PCM16 (rounded, saturating) or float32."""
    if encoding == "pcm16":
        scaled = np.rint(clip.samples * 32768.0)
        frames = np.clip(scaled, -32768, 32767).astype("<i2").tobytes()
        audio_format, bits = _FMT_PCM, 16
    elif encoding == "float32":
        frames = clip.samples.astype("<f4").tobytes()
        audio_format, bits = _FMT_IEEE_FLOAT, 32
    else:
        raise ParameterError(f"unknown encoding {encoding!r}")

    block_align = bits // 8
    header = b"RIFF"
    header += struct.pack("<I", 36 + len(frames))
    header += b"WAVE"
    header += b"fmt " + struct.pack(
        "<IHHIIHH",
        16,
        audio_format,
        1,
        clip.sample_rate,
        clip.sample_rate * block_align,
        block_align,
        bits,
    )
    header += b"data" + struct.pack("<I", len(frames))
    Path(path).write_bytes(header + frames)


def mix_at_snr(
    clean: AudioClip, noise: AudioClip, snr_db: float, seed: int
) -> tuple[AudioClip, AudioClip]:
    """Mix noise into clean at an exact SNR; returns (noisy, scaled noise crop).

    The noise is cropped to the clean length at a seed-chosen offset, then
    scaled so 10*log10(clean energy / noise energy) equals snr_db exactly.
    """
    if clean.sample_rate != noise.sample_rate:
        raise SampleRateMismatchError(
            f"clean is {clean.sample_rate} Hz but noise is {noise.sample_rate} Hz"
        )
    if len(noise) < len(clean):
        raise ParameterError("noise must be at least as long as clean")
    rng = np.random.default_rng(seed)
    offset = int(rng.integers(0, len(noise) - len(clean) + 1))
    crop = noise.samples[offset : offset + len(clean)]

    clean_energy = float(np.dot(clean.samples, clean.samples))
    crop_energy = float(np.dot(crop, crop))
    if clean_energy <= 0.0:
        raise ParameterError("clean signal is silent")
    if crop_energy <= 0.0:
        raise ParameterError("noise crop is silent")
    gain = np.sqrt(clean_energy / (crop_energy * 10.0 ** (snr_db / 10.0)))
    scaled = gain * crop
    noisy = AudioClip(samples=clean.samples + scaled, sample_rate=clean.sample_rate)
    return noisy, AudioClip(samples=scaled, sample_rate=clean.sample_rate)


def load_manifest(path) -> list[ManifestEntry]:
    """Parse a dataset manifest CSV with header ``id,clean_path,noise_path,snr_db``."""
    entries: list[ManifestEntry] = []
    seen: dict[str, int] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ManifestError(f"{path}: empty file, expected a header row") from None
        if [h.strip() for h in header] != MANIFEST_HEADER:
            raise ManifestError(
                f"{path}: line 1: bad header {header!r}, expected {','.join(MANIFEST_HEADER)}"
            )
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise ManifestError(f"{path}: line {lineno}: expected 4 fields, got {len(row)}")
            entry_id, clean_path, noise_path, snr_text = (f.strip() for f in row)
            if not entry_id or not clean_path or not noise_path:
                raise ManifestError(f"{path}: line {lineno}: empty id or path field")
            try:
                snr_db = float(snr_text)
            except ValueError:
                raise ManifestError(
                    f"{path}: line {lineno}: unparsable snr_db {snr_text!r}"
                ) from None
            if entry_id in seen:
                raise ManifestError(
                    f"{path}: line {lineno}: duplicate id {entry_id!r} "
                    f"(first seen on line {seen[entry_id]})"
                )
            seen[entry_id] = lineno
            entries.append(ManifestEntry(entry_id, clean_path, noise_path, snr_db))
    return entries
