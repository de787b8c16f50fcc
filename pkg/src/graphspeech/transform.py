"""Frame-wise spectral transforms over FrameMatrix data.

Three interchangeable analysis/synthesis pairs:

* gft_svd_forward/inverse - projection onto the real orthogonal Psi basis
  of the shift adjacency.  Spectra of real frames are real, so a single
  F x N matrix carries the full representation (magnitude and phase are
  never split apart).
* gft_evd_forward/inverse - the complex unitary eigenbasis of the same
  adjacency (the DFT for this circulant topology).
* stft_forward/inverse - plain unitary DFT keeping the non-redundant
  bins 0..N/2 of real input.

All three are norm-preserving per frame.  ``analyze``/``synthesize``
compose framing with the Psi transform into the waveform-level round trip
the enhancement pipeline is built on.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, FingerprintMismatchError, ParameterError
from .framing import FrameMatrix, FramingConfig, frame_signal, overlap_add
from .graph_basis import ComplexGraphBasis, GraphBasis

SPECTROGRAM_KINDS = ("stft", "gft_evd")

#: Largest imaginary residual tolerated when an inverse should be real.
IMAG_RESIDUAL_TOL = 1e-8


@dataclass(frozen=True)
class TimeGraphSpectrogram:
    """F x N real coefficient matrix bound to the basis that produced it."""

    coeffs: np.ndarray
    basis_fingerprint: str
    framing: FramingConfig
    original_len: int

    def __post_init__(self):
        if self.coeffs.ndim != 2:
            raise DimensionError("coeffs must be a 2-D matrix")
        if not np.isfinite(self.coeffs).all():
            raise ParameterError("spectrogram contains non-finite entries")
        if not self.basis_fingerprint:
            raise ParameterError("basis fingerprint must be non-empty")
        self.coeffs.setflags(write=False)


@dataclass(frozen=True)
class ComplexSpectrogram:
    """Real/imaginary pair of an F x B complex spectrogram."""

    real: np.ndarray
    imag: np.ndarray
    kind: str
    framing: FramingConfig
    original_len: int

    def __post_init__(self):
        if self.kind not in SPECTROGRAM_KINDS:
            raise ParameterError(f"unknown spectrogram kind {self.kind!r}")
        if self.real.shape != self.imag.shape or self.real.ndim != 2:
            raise DimensionError("real and imag must be matching 2-D matrices")
        if self.kind == "stft" and self.real.shape[1] != self.framing.transform_len // 2 + 1:
            raise DimensionError("stft spectrogram must have N/2+1 bins")
        if not (np.isfinite(self.real).all() and np.isfinite(self.imag).all()):
            raise ParameterError("spectrogram contains non-finite entries")
        self.real.setflags(write=False)
        self.imag.setflags(write=False)

    def to_complex(self) -> np.ndarray:
        return self.real + 1j * self.imag


def _check_frame_dims(frames: FrameMatrix, n: int):
    if frames.config.transform_len != n:
        raise DimensionError(
            f"frame transform length {frames.config.transform_len} != basis size {n}"
        )


def gft_svd_forward(frames: FrameMatrix, basis: GraphBasis) -> TimeGraphSpectrogram:
    """Project each frame onto the Psi basis: coefficient row m = Psi @ frame_m."""
    _check_frame_dims(frames, basis.n)
    coeffs = frames.frames @ basis.psi.T
    return TimeGraphSpectrogram(
        coeffs=coeffs,
        basis_fingerprint=basis.fingerprint,
        framing=frames.config,
        original_len=frames.original_len,
    )


def gft_svd_inverse(spec: TimeGraphSpectrogram, basis: GraphBasis) -> FrameMatrix:
    """Invert via the transpose (Psi is orthogonal): frame_m = Psi^T @ row_m.

    Refuses to run against a basis other than the one the spectrogram was
    analyzed with; that is exactly the forward/inverse divergence the
    fingerprint exists to catch.
    """
    if spec.basis_fingerprint != basis.fingerprint:
        raise FingerprintMismatchError(
            "spectrogram is bound to a different basis than the one supplied"
        )
    frames = spec.coeffs @ basis.psi
    return FrameMatrix(
        frames=frames,
        config=spec.framing,
        original_len=spec.original_len,
        pad_pre=spec.framing.window_len,
    )


def gft_evd_forward(frames: FrameMatrix, cbasis: ComplexGraphBasis) -> ComplexSpectrogram:
    """Complex graph spectrum: row m = U^H @ frame_m."""
    _check_frame_dims(frames, cbasis.n)
    spec = frames.frames @ np.conj(cbasis.u)  # (U^H f)^T = f^T conj(U)
    return ComplexSpectrogram(
        real=np.ascontiguousarray(spec.real),
        imag=np.ascontiguousarray(spec.imag),
        kind="gft_evd",
        framing=frames.config,
        original_len=frames.original_len,
    )


def gft_evd_inverse(spec: ComplexSpectrogram, cbasis: ComplexGraphBasis) -> FrameMatrix:
    """Invert with U and return the real part.

    A real frame matrix is the only valid pre-image, so an imaginary
    residual above 1e-8 means the spectrogram was corrupted and raises.
    """
    if spec.kind != "gft_evd":
        raise ParameterError(f"expected a gft_evd spectrogram, got {spec.kind!r}")
    if spec.real.shape[1] != cbasis.n:
        raise DimensionError("spectrogram bin count does not match basis size")
    frames = spec.to_complex() @ cbasis.u.T
    residual = float(np.max(np.abs(frames.imag))) if frames.size else 0.0
    if residual > IMAG_RESIDUAL_TOL:
        raise ParameterError(
            f"inverse produced imaginary residual {residual:.3e} (corrupted spectrogram?)"
        )
    return FrameMatrix(
        frames=np.ascontiguousarray(frames.real),
        config=spec.framing,
        original_len=spec.original_len,
        pad_pre=spec.framing.window_len,
    )


def stft_forward(frames: FrameMatrix) -> ComplexSpectrogram:
    """Unitary DFT of each frame, keeping bins 0..N/2 of the real input."""
    n = frames.config.transform_len
    spec = np.fft.rfft(frames.frames, n=n, axis=1) / np.sqrt(n)
    return ComplexSpectrogram(
        real=np.ascontiguousarray(spec.real),
        imag=np.ascontiguousarray(spec.imag),
        kind="stft",
        framing=frames.config,
        original_len=frames.original_len,
    )


def stft_inverse(spec: ComplexSpectrogram) -> FrameMatrix:
    """Inverse unitary DFT back to real frames."""
    if spec.kind != "stft":
        raise ParameterError(f"expected an stft spectrogram, got {spec.kind!r}")
    n = spec.framing.transform_len
    if spec.real.shape[1] != n // 2 + 1:
        raise DimensionError("stft spectrogram must have N/2+1 bins")
    frames = np.fft.irfft(spec.to_complex() * np.sqrt(n), n=n, axis=1)
    return FrameMatrix(
        frames=np.ascontiguousarray(frames),
        config=spec.framing,
        original_len=spec.original_len,
        pad_pre=spec.framing.window_len,
    )


def analyze(
    x: np.ndarray, cfg: FramingConfig, basis: GraphBasis
) -> TimeGraphSpectrogram:
    """Waveform to time-graph spectrogram (framing + Psi projection)."""
    return gft_svd_forward(frame_signal(x, cfg), basis)


def synthesize(spec: TimeGraphSpectrogram, basis: GraphBasis) -> np.ndarray:
    """Time-graph spectrogram back to a waveform of the original length."""
    return overlap_add(gft_svd_inverse(spec, basis))


def analyze_evd(
    x: np.ndarray, cfg: FramingConfig, cbasis: ComplexGraphBasis
) -> ComplexSpectrogram:
    return gft_evd_forward(frame_signal(x, cfg), cbasis)


def synthesize_evd(spec: ComplexSpectrogram, cbasis: ComplexGraphBasis) -> np.ndarray:
    return overlap_add(gft_evd_inverse(spec, cbasis))


def analyze_stft(x: np.ndarray, cfg: FramingConfig) -> ComplexSpectrogram:
    return stft_forward(frame_signal(x, cfg))


def synthesize_stft(spec: ComplexSpectrogram) -> np.ndarray:
    return overlap_add(stft_inverse(spec))


def spectrogram_to_csv(spec, destination) -> None:
    """Export a spectrogram as CSV, one line per (frame, bin).

    Real spectrograms get ``frame,bin,value`` rows; complex ones get
    ``frame,bin,real,imag``.  Values are printed with 9 significant digits.
    """
    if isinstance(spec, TimeGraphSpectrogram):
        header = ["frame", "bin", "value"]
        columns = (spec.coeffs,)
    elif isinstance(spec, ComplexSpectrogram):
        header = ["frame", "bin", "real", "imag"]
        columns = (spec.real, spec.imag)
    else:
        raise ParameterError(f"cannot export object of type {type(spec).__name__}")

    with open(destination, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        f, b = columns[0].shape
        for m in range(f):
            for j in range(b):
                writer.writerow(
                    [m, j] + [format(c[m, j], ".9g") for c in columns]
                )
