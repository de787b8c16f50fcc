"""Mask-based enhancement in the time-graph domain.

The chain: analyze the noisy waveform into real graph coefficients, apply
a multiplicative mask, synthesize back.  Masks come from an oracle (the
clipped signed ratio of clean to noisy coefficients) or from a small
per-frame estimator trained by maximizing SI-SDR of the synthesized
output.  Every map between mask and waveform is linear, so the training
gradient is exact and hand-derived.

Graph coefficients are signed, so masks are signed too; a symmetric clip
(default 2.0) keeps the ratio bounded where the noisy denominator is small.
"""
from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    FingerprintMismatchError,
    MalformedHeaderError,
    NumericalDivergenceError,
    ParameterError,
    TruncatedPayloadError,
    VersionMismatchError,
)
from .framing import FrameMatrix, FramingConfig, frame_signal, overlap_add, overlap_add_adjoint
from .graph_basis import GraphBasis
from .metrics import si_sdr_parts
from .transform import TimeGraphSpectrogram, analyze, gft_svd_forward, synthesize

DEFAULT_MASK_CLIP = 2.0
DEFAULT_RATIO_EPS = 1e-8

CHECKPOINT_MAGIC = b"GFTM"
CHECKPOINT_VERSION = 1

_RMS_FLOOR = 1e-12


@dataclass(frozen=True)
class Mask:
    """Elementwise multiplicative mask over an F x N coefficient matrix.

    ``clip_bound`` of None means unbounded; otherwise every entry is within
    [-clip_bound, +clip_bound].  ``basis_fingerprint`` records which basis
    the mask was derived against (None when unbound).
    """

    values: np.ndarray
    clip_bound: float | None = None
    basis_fingerprint: str | None = None

    def __post_init__(self):
        if self.values.ndim != 2:
            raise DimensionError("mask values must be a 2-D matrix")
        if not np.isfinite(self.values).all():
            raise ParameterError("mask contains non-finite entries")
        if self.clip_bound is not None:
            if self.clip_bound <= 0:
                raise ParameterError("clip bound must be positive")
            if np.max(np.abs(self.values), initial=0.0) > self.clip_bound:
                raise ParameterError("mask entries exceed the declared clip bound")
        self.values.setflags(write=False)


@dataclass(frozen=True)
class MlpParams:
    """One-hidden-layer per-frame mask estimator.

    forward: mask_row = out_scale * tanh(w2 @ relu(w1 @ features + b1) + b2).
    The output is bounded in [-out_scale, +out_scale] by construction.
    """

    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    out_scale: float = 2.0
    seed: int = 0

    def __post_init__(self):
        hidden, n_in = self.w1.shape
        n_out = self.w2.shape[0]
        if self.b1.shape != (hidden,) or self.w2.shape != (n_out, hidden) or self.b2.shape != (n_out,):
            raise DimensionError("estimator parameter shapes do not chain")
        if self.out_scale <= 0:
            raise ParameterError("out_scale must be positive")
        for arr in (self.w1, self.b1, self.w2, self.b2):
            if not np.isfinite(arr).all():
                raise ParameterError("estimator parameters contain non-finite values")
            arr.setflags(write=False)

    @property
    def layer_sizes(self) -> tuple[int, int, int]:
        return (self.w1.shape[1], self.w1.shape[0], self.w2.shape[0])

    def arrays(self) -> tuple[np.ndarray, ...]:
        return (self.w1, self.b1, self.w2, self.b2)


@dataclass(frozen=True)
class TrainConfig:
    """Adaptive-moment training hyperparameters."""

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 200
    batch_size: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0 or self.steps <= 0 or self.batch_size <= 0:
            raise ParameterError("learning rate, steps, and batch size must be positive")


@dataclass
class AdamState:
    """First/second moment accumulators, one pair per parameter array."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: MlpParams) -> "AdamState":
        return cls(
            m=[np.zeros_like(a) for a in params.arrays()],
            v=[np.zeros_like(a) for a in params.arrays()],
            step=0,
        )


def init_mlp_params(
    sizes: tuple[int, int, int] = (512, 256, 512),
    out_scale: float = 2.0,
    seed: int = 0,
) -> MlpParams:
    """Seeded estimator initialization.

    Hidden weights use scaled-Gaussian fan-in init; the output layer starts
    near zero with its bias set so the initial mask is ~1 everywhere
    (pass-through), which makes the untrained estimator behave like the
    identity instead of a silence gate.
    """
    n_in, hidden, n_out = sizes
    if min(sizes) < 1:
        raise ParameterError("layer sizes must be positive")
    rng = np.random.default_rng(seed)
    w1 = rng.standard_normal((hidden, n_in)) * np.sqrt(2.0 / n_in)
    b1 = np.zeros(hidden)
    w2 = rng.standard_normal((n_out, hidden)) * (0.01 / np.sqrt(hidden))
    bias = math.atanh(1.0 / out_scale) if out_scale > 1.0 else 0.0
    b2 = np.full(n_out, bias)
    return MlpParams(w1=w1, b1=b1, w2=w2, b2=b2, out_scale=out_scale, seed=seed)


def apply_mask(mask: Mask, noisy: TimeGraphSpectrogram) -> TimeGraphSpectrogram:
    """Elementwise product; the result inherits framing and fingerprint."""
    if mask.values.shape != noisy.coeffs.shape:
        raise DimensionError(
            f"mask shape {mask.values.shape} != spectrogram shape {noisy.coeffs.shape}"
        )
    if mask.basis_fingerprint is not None and mask.basis_fingerprint != noisy.basis_fingerprint:
        raise FingerprintMismatchError("mask and spectrogram are bound to different bases")
    return TimeGraphSpectrogram(
        coeffs=mask.values * noisy.coeffs,
        basis_fingerprint=noisy.basis_fingerprint,
        framing=noisy.framing,
        original_len=noisy.original_len,
    )


def ratio_mask_values(
    clean_coeffs: np.ndarray,
    noisy_coeffs: np.ndarray,
    clip: float | None = DEFAULT_MASK_CLIP,
    eps: float = DEFAULT_RATIO_EPS,
) -> np.ndarray:
    """Signed clean/noisy ratio with an eps-guarded denominator, clamped to +-clip.

    The denominator is nudged by eps away from zero on the side the noisy
    coefficient already sits on (zeros count as positive), so entries stay
    finite even where the noisy coefficient vanishes.
    """
    if eps <= 0:
        raise ParameterError("eps must be positive")
    y = noisy_coeffs
    denom = y + np.where(y >= 0.0, eps, -eps)
    values = clean_coeffs / denom
    if clip is not None and math.isfinite(clip):
        values = np.clip(values, -clip, clip)
    return values


def oracle_ratio_mask(
    clean: TimeGraphSpectrogram,
    noisy: TimeGraphSpectrogram,
    clip: float | None = DEFAULT_MASK_CLIP,
    eps: float = DEFAULT_RATIO_EPS,
) -> Mask:
    """Mask whose entries are the clipped signed ratio of clean to noisy coefficients."""
    if clean.coeffs.shape != noisy.coeffs.shape:
        raise DimensionError("clean and noisy spectrograms differ in shape")
    if clean.basis_fingerprint != noisy.basis_fingerprint:
        raise FingerprintMismatchError("clean and noisy spectrograms use different bases")
    values = ratio_mask_values(clean.coeffs, noisy.coeffs, clip=clip, eps=eps)
    bound = float(clip) if clip is not None and math.isfinite(clip) else None
    return Mask(values=values, clip_bound=bound, basis_fingerprint=noisy.basis_fingerprint)


def rms_normalized_features(coeffs: np.ndarray, waveform: np.ndarray) -> np.ndarray:
    """Scale coefficients by the utterance RMS so the estimator sees a
    level-independent input (the objective is scale-invariant too)."""
    rms = max(float(np.sqrt(np.mean(np.square(waveform)))), _RMS_FLOOR)
    return coeffs / rms


def mlp_forward(params: MlpParams, noisy_features: np.ndarray) -> Mask:
    """Run the estimator on each frame row independently."""
    noisy_features = np.asarray(noisy_features, dtype=np.float64)
    if noisy_features.ndim != 2 or noisy_features.shape[1] != params.layer_sizes[0]:
        raise DimensionError(
            f"features must be F x {params.layer_sizes[0]}, got {noisy_features.shape}"
        )
    z1 = noisy_features @ params.w1.T + params.b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.w2.T + params.b2
    values = params.out_scale * np.tanh(z2)
    return Mask(values=values, clip_bound=params.out_scale)


def si_sdr_value_and_grad(
    estimate: np.ndarray, reference: np.ndarray
) -> tuple[float, np.ndarray]:
    """SI-SDR in dB and its exact gradient with respect to the estimate.

    With p the projection of the estimate onto the reference and e the
    residual, d(value)/d(estimate) = (20/ln 10) * (p/||p||^2 - e/||e||^2);
    the residual is orthogonal to the reference, which collapses the
    projection Jacobian.  Norms are floored as in the metric itself.
    """
    parts = si_sdr_parts(estimate, reference)
    scale = 20.0 / math.log(10.0)
    grad = scale * (
        parts.projection / parts.projection_norm**2
        - parts.residual / parts.residual_norm**2
    )
    return parts.value_db, grad


def _estimator_forward_backward(
    params: MlpParams,
    noisy: np.ndarray,
    clean: np.ndarray,
    basis: GraphBasis,
    cfg: FramingConfig,
) -> tuple[float, list[np.ndarray]]:
    """Loss (-SI-SDR of the synthesized estimate) and parameter gradients.

    Every stage past the mask is linear (elementwise product with fixed Y,
    orthogonal inverse, overlap-add), so backpropagation is a chain of
    adjoints of those maps followed by the standard dense-layer rules.
    """
    noisy = np.asarray(noisy, dtype=np.float64)
    clean = np.asarray(clean, dtype=np.float64)
    if noisy.shape != clean.shape:
        raise DimensionError("noisy and clean waveforms must have equal length")

    frames = frame_signal(noisy, cfg)
    f = frames.frames.shape[0]
    y = frames.frames @ basis.psi.T
    feat = rms_normalized_features(y, noisy)

    z1 = feat @ params.w1.T + params.b1
    h1 = np.maximum(z1, 0.0)
    z2 = h1 @ params.w2.T + params.b2
    th = np.tanh(z2)
    mask = params.out_scale * th

    masked = mask * y
    est_frames = masked @ basis.psi
    estimate = overlap_add(
        FrameMatrix(frames=est_frames, config=cfg, original_len=noisy.size, pad_pre=cfg.window_len)
    )

    value, grad_wave = si_sdr_value_and_grad(estimate, clean)
    loss = -value
    grad_est = -grad_wave

    grad_frames = overlap_add_adjoint(grad_est, cfg, f, noisy.size)
    grad_masked = grad_frames @ basis.psi.T
    grad_mask = grad_masked * y
    grad_z2 = grad_mask * params.out_scale * (1.0 - th * th)
    grad_w2 = grad_z2.T @ h1
    grad_b2 = grad_z2.sum(axis=0)
    grad_h1 = grad_z2 @ params.w2
    grad_z1 = grad_h1 * (z1 > 0.0)
    grad_w1 = grad_z1.T @ feat
    grad_b1 = grad_z1.sum(axis=0)

    grads = [grad_w1, grad_b1, grad_w2, grad_b2]
    if not math.isfinite(loss) or not all(np.isfinite(g).all() for g in grads):
        raise NumericalDivergenceError("training loss or gradient became non-finite")
    return loss, grads


def _adam_update(
    params: MlpParams, state: AdamState, grads: list[np.ndarray], cfg: TrainConfig
) -> tuple[MlpParams, AdamState]:
    t = state.step + 1
    new_arrays = []
    for j, (p, g) in enumerate(zip(params.arrays(), grads)):
        state.m[j] = cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g
        state.v[j] = cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g * g
        m_hat = state.m[j] / (1.0 - cfg.beta1**t)
        v_hat = state.v[j] / (1.0 - cfg.beta2**t)
        new_arrays.append(p - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.eps))
    state.step = t
    new_params = MlpParams(
        w1=new_arrays[0],
        b1=new_arrays[1],
        w2=new_arrays[2],
        b2=new_arrays[3],
        out_scale=params.out_scale,
        seed=params.seed,
    )
    return new_params, state


def train_step(
    params: MlpParams,
    state: AdamState,
    noisy: np.ndarray,
    clean: np.ndarray,
    basis: GraphBasis,
    framing_cfg: FramingConfig,
    train_cfg: TrainConfig,
) -> tuple[MlpParams, AdamState, float]:
    """One optimizer update on a single utterance; returns the pre-update loss."""
    loss, grads = _estimator_forward_backward(params, noisy, clean, basis, framing_cfg)
    params, state = _adam_update(params, state, grads, train_cfg)
    return params, state, loss


def train_batch_step(
    params: MlpParams,
    state: AdamState,
    batch: list[tuple[np.ndarray, np.ndarray]],
    basis: GraphBasis,
    framing_cfg: FramingConfig,
    train_cfg: TrainConfig,
) -> tuple[MlpParams, AdamState, float]:
    """One update on a batch of (noisy, clean) pairs; gradients are averaged."""
    if not batch:
        raise ParameterError("batch must contain at least one utterance")
    total: list[np.ndarray] | None = None
    losses = []
    for noisy, clean in batch:
        loss, grads = _estimator_forward_backward(params, noisy, clean, basis, framing_cfg)
        losses.append(loss)
        total = grads if total is None else [a + b for a, b in zip(total, grads)]
    scale = 1.0 / len(batch)
    grads = [g * scale for g in total]
    params, state = _adam_update(params, state, grads, train_cfg)
    return params, state, float(np.mean(losses))


def unity_mask_source():
    """Mask source that passes the spectrogram through unchanged."""

    def source(spec: TimeGraphSpectrogram, waveform: np.ndarray, basis: GraphBasis) -> Mask:
        return Mask(
            values=np.ones_like(spec.coeffs),
            clip_bound=None,
            basis_fingerprint=spec.basis_fingerprint,
        )

    return source


def zero_mask_source():
    """Mask source that silences everything."""

    def source(spec: TimeGraphSpectrogram, waveform: np.ndarray, basis: GraphBasis) -> Mask:
        return Mask(
            values=np.zeros_like(spec.coeffs),
            clip_bound=None,
            basis_fingerprint=spec.basis_fingerprint,
        )

    return source


def oracle_mask_source(
    clean: np.ndarray,
    clip: float | None = DEFAULT_MASK_CLIP,
    eps: float = DEFAULT_RATIO_EPS,
):
    """Mask source computing the clipped ratio mask against a known clean signal."""
    clean = np.asarray(clean, dtype=np.float64)

    def source(spec: TimeGraphSpectrogram, waveform: np.ndarray, basis: GraphBasis) -> Mask:
        if clean.shape != waveform.shape:
            raise DimensionError("clean and noisy waveforms must have equal length")
        clean_spec = analyze(clean, spec.framing, basis)
        return oracle_ratio_mask(clean_spec, spec, clip=clip, eps=eps)

    return source


def estimator_mask_source(params: MlpParams):
    """Mask source running a trained estimator on RMS-normalized coefficients."""

    def source(spec: TimeGraphSpectrogram, waveform: np.ndarray, basis: GraphBasis) -> Mask:
        feat = rms_normalized_features(spec.coeffs, waveform)
        mask = mlp_forward(params, feat)
        return replace(mask, basis_fingerprint=spec.basis_fingerprint)

    return source


def enhance_pipeline(
    noisy: np.ndarray,
    basis: GraphBasis,
    mask_source,
    cfg: FramingConfig = FramingConfig(),
) -> np.ndarray:
    """analyze -> mask -> synthesize; output length equals input length."""
    noisy = np.asarray(noisy, dtype=np.float64)
    spec = gft_svd_forward(frame_signal(noisy, cfg), basis)
    mask = mask_source(spec, noisy, basis)
    return synthesize(apply_mask(mask, spec), basis)


def save_checkpoint(path, params: MlpParams, basis_fingerprint: str) -> None:
    """Serialize estimator parameters bound to a basis fingerprint.

    Layout (little-endian): magic ``GFTM``, u32 version, u32 layer count,
    u32 layer sizes, f64 output scale, parameter arrays in layer order as
    f64, i64 init seed, the 32-byte basis fingerprint, and a trailing
    SHA-256 of everything before it.
    """
    sizes = params.layer_sizes
    body = bytearray()
    body += CHECKPOINT_MAGIC
    body += struct.pack("<II", CHECKPOINT_VERSION, len(sizes))
    body += struct.pack(f"<{len(sizes)}I", *sizes)
    body += struct.pack("<d", params.out_scale)
    for arr in params.arrays():
        body += np.ascontiguousarray(arr, dtype="<f8").tobytes()
    body += struct.pack("<q", params.seed)
    body += bytes.fromhex(basis_fingerprint)
    body += hashlib.sha256(bytes(body)).digest()
    Path(path).write_bytes(bytes(body))


def load_checkpoint(path, basis: GraphBasis | None = None) -> tuple[MlpParams, str]:
    """Load a checkpoint, returning (params, basis fingerprint hex).

    If ``basis`` is given its fingerprint must equal the stored one;
    anything else is the forward/inverse divergence the binding prevents.
    """
    data = Path(path).read_bytes()
    if len(data) < 4 or data[:4] != CHECKPOINT_MAGIC:
        raise MalformedHeaderError("not a checkpoint file (bad magic)")
    if len(data) < 12:
        raise TruncatedPayloadError("checkpoint header is incomplete")
    version, n_layers = struct.unpack_from("<II", data, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionMismatchError(
            f"checkpoint version {version} unsupported (expected {CHECKPOINT_VERSION})"
        )
    if n_layers != 3:
        raise MalformedHeaderError(f"expected 3 layer sizes, header says {n_layers}")
    offset = 12
    if len(data) < offset + 4 * n_layers + 8:
        raise TruncatedPayloadError("checkpoint header is incomplete")
    sizes = struct.unpack_from(f"<{n_layers}I", data, offset)
    offset += 4 * n_layers
    (out_scale,) = struct.unpack_from("<d", data, offset)
    offset += 8

    n_in, hidden, n_out = sizes
    counts = [hidden * n_in, hidden, n_out * hidden, n_out]
    expected = offset + 8 * sum(counts) + 8 + 32 + 32
    if len(data) != expected:
        raise TruncatedPayloadError(
            f"checkpoint is {len(data)} bytes, expected {expected}"
        )
    if hashlib.sha256(data[:-32]).digest() != data[-32:]:
        raise FingerprintMismatchError("checkpoint content hash does not match")

    arrays = []
    for count in counts:
        arrays.append(np.ascontiguousarray(np.frombuffer(data, dtype="<f8", count=count, offset=offset)))
        offset += 8 * count
    (seed,) = struct.unpack_from("<q", data, offset)
    offset += 8
    stored_fp = data[offset : offset + 32].hex()

    params = MlpParams(
        w1=arrays[0].reshape(hidden, n_in),
        b1=arrays[1],
        w2=arrays[2].reshape(n_out, hidden),
        b2=arrays[3],
        out_scale=float(out_scale),
        seed=int(seed),
    )
    if basis is not None and stored_fp != basis.fingerprint:
        raise FingerprintMismatchError(
            "checkpoint was trained against a different basis"
        )
    return params, stored_fp
