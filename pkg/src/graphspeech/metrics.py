"""Evaluation measures: SI-SDR, SNR, and reconstruction error.

``si_sdr_parts`` is the single SI-SDR core; the training-time
value-and-gradient routine reuses it, so evaluation and loss agree to the
last bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np

from .errors import DimensionError, ParameterError

#: Norms inside the SI-SDR log ratio never drop below this.
RESIDUAL_FLOOR = 1e-12

#: Reported decibel values are clamped to +-120 so CSV output stays finite.
DB_REPORT_FLOOR = 120.0


class SiSdrParts(NamedTuple):
    """Decomposition of an estimate against a reference, plus the score."""

    value_db: float
    projection: np.ndarray
    residual: np.ndarray
    projection_norm: float
    residual_norm: float


def si_sdr_parts(estimate: np.ndarray, reference: np.ndarray) -> SiSdrParts:
    """Project the estimate onto the reference line and score the split.

    value = 20*log10(||p|| / ||e||) with p the projection of the estimate
    onto the reference and e the remainder; both norms are floored at
    1e-12 so identical or orthogonal pairs stay finite.
    """
    estimate = np.asarray(estimate, dtype=np.float64)
    reference = np.asarray(reference, dtype=np.float64)
    if estimate.shape != reference.shape or estimate.ndim != 1:
        raise DimensionError(
            f"estimate and reference must be equal-length vectors, got "
            f"{estimate.shape} vs {reference.shape}"
        )
    ref_energy = float(np.dot(reference, reference))
    if ref_energy <= 0.0:
        raise ParameterError("reference signal is silent")
    alpha = float(np.dot(estimate, reference)) / ref_energy
    projection = alpha * reference
    residual = estimate - projection
    p_norm = max(float(np.linalg.norm(projection)), RESIDUAL_FLOOR)
    e_norm = max(float(np.linalg.norm(residual)), RESIDUAL_FLOOR)
    value = 20.0 * np.log10(p_norm / e_norm)
    return SiSdrParts(float(value), projection, residual, p_norm, e_norm)


def si_sdr(estimate: np.ndarray, reference: np.ndarray) -> float:
    """Scale-invariant signal-to-distortion ratio in dB."""
    return si_sdr_parts(estimate, reference).value_db


def snr(signal: np.ndarray, noise: np.ndarray) -> float:
    """10*log10 of the energy ratio, clamped to +-120 dB for reporting."""
    signal = np.asarray(signal, dtype=np.float64)
    noise = np.asarray(noise, dtype=np.float64)
    if signal.shape != noise.shape:
        raise DimensionError("signal and noise must have equal length")
    noise_energy = float(np.dot(noise, noise))
    if noise_energy <= 0.0:
        raise ParameterError("noise signal is silent")
    signal_energy = float(np.dot(signal, signal))
    if signal_energy <= 0.0:
        return -DB_REPORT_FLOOR
    value = 10.0 * np.log10(signal_energy / noise_energy)
    return float(np.clip(value, -DB_REPORT_FLOOR, DB_REPORT_FLOOR))


def reconstruction_error(x: np.ndarray, x_hat: np.ndarray) -> tuple[float, float]:
    """(max absolute difference, relative l2 error) between two waveforms."""
    x = np.asarray(x, dtype=np.float64)
    x_hat = np.asarray(x_hat, dtype=np.float64)
    if x.shape != x_hat.shape:
        raise DimensionError("waveforms must have equal length")
    diff = x - x_hat
    max_abs = float(np.max(np.abs(diff))) if diff.size else 0.0
    rel_l2 = float(np.linalg.norm(diff) / max(np.linalg.norm(x), RESIDUAL_FLOOR))
    return max_abs, rel_l2


@dataclass
class EvalReport:
    """Per-utterance metric bundle; None marks a metric that was not computable."""

    si_sdr_db: float | None = None
    si_sdr_improvement_db: float | None = None
    snr_db: float | None = None
    max_abs_error: float | None = None
    rel_l2_error: float | None = None


METRICS_CSV_HEADER = ["file", "si_sdr_db", "si_sdr_imp_db", "snr_db", "max_abs_err", "rel_l2_err"]


def _format_value(v: float | None) -> str:
    return "" if v is None else format(v, ".9g")


def metrics_row(file_id: str, report: EvalReport) -> list[str]:
    return [file_id] + [_format_value(getattr(report, f.name)) for f in fields(report)]


def write_metrics_csv(destination, rows: list[tuple[str, EvalReport]]) -> None:
    """Write one row per (file, report) plus a final MEAN row over present values."""
    with open(destination, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_CSV_HEADER)
        for file_id, report in rows:
            writer.writerow(metrics_row(file_id, report))
        mean = EvalReport()
        for f in fields(EvalReport):
            values = [
                getattr(r, f.name) for _, r in rows if getattr(r, f.name) is not None
            ]
            if values:
                setattr(mean, f.name, float(np.mean(values)))
        writer.writerow(metrics_row("MEAN", mean))
