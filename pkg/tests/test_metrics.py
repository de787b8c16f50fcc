"""SI-SDR, SNR, and reconstruction-error behaviour."""
import numpy as np
import pytest

from graphspeech.errors import DimensionError, ParameterError
from graphspeech.metrics import (
    EvalReport,
    reconstruction_error,
    si_sdr,
    snr,
    write_metrics_csv,
)


class TestSiSdr:
    def test_hand_case_is_zero_db(self):
        # projection of [1,1] onto [1,0] is [1,0]; residual [0,1]; equal norms
        assert abs(si_sdr([1.0, 1.0], [1.0, 0.0])) < 1e-12

    def test_perfect_estimate_hits_floored_maximum(self):
        s = np.array([0.3, -0.2, 0.9])
        value = si_sdr(s, s)
        assert value == 20.0 * np.log10(np.linalg.norm(s) / 1e-12)

    def test_orthogonal_estimate_floored_projection(self):
        value = si_sdr([0.0, 1.0], [1.0, 0.0])
        assert value == 20.0 * np.log10(1e-12 / 1.0)

    @pytest.mark.parametrize("alpha", [0.5, 2.0, 10.0])
    def test_scale_invariance_exact(self, alpha):
        rng = np.random.default_rng(5)
        est, ref = rng.standard_normal(128), rng.standard_normal(128)
        assert si_sdr(alpha * est, ref) == si_sdr(est, ref)

    @pytest.mark.parametrize("beta", [-3.0, 0.25, 7.0])
    def test_reference_scaling_invariance(self, beta):
        rng = np.random.default_rng(6)
        est, ref = rng.standard_normal(64), rng.standard_normal(64)
        assert abs(si_sdr(est, beta * ref) - si_sdr(est, ref)) < 1e-12

    def test_zero_reference_rejected(self):
        with pytest.raises(ParameterError):
            si_sdr([1.0, 2.0], [0.0, 0.0])

    def test_length_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            si_sdr([1.0, 2.0], [1.0])


class TestSnr:
    def test_equal_power_is_zero_db(self):
        x = np.ones(100)
        assert abs(snr(x, x)) < 1e-12

    def test_ten_db(self):
        signal = np.full(10, np.sqrt(10.0))
        noise = np.ones(10)
        assert abs(snr(signal, noise) - 10.0) < 1e-12

    def test_silent_signal_floored(self):
        assert snr(np.zeros(8), np.ones(8)) == -120.0

    def test_zero_noise_rejected(self):
        with pytest.raises(ParameterError):
            snr(np.ones(8), np.zeros(8))

    def test_common_scaling_invariance(self):
        rng = np.random.default_rng(7)
        x, n = rng.standard_normal(50), rng.standard_normal(50)
        assert snr(3.7 * x, 3.7 * n) == snr(x, n)


class TestReconstructionError:
    def test_identical_is_zero(self):
        x = np.random.default_rng(8).standard_normal(100)
        assert reconstruction_error(x, x) == (0.0, 0.0)

    def test_uniform_offset(self):
        x = np.random.default_rng(9).standard_normal(16000)
        x /= np.linalg.norm(x)
        max_abs, _ = reconstruction_error(x, x + 1e-9)
        assert abs(max_abs - 1e-9) < 1e-15

    def test_zero_estimate_rel_one(self):
        x = np.random.default_rng(10).standard_normal(64)
        _, rel = reconstruction_error(x, np.zeros(64))
        assert abs(rel - 1.0) < 1e-12


class TestMetricsCsv:
    def test_rows_and_mean(self, tmp_path):
        out = tmp_path / "m.csv"
        rows = [
            ("a.wav", EvalReport(si_sdr_db=10.0, si_sdr_improvement_db=5.0)),
            ("b.wav", EvalReport(si_sdr_db=20.0)),
        ]
        write_metrics_csv(out, rows)
        lines = out.read_text().splitlines()
        assert lines[0] == "file,si_sdr_db,si_sdr_imp_db,snr_db,max_abs_err,rel_l2_err"
        assert lines[1].startswith("a.wav,10,5,")
        assert lines[3].split(",")[0] == "MEAN"
        assert lines[3].split(",")[1] == "15"
        assert lines[3].split(",")[3] == ""  # snr absent everywhere
