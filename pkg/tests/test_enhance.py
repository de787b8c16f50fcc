"""Masking, SI-SDR gradients, the training chain, and checkpoints."""
import numpy as np
import pytest

from conftest import mix_to_snr, speech_like, white_noise
from graphspeech.enhance import (
    AdamState,
    Mask,
    MlpParams,
    TrainConfig,
    apply_mask,
    enhance_pipeline,
    estimator_mask_source,
    init_mlp_params,
    load_checkpoint,
    mlp_forward,
    oracle_mask_source,
    oracle_ratio_mask,
    rms_normalized_features,
    save_checkpoint,
    si_sdr_value_and_grad,
    train_step,
    unity_mask_source,
    zero_mask_source,
)
from graphspeech.errors import (
    DimensionError,
    FingerprintMismatchError,
    MalformedHeaderError,
    NumericalDivergenceError,
    ParameterError,
)
from graphspeech.framing import FramingConfig, frame_signal
from graphspeech.graph_basis import build_adjacency, decompose_svd
from graphspeech.metrics import si_sdr
from graphspeech.transform import analyze, gft_svd_forward

# small geometry keeps the matrix work light; properties are size-independent
SMALL_CFG = FramingConfig(sample_rate=16000, window_len=48, hop=16, transform_len=64)


@pytest.fixture(scope="module")
def basis64():
    return decompose_svd(build_adjacency(64, 3))


def small_spec(seed, basis, length=1200):
    x = np.random.default_rng(seed).standard_normal(length)
    return analyze(x, SMALL_CFG, basis), x


class TestApplyMask:
    def test_unity_mask_is_identity(self, basis64):
        spec, _ = small_spec(0, basis64)
        mask = Mask(values=np.ones_like(spec.coeffs))
        out = apply_mask(mask, spec)
        assert np.array_equal(out.coeffs, spec.coeffs)
        assert out.basis_fingerprint == spec.basis_fingerprint

    def test_zero_mask_silences(self, basis64):
        spec, _ = small_spec(1, basis64)
        out = apply_mask(Mask(values=np.zeros_like(spec.coeffs)), spec)
        assert not out.coeffs.any()

    def test_halving(self, basis64):
        spec, _ = small_spec(2, basis64)
        out = apply_mask(Mask(values=np.full_like(spec.coeffs, 0.5)), spec)
        assert np.max(np.abs(out.coeffs - 0.5 * spec.coeffs)) < 1e-15

    def test_shape_mismatch_rejected(self, basis64):
        spec, _ = small_spec(3, basis64)
        with pytest.raises(DimensionError):
            apply_mask(Mask(values=np.ones((2, 64))), spec)

    def test_fingerprint_mismatch_rejected(self, basis64):
        spec, _ = small_spec(4, basis64)
        mask = Mask(values=np.ones_like(spec.coeffs), basis_fingerprint="deadbeef")
        with pytest.raises(FingerprintMismatchError):
            apply_mask(mask, spec)

    def test_bilinearity(self, basis64):
        spec, _ = small_spec(5, basis64)
        m = np.random.default_rng(6).standard_normal(spec.coeffs.shape)
        doubled_mask = apply_mask(Mask(values=2.0 * m), spec).coeffs
        base = apply_mask(Mask(values=m), spec).coeffs
        assert np.max(np.abs(doubled_mask - 2.0 * base)) < 1e-12


class TestOracleRatioMask:
    def _specs(self, basis, s_val, y_val):
        frames = frame_signal(np.ones(200), SMALL_CFG)
        noisy = gft_svd_forward(frames, basis)
        clean = gft_svd_forward(frames, basis)
        s = np.full_like(noisy.coeffs, s_val)
        y = np.full_like(noisy.coeffs, y_val)
        from dataclasses import replace

        return replace(clean, coeffs=s), replace(noisy, coeffs=y)

    def test_plain_ratio(self, basis64):
        clean, noisy = self._specs(basis64, 0.5, 1.0)
        mask = oracle_ratio_mask(clean, noisy, clip=2.0)
        assert np.max(np.abs(mask.values - 0.5)) < 1e-7

    def test_clipping(self, basis64):
        clean, noisy = self._specs(basis64, 3.0, 1.0)
        mask = oracle_ratio_mask(clean, noisy, clip=2.0)
        assert np.max(mask.values) == 2.0

    def test_equal_inputs_give_unity_mask(self, basis64):
        spec, _ = small_spec(7, basis64)
        mask = oracle_ratio_mask(spec, spec, clip=2.0)
        significant = np.abs(spec.coeffs) > 1e-2
        assert np.max(np.abs(mask.values[significant] - 1.0)) < 1e-6

    def test_fingerprint_mismatch_rejected(self, basis64):
        spec, _ = small_spec(8, basis64)
        other = decompose_svd(build_adjacency(64, 5))
        other_spec, _ = small_spec(8, other)
        with pytest.raises(FingerprintMismatchError):
            oracle_ratio_mask(spec, other_spec)


class TestMlpForward:
    def test_zero_params_give_zero_mask(self):
        params = MlpParams(
            w1=np.zeros((8, 16)),
            b1=np.zeros(8),
            w2=np.zeros((16, 8)),
            b2=np.zeros(16),
            out_scale=2.0,
        )
        mask = mlp_forward(params, np.random.default_rng(0).standard_normal((5, 16)))
        assert not mask.values.any()

    def test_output_bounded_by_scale(self):
        params = init_mlp_params(sizes=(16, 8, 16), out_scale=2.0, seed=1)
        feats = 100.0 * np.random.default_rng(1).standard_normal((40, 16))
        mask = mlp_forward(params, feats)
        assert np.max(np.abs(mask.values)) <= 2.0

    def test_deterministic(self):
        params = init_mlp_params(sizes=(16, 8, 16), seed=2)
        feats = np.random.default_rng(2).standard_normal((7, 16))
        m1 = mlp_forward(params, feats)
        m2 = mlp_forward(params, feats)
        assert np.array_equal(m1.values, m2.values)

    def test_initial_mask_is_passthrough(self):
        params = init_mlp_params(sizes=(16, 8, 16), out_scale=2.0, seed=3)
        feats = np.random.default_rng(3).standard_normal((4, 16))
        mask = mlp_forward(params, feats)
        assert np.max(np.abs(mask.values - 1.0)) < 0.05

    def test_dimension_mismatch_rejected(self):
        params = init_mlp_params(sizes=(16, 8, 16), seed=4)
        with pytest.raises(DimensionError):
            mlp_forward(params, np.zeros((3, 17)))


class TestSiSdrGradient:
    def test_hand_case(self):
        value, grad = si_sdr_value_and_grad(np.array([1.0, 1.0]), np.array([1.0, 0.0]))
        assert abs(value) < 1e-12
        assert grad.shape == (2,)

    def test_scale_invariance(self):
        rng = np.random.default_rng(11)
        est, ref = rng.standard_normal(100), rng.standard_normal(100)
        v1, _ = si_sdr_value_and_grad(est, ref)
        v2, _ = si_sdr_value_and_grad(2.0 * est, ref)
        assert v1 == v2

    @pytest.mark.parametrize("seed", range(10))
    def test_gradient_matches_central_differences(self, seed):
        rng = np.random.default_rng(seed)
        est = rng.standard_normal(256)
        ref = rng.standard_normal(256)
        _, grad = si_sdr_value_and_grad(est, ref)
        h = 1e-6
        idx = rng.integers(0, 256, size=12)
        for i in idx:
            plus, minus = est.copy(), est.copy()
            plus[i] += h
            minus[i] -= h
            fd = (si_sdr(plus, ref) - si_sdr(minus, ref)) / (2 * h)
            rel = abs(fd - grad[i]) / max(abs(fd), abs(grad[i]), 1e-12)
            assert rel < 1e-4

    def test_zero_reference_rejected(self):
        with pytest.raises(ParameterError):
            si_sdr_value_and_grad(np.ones(4), np.zeros(4))

    def test_length_mismatch_rejected(self):
        with pytest.raises(DimensionError):
            si_sdr_value_and_grad(np.ones(4), np.ones(5))


def make_utterance(seed, length=1600):
    clean = speech_like(seed, length)
    noisy = mix_to_snr(clean, white_noise(seed + 100, length), 0.0)
    return noisy, clean


class TestTrainStep:
    def test_full_chain_gradient_matches_finite_differences(self, basis64):
        noisy, clean = make_utterance(20)
        params = init_mlp_params(sizes=(64, 24, 64), seed=5)
        from graphspeech.enhance import _estimator_forward_backward

        loss, grads = _estimator_forward_backward(params, noisy, clean, basis64, SMALL_CFG)
        rng = np.random.default_rng(21)
        h = 1e-6
        checked = 0
        while checked < 8:
            pi = int(rng.integers(0, 4))
            arrays = [a.copy() for a in params.arrays()]
            idx = tuple(int(rng.integers(0, s)) for s in arrays[pi].shape)

            def loss_at(delta):
                perturbed = [a.copy() for a in arrays]
                perturbed[pi][idx] += delta
                p = MlpParams(*perturbed, out_scale=params.out_scale, seed=params.seed)
                val, _ = _estimator_forward_backward(p, noisy, clean, basis64, SMALL_CFG)
                return val

            fd = (loss_at(h) - loss_at(-h)) / (2 * h)
            analytic = grads[pi][idx]
            if max(abs(fd), abs(analytic)) < 1e-12:
                continue  # dead relu coordinate, no signal to compare
            rel = abs(fd - analytic) / max(abs(fd), abs(analytic))
            assert rel < 1e-3
            checked += 1

    def test_loss_sequence_bitwise_reproducible(self, basis64):
        noisy, clean = make_utterance(22)
        cfg = TrainConfig(steps=20, seed=9)

        def run():
            params = init_mlp_params(sizes=(64, 24, 64), seed=9)
            state = AdamState.zeros_like(params)
            losses = []
            for _ in range(cfg.steps):
                params, state, loss = train_step(
                    params, state, noisy, clean, basis64, SMALL_CFG, cfg
                )
                losses.append(loss)
            return losses, params

        losses1, params1 = run()
        losses2, params2 = run()
        assert losses1 == losses2
        assert params1.w1.tobytes() == params2.w1.tobytes()

    def test_training_improves_over_mixture(self, basis64):
        noisy, clean = make_utterance(23)
        baseline = si_sdr(noisy, clean)
        cfg = TrainConfig(steps=60, seed=10)
        params = init_mlp_params(sizes=(64, 24, 64), seed=10)
        state = AdamState.zeros_like(params)
        for _ in range(cfg.steps):
            params, state, loss = train_step(
                params, state, noisy, clean, basis64, SMALL_CFG, cfg
            )
        enhanced = enhance_pipeline(
            noisy, basis64, estimator_mask_source(params), SMALL_CFG
        )
        assert si_sdr(enhanced, clean) > baseline

    def test_returns_pre_update_loss(self, basis64):
        noisy, clean = make_utterance(24)
        params = init_mlp_params(sizes=(64, 24, 64), seed=11)
        state = AdamState.zeros_like(params)
        # pass-through init means the first loss is -si_sdr(noisy-ish, clean)
        _, _, loss = train_step(
            params, state, noisy, clean, basis64, SMALL_CFG, TrainConfig(steps=1)
        )
        assert abs(-loss - si_sdr(noisy, clean)) < 0.5

    def test_divergent_parameters_detected(self, basis64):
        noisy, clean = make_utterance(25)
        params = init_mlp_params(sizes=(64, 24, 64), seed=12)
        huge = MlpParams(
            w1=params.w1 * 1e200,
            b1=params.b1,
            w2=params.w2 * 1e200,
            b2=params.b2,
            out_scale=params.out_scale,
            seed=params.seed,
        )
        state = AdamState.zeros_like(huge)
        with pytest.raises((NumericalDivergenceError, ParameterError)):
            train_step(huge, state, noisy, clean, basis64, SMALL_CFG, TrainConfig(steps=1))


class TestEnhancePipeline:
    def test_unity_mask_round_trip(self, basis64):
        noisy, _ = make_utterance(30)
        out = enhance_pipeline(noisy, basis64, unity_mask_source(), SMALL_CFG)
        assert out.shape == noisy.shape
        assert np.max(np.abs(out - noisy)) < 1e-8

    def test_zero_mask_gives_silence(self, basis64):
        noisy, _ = make_utterance(31)
        out = enhance_pipeline(noisy, basis64, zero_mask_source(), SMALL_CFG)
        assert not out.any()

    def test_unclipped_oracle_exact_on_proportional_mixture(self, basis64):
        # noise == clean keeps the ratio denominator proportional to the
        # numerator, so the eps guard contributes at most eps/2 per entry
        clean = speech_like(32, 1600)
        noisy = 2.0 * clean
        out = enhance_pipeline(
            noisy, basis64, oracle_mask_source(clean, clip=None), SMALL_CFG
        )
        assert np.max(np.abs(out - clean)) < 1e-5

    def test_clipped_oracle_never_hurts_on_fixtures(self, basis64):
        for seed in range(5):
            noisy, clean = make_utterance(40 + seed)
            out = enhance_pipeline(
                noisy, basis64, oracle_mask_source(clean, clip=2.0), SMALL_CFG
            )
            assert si_sdr(out, clean) >= si_sdr(noisy, clean)

    def test_output_length_matches_input(self, basis64):
        for length in (100, 999, 1600):
            noisy = white_noise(50, length)
            out = enhance_pipeline(noisy, basis64, unity_mask_source(), SMALL_CFG)
            assert out.shape == (length,)


class TestCheckpoint:
    def test_round_trip_bit_exact(self, tmp_path, basis64):
        params = init_mlp_params(sizes=(64, 24, 64), out_scale=1.5, seed=77)
        path = tmp_path / "model.gftm"
        save_checkpoint(path, params, basis64.fingerprint)
        loaded, fp = load_checkpoint(path, basis=basis64)
        assert fp == basis64.fingerprint
        assert loaded.out_scale == params.out_scale
        assert loaded.seed == params.seed
        for a, b in zip(loaded.arrays(), params.arrays()):
            assert a.tobytes() == b.tobytes()

    def test_fingerprint_mismatch_rejected(self, tmp_path, basis64):
        params = init_mlp_params(sizes=(64, 24, 64), seed=1)
        path = tmp_path / "model.gftm"
        save_checkpoint(path, params, basis64.fingerprint)
        other = decompose_svd(build_adjacency(64, 5))
        with pytest.raises(FingerprintMismatchError):
            load_checkpoint(path, basis=other)

    def test_corrupted_payload_rejected(self, tmp_path, basis64):
        params = init_mlp_params(sizes=(64, 24, 64), seed=2)
        path = tmp_path / "model.gftm"
        save_checkpoint(path, params, basis64.fingerprint)
        data = bytearray(path.read_bytes())
        data[60] ^= 0x01
        path.write_bytes(bytes(data))
        with pytest.raises(FingerprintMismatchError):
            load_checkpoint(path)

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "model.gftm"
        path.write_bytes(b"NOPE" + b"\x00" * 100)
        with pytest.raises(MalformedHeaderError):
            load_checkpoint(path)


class TestFeatureNormalization:
    def test_rms_scaling_makes_features_level_invariant(self, basis64):
        noisy, _ = make_utterance(60)
        spec, _ = small_spec(60, basis64)
        f1 = rms_normalized_features(spec.coeffs, noisy)
        f2 = rms_normalized_features(10.0 * spec.coeffs, 10.0 * noisy)
        assert np.max(np.abs(f1 - f2)) < 1e-10
