"""Four-stage chain: filtering, recoupling, residual identity, causality."""

import numpy as np
import pytest

from sdd import dsp
from sdd.errors import ConfigError
from sdd.nn import layers
from sdd.nn.model import (
    ModelConfig,
    NormRunner,
    StageKind,
    random_bundle,
    stage_forward,
    toy_config,
    zero_final_decoder_layers,
)
from sdd.nn.weights import WeightsBundle
from sdd.pipeline import Engine, mf_filter, recouple_phase

RNG = np.random.default_rng(77)


def tiny_config(stage):
    return ModelConfig(stage=stage, channels=(2, 3, 4, 4, 4), tcm_groups=1,
                       tcm_width=8, tcm_squeeze_channels=4)


def make_engine(config_fn=toy_config, seed=0):
    configs = {k: config_fn(k) for k in StageKind}
    bundles = {k: random_bundle(configs[k], seed=seed + i) for i, k in enumerate(StageKind)}
    return Engine(configs=configs, bundles=bundles)


def mf_oracle(taps, source):
    n_taps, length, bins = taps.shape
    out = np.zeros_like(source)
    for l in range(length):
        for m in range(bins):
            acc = 0.0
            for tau in range(n_taps):
                if l - tau >= 0:
                    acc += taps[tau, l, m] * source[l - tau, m]
            out[l, m] = max(acc, 0.0)
    return out


class TestMfFilter:
    def test_identity_taps(self):
        src = np.abs(RNG.normal(size=(6, 5)))
        taps = np.zeros((5, 6, 5))
        taps[0] = 1.0
        np.testing.assert_array_equal(mf_filter(taps, src), src)

    def test_averaging_taps_steady_state(self):
        src = np.full((10, 3), 5.0)
        taps = np.full((5, 10, 3), 0.2)
        out = mf_filter(taps, src)
        np.testing.assert_allclose(out[4:], 5.0, atol=1e-12)
        assert out[0, 0] == pytest.approx(1.0)  # only one frame available

    def test_matches_nested_loop_oracle(self):
        for trial in range(10):
            rng = np.random.default_rng(trial)
            taps = rng.normal(size=(5, 8, 4))
            src = np.abs(rng.normal(size=(8, 4)))
            np.testing.assert_array_equal(mf_filter(taps, src), mf_oracle(taps, src))

    def test_output_nonnegative(self):
        taps = RNG.normal(size=(5, 12, 7))
        src = np.abs(RNG.normal(size=(12, 7)))
        assert np.all(mf_filter(taps, src) >= 0.0)

    def test_shape_mismatch(self):
        with pytest.raises(ConfigError):
            mf_filter(np.zeros((5, 4, 3)), np.zeros((4, 2)))


class TestRecouplePhase:
    def test_quarter_turn(self):
        out = recouple_phase(np.array([[2.0]]), np.array([[np.pi / 2]]))
        assert abs(out[0, 0] - 2j) < 1e-12

    def test_zero_magnitude(self):
        out = recouple_phase(np.zeros((2, 3)), RNG.normal(size=(2, 3)))
        np.testing.assert_array_equal(out, np.zeros((2, 3), dtype=complex))

    def test_round_trip(self):
        z = RNG.normal(size=(4, 6)) + 1j * RNG.normal(size=(4, 6))
        out = recouple_phase(np.abs(z), np.angle(z))
        np.testing.assert_allclose(np.abs(out), np.abs(z), rtol=1e-12)
        np.testing.assert_allclose(out, z, atol=1e-12)


class TestStages:
    def test_dn_zero_input_is_finite(self):
        eng = make_engine()
        mag, taps = eng.run_dn(np.zeros((20, 161)))
        assert np.all(np.isfinite(mag)) and np.all(np.isfinite(taps))

    def test_dn_causality_with_causal_norm(self):
        eng = make_engine(seed=3)
        x = np.abs(RNG.normal(size=(24, 161)))
        base, _ = eng.run_dn(x, norm="causal")
        for cut in (5, 12, 20):
            x2 = x.copy()
            x2[cut + 1 :] += np.abs(RNG.normal(size=x2[cut + 1 :].shape))
            pert, _ = eng.run_dn(x2, norm="causal")
            np.testing.assert_array_equal(base[: cut + 1], pert[: cut + 1])

    def test_dn_matches_hand_composed_layers(self):
        # Re-assemble the forward pass from the primitive kernels.
        cfg = tiny_config(StageKind.DENOISE)
        bundle = random_bundle(cfg, seed=5)
        x = np.abs(np.random.default_rng(6).normal(size=(1, 3, 161)))
        got = stage_forward(cfg, bundle, x, "utterance")[0]

        g = bundle.get
        h = x
        skips = []
        for i in range(5):
            h = layers.conv2d_causal(h, g(f"enc{i}.conv.w"), g(f"enc{i}.conv.b"), 2, 1)
            h = layers.instance_norm(h, g(f"enc{i}.norm.gamma"), g(f"enc{i}.norm.beta"))
            h = layers.prelu(h, g(f"enc{i}.prelu.alpha"))
            skips.append(h)
        flat = h.transpose(0, 2, 1).reshape(-1, 3)
        t = layers.dense(flat, g("bneck.fc_in.w"), g("bneck.fc_in.b"))
        for j, d in enumerate(cfg.tcm_dilations):
            base = f"tcm0.{j}"
            u = layers.dense(t, g(f"{base}.squeeze.w"), g(f"{base}.squeeze.b"))
            u = layers.instance_norm(u, g(f"{base}.norm1.gamma"), g(f"{base}.norm1.beta"))
            u = layers.prelu(u, g(f"{base}.prelu1.alpha"))
            u = layers.conv1d_dilated_causal(u, g(f"{base}.dconv.w"), g(f"{base}.dconv.b"), d)
            u = layers.instance_norm(u, g(f"{base}.norm2.gamma"), g(f"{base}.norm2.beta"))
            u = layers.prelu(u, g(f"{base}.prelu2.alpha"))
            u = layers.dense(u, g(f"{base}.expand.w"), g(f"{base}.expand.b"))
            t = t + u
        t = layers.dense(t, g("bneck.fc_out.w"), g("bneck.fc_out.b"))
        h = t.reshape(cfg.channels[4], cfg.freq_sizes()[5], 3).transpose(0, 2, 1)
        for i in range(5):
            h = np.concatenate([h, skips[4 - i]], axis=0)
            h = layers.deconv2d_causal(h, g(f"dec{i}.deconv.w"), g(f"dec{i}.deconv.b"), 2, 1)
            if i < 4:
                h = layers.instance_norm(h, g(f"dec{i}.norm.gamma"), g(f"dec{i}.norm.beta"))
                h = layers.prelu(h, g(f"dec{i}.prelu.alpha"))
        np.testing.assert_allclose(got, h, atol=1e-12)

    def test_dr_channel_order_matters(self):
        eng = make_engine(seed=9)
        a = np.abs(RNG.normal(size=(10, 161)))
        b = np.abs(RNG.normal(size=(10, 161)))
        out_ab, _ = eng.run_dr(a, b)
        out_ba, _ = eng.run_dr(b, a)
        assert not np.allclose(out_ab, out_ba)

    def test_dr_identity_tap_weights_pass_through(self):
        # All-zero weights plus a unit bias on tap channel 0 make the
        # network emit the identity filter bank.
        cfg = toy_config(StageKind.DEREVERB)
        tensors = {n: np.zeros(s, dtype=np.float32) for n, s in cfg.tensor_spec().items()}
        for name in tensors:
            if name.endswith(".gamma"):
                tensors[name][:] = 1.0
        tensors["dec4.deconv.b"][0] = 1.0
        bundle = WeightsBundle(tensors=tensors)
        eng = Engine(configs={StageKind.DEREVERB: cfg}, bundles={StageKind.DEREVERB: bundle})
        mag_dn = np.abs(RNG.normal(size=(12, 161)))
        noisy = np.abs(RNG.normal(size=(12, 161)))
        out, taps = eng.run_dr(mag_dn, noisy)
        np.testing.assert_allclose(taps[0], 1.0, atol=1e-12)
        np.testing.assert_allclose(taps[1:], 0.0, atol=1e-12)
        np.testing.assert_allclose(out, mag_dn, atol=1e-12)

    def test_sr_residual_identity(self):
        eng = make_engine(seed=11)
        cfg = eng.configs[StageKind.REFINE]
        eng.bundles[StageKind.REFINE] = zero_final_decoder_layers(
            eng.bundles[StageKind.REFINE], cfg)
        z = RNG.normal(size=(8, 161)) + 1j * RNG.normal(size=(8, 161))
        dn = RNG.normal(size=(8, 161)) + 1j * RNG.normal(size=(8, 161))
        dr = RNG.normal(size=(8, 161)) + 1j * RNG.normal(size=(8, 161))
        out = eng.run_sr(dn, dr, z)
        np.testing.assert_array_equal(out, dr)


class TestEnhance:
    def test_zero_signal_zero_output(self):
        eng = make_engine()
        out, outs = eng.enhance(np.zeros(3200), depth=1)
        assert out.shape == (3200,)
        np.testing.assert_array_equal(out, np.zeros(3200))
        assert np.all(outs.mag_dn == 0)

    def test_offline_matches_streaming_with_frozen_stats(self):
        eng = make_engine(seed=2)
        sig = np.random.default_rng(3).normal(0, 0.1, size=12000)
        for depth in (1, 2, 3, 4):
            ref, _ = eng.enhance(sig, depth=depth, mode="offline")
            got, _ = eng.enhance(sig, depth=depth, mode="streaming-offline-stats")
            assert np.max(np.abs(ref - got)) < 1e-5

    def test_depth3_with_zero_sr_equals_depth2(self):
        eng = make_engine(seed=4)
        eng.bundles[StageKind.REFINE] = zero_final_decoder_layers(
            eng.bundles[StageKind.REFINE], eng.configs[StageKind.REFINE])
        sig = np.random.default_rng(5).normal(0, 0.1, size=8000)
        out2, so2 = eng.enhance(sig, depth=2)
        out3, so3 = eng.enhance(sig, depth=3)
        np.testing.assert_array_equal(so3.cplx_sr, so3.cplx_dr)
        assert np.array_equal(out2, out3)

    def test_streaming_chain_is_causal(self):
        eng = make_engine(seed=6)
        rng = np.random.default_rng(7)
        sig = rng.normal(0, 0.1, size=8000)
        base, _ = eng.enhance(sig, depth=4, mode="streaming")
        for cut in (2400, 4800):
            sig2 = sig.copy()
            sig2[cut:] += rng.normal(0, 1.0, size=len(sig) - cut)
            pert, _ = eng.enhance(sig2, depth=4, mode="streaming")
            np.testing.assert_array_equal(base[: cut - 480], pert[: cut - 480])

    def test_missing_weights_rejected(self):
        eng = make_engine()
        del eng.bundles[StageKind.REFINE]
        with pytest.raises(ConfigError, match="sr"):
            eng.enhance(np.ones(3200), depth=3)
        eng.enhance(np.ones(3200), depth=2)  # still fine without stage 3

    def test_bad_depth_rejected(self):
        eng = make_engine()
        with pytest.raises(ConfigError):
            eng.enhance(np.ones(3200), depth=0)
        with pytest.raises(ConfigError):
            eng.enhance(np.ones(3200), depth=5)

    def test_stage_outputs_shapes(self):
        eng = make_engine()
        sig = np.random.default_rng(8).normal(size=4800)
        _, outs = eng.enhance(sig, depth=4)
        frames = 30
        for field in ("mag_dn", "mag_dr", "cplx_dn", "cplx_dr", "cplx_sr", "cplx_pp"):
            value = getattr(outs, field)
            assert value.shape == (frames, 161), field
        assert np.all(outs.mag_dn >= 0) and np.all(outs.mag_dr >= 0)
