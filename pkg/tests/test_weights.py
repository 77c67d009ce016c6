"""Weight bundle serialization and validation."""

import numpy as np
import pytest

from sdd.errors import FormatError
from sdd.nn.model import StageKind, random_bundle, toy_config
from sdd.nn.weights import WeightsBundle, load_weights, save_weights


def small_bundle():
    rng = np.random.default_rng(9)
    return WeightsBundle(
        tensors={
            "a.w": rng.normal(size=(3, 4)).astype(np.float32),
            "a.b": rng.normal(size=(3,)).astype(np.float32),
            "deep.nested.t": rng.normal(size=(2, 2, 2)).astype(np.float32),
        },
        fingerprint="deadbeef",
    )


class TestRoundTrip:
    def test_lossless(self):
        bundle = small_bundle()
        back = load_weights(save_weights(bundle))
        assert back.fingerprint == "deadbeef"
        assert back.names() == bundle.names()
        for name in bundle.names():
            np.testing.assert_array_equal(back.tensors[name], bundle.tensors[name])

    def test_byte_stable(self):
        bundle = small_bundle()
        assert save_weights(bundle) == save_weights(load_weights(save_weights(bundle)))

    def test_full_config_round_trip(self):
        cfg = toy_config(StageKind.REFINE)
        bundle = random_bundle(cfg, seed=3)
        back = load_weights(save_weights(bundle))
        back.validate_against(cfg.tensor_spec())
        for name in bundle.names():
            np.testing.assert_array_equal(back.tensors[name], bundle.tensors[name])


class TestCorruption:
    def test_truncated_payload(self):
        data = save_weights(small_bundle())
        with pytest.raises(FormatError, match="truncated"):
            load_weights(data[:-3])

    def test_bad_magic(self):
        data = b"XXXX" + save_weights(small_bundle())[4:]
        with pytest.raises(FormatError, match="magic"):
            load_weights(data)

    def test_bad_version(self):
        data = bytearray(save_weights(small_bundle()))
        data[4] = 99
        with pytest.raises(FormatError, match="version"):
            load_weights(bytes(data))

    def test_trailing_garbage(self):
        data = save_weights(small_bundle()) + b"\x00\x01"
        with pytest.raises(FormatError, match="trailing"):
            load_weights(data)


class TestValidation:
    def test_mis_shaped_tensor_named(self):
        cfg = toy_config(StageKind.DENOISE)
        bundle = random_bundle(cfg)
        bundle.tensors["enc2.conv.w"] = bundle.tensors["enc2.conv.w"][:, :1]
        with pytest.raises(FormatError, match="enc2.conv.w"):
            bundle.validate_against(cfg.tensor_spec())

    def test_missing_and_extra(self):
        cfg = toy_config(StageKind.DENOISE)
        bundle = random_bundle(cfg)
        del bundle.tensors["enc0.conv.b"]
        bundle.tensors["rogue"] = np.zeros(1, dtype=np.float32)
        with pytest.raises(FormatError) as exc:
            bundle.validate_against(cfg.tensor_spec())
        assert "enc0.conv.b" in str(exc.value) and "rogue" in str(exc.value)

    def test_missing_get(self):
        with pytest.raises(FormatError, match="nope"):
            small_bundle().get("nope")
