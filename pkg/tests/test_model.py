"""Model assembly: shapes, variants, parameter counts, weight files."""

import numpy as np
import pytest

from hfw import model, ops, weights_io
from hfw.autodiff import Tape, backward


@pytest.fixture
def rng():
    return np.random.default_rng(31)


def tiny(variant="hf_residual", depth=4):
    return model.model_config(preset="tiny", depth=depth, skip_variant=variant)


class TestConfig:
    def test_vgg19_block_widths(self):
        cfg = model.model_config(preset="vgg19")
        assert cfg.tap_channels(1) == 64
        assert cfg.tap_channels(2) == 128
        assert cfg.tap_channels(3) == 256
        assert cfg.tap_channels(4) == 512
        assert len(cfg.blocks[3].outer) == 3

    def test_depth_three_drops_last_pair(self):
        cfg = model.model_config(preset="vgg19", depth=3)
        assert len(cfg.blocks) == 3
        assert cfg.tap_channels(3) == 256

    def test_validation(self):
        with pytest.raises(ValueError, match="preset"):
            model.model_config(preset="resnet")
        with pytest.raises(ValueError, match="depth"):
            model.model_config(depth=5)
        with pytest.raises(ValueError, match="skip variant"):
            model.model_config(skip_variant="identity")
        with pytest.raises(ValueError, match="precision"):
            model.model_config(precision="half")
        bad = (model.BlockSpec(outer=((3, 8),), pooled=False, inner=()),
               model.BlockSpec(outer=((16, 16),), pooled=True, inner=((16, 32),)),
               model.BlockSpec(outer=((32, 32),), pooled=True, inner=((32, 64),)))
        with pytest.raises(ValueError, match="channel chain"):
            model.model_config(preset="custom", depth=3, blocks=bad)


class TestEncodeDecodeShapes:
    @pytest.mark.parametrize("variant", model.SKIP_VARIANTS)
    def test_tap_shapes_and_roundtrip_shape(self, rng, variant):
        cfg = tiny(variant)
        w = model.init_weights(cfg, seed=0)
        x = rng.random((2, 3, 32, 32))
        z, taps, skips = model.encode(x, cfg, w)
        assert z.shape == (2, 64, 4, 4)
        assert taps[1].shape == (2, 8, 32, 32)
        assert taps[2].shape == (2, 16, 16, 16)
        assert taps[3].shape == (2, 32, 8, 8)
        assert sorted(skips) == [2, 3, 4]
        y = model.decode(z, skips, cfg, w)
        assert y.shape == x.shape

    @pytest.mark.parametrize("variant", model.SKIP_VARIANTS)
    def test_odd_sizes_flow_through(self, rng, variant):
        cfg = tiny(variant)
        w = model.init_weights(cfg, seed=0)
        x = rng.random((1, 3, 37, 41))
        z, _, skips = model.encode(x, cfg, w)
        y = model.decode(z, skips, cfg, w)
        assert y.shape == x.shape

    def test_depth_three(self, rng):
        cfg = tiny(depth=3)
        w = model.init_weights(cfg, seed=0)
        x = rng.random((1, 3, 24, 24))
        z, taps, skips = model.encode(x, cfg, w)
        assert z.shape == (1, 32, 6, 6)
        assert model.decode(z, skips, cfg, w).shape == x.shape

    def test_partial_encode_and_block_decode(self, rng):
        cfg = tiny()
        w = model.init_weights(cfg, seed=0)
        x = rng.random((1, 3, 16, 16))
        z2, taps, skips = model.encode(x, cfg, w, upto=2)
        assert z2.shape == (1, 16, 8, 8)
        back = model.decode_block(2, z2, skips, cfg, w)
        assert back.shape == taps[1].shape

    def test_capture_skips_false_matches_trunk(self, rng):
        for variant in model.SKIP_VARIANTS:
            cfg = tiny(variant)
            w = model.init_weights(cfg, seed=0)
            x = rng.random((1, 3, 16, 16))
            z1, _, skips = model.encode(x, cfg, w, capture_skips=True)
            z2, _, none = model.encode(x, cfg, w, capture_skips=False)
            np.testing.assert_array_equal(z1, z2)
            assert none == {}

    def test_missing_payload_errors(self, rng):
        cfg = tiny()
        w = model.init_weights(cfg, seed=0)
        x = rng.random((1, 3, 16, 16))
        z, _, skips = model.encode(x, cfg, w)
        del skips[3]
        with pytest.raises(ValueError, match="missing skip payload for level 3"):
            model.decode(z, skips, cfg, w)

    def test_wrong_payload_type_errors(self, rng):
        cfg = tiny("hf_residual")
        cfg_w = tiny("wavelet_concat")
        w = model.init_weights(cfg_w, seed=0)
        x = rng.random((1, 3, 16, 16))
        _, _, skips_hf = model.encode(x, tiny("hf_residual"), model.init_weights(cfg, 0))
        z, _, _ = model.encode(x, cfg_w, w)
        with pytest.raises(ValueError, match="expected WaveletBands"):
            model.decode(z, skips_hf, cfg_w, w)

    def test_bad_image_shape(self):
        cfg = tiny()
        w = model.init_weights(cfg, seed=0)
        with pytest.raises(ValueError, match="images"):
            model.encode(np.zeros((1, 4, 8, 8)), cfg, w)


class TestMergeChannelArithmetic:
    def test_wavelet_merge_feeds_4c_conv(self):
        cfg = tiny("wavelet_concat")
        shapes = model.param_shapes(cfg)
        # decoder block 2: conv0 inverts the inner conv, conv1 sits after the
        # merge and must accept four band groups
        assert shapes["dec2.conv1.weight"] == (8, 32, 3, 3)
        hf = model.param_shapes(tiny("hf_residual"))
        assert hf["dec2.conv1.weight"] == (8, 8, 3, 3)

    def test_decoder_mirrors_encoder(self):
        cfg = model.model_config(preset="vgg19")
        shapes = model.param_shapes(cfg)
        assert shapes["dec4.conv0.weight"] == (256, 512, 3, 3)
        assert shapes["dec4.conv3.weight"] == (256, 256, 3, 3)
        assert shapes["dec1.conv0.weight"] == (3, 64, 3, 3)


class TestParameterCount:
    def test_vgg19_depth4_band(self):
        pc = model.count_parameters(model.model_config(preset="vgg19"))
        assert pc.total == 7_010_947
        assert 6_900_000 <= pc.total <= 7_100_000
        assert pc.mainstream_layers == 24

    def test_vgg19_depth3_band(self):
        pc = model.count_parameters(model.model_config(preset="vgg19", depth=3))
        assert pc.total == 1_110_403
        assert 1_100_000 <= pc.total <= 1_400_000
        assert pc.mainstream_layers == 14

    def test_wavelet_variant_costs_more(self):
        base = model.count_parameters(tiny("hf_residual")).total
        wav = model.count_parameters(tiny("wavelet_concat")).total
        assert wav > base

    def test_count_matches_actual_arrays(self):
        cfg = tiny()
        w = model.init_weights(cfg, seed=0)
        assert sum(a.size for a in w.values()) == model.count_parameters(cfg).total


class TestInit:
    def test_deterministic_and_float32_exact(self):
        cfg = tiny()
        a = model.init_weights(cfg, seed=5)
        b = model.init_weights(cfg, seed=5)
        c = model.init_weights(cfg, seed=6)
        assert all(a[k].tobytes() == b[k].tobytes() for k in a)
        assert any(a[k].tobytes() != c[k].tobytes() for k in a)
        for k, v in a.items():
            np.testing.assert_array_equal(v.astype(np.float32).astype(np.float64), v)

    def test_encoder_rows_sign_paired(self):
        cfg = tiny()
        w = model.init_weights(cfg, seed=0)["enc1.conv0.weight"].reshape(8, -1)
        np.testing.assert_allclose(w[:4], -w[4:], atol=1e-7)

    def test_single_precision(self):
        cfg = model.model_config(preset="tiny", precision="single")
        w = model.init_weights(cfg, seed=0)
        assert all(v.dtype == np.float32 for v in w.values())


class TestWeightsFile:
    def test_round_trip_bitwise(self, tmp_path, rng):
        cfg = tiny("wavelet_concat")
        w = model.init_weights(cfg, seed=3)
        path = tmp_path / "model.hfw"
        weights_io.save_weights(path, cfg, w)
        cfg2, w2 = weights_io.load_weights(path)
        assert cfg2 == cfg
        assert sorted(w2) == sorted(w)
        for k in w:
            assert w2[k].tobytes() == w[k].tobytes()

    def test_custom_blocks_round_trip(self, tmp_path):
        blocks = (model.BlockSpec(outer=((3, 4),), pooled=False, inner=()),
                  model.BlockSpec(outer=((4, 4),), pooled=True, inner=((4, 6),)),
                  model.BlockSpec(outer=((6, 6),), pooled=True, inner=((6, 10),)))
        cfg = model.model_config(preset="custom", depth=3, blocks=blocks)
        w = model.init_weights(cfg, seed=0)
        path = tmp_path / "custom.hfw"
        weights_io.save_weights(path, cfg, w)
        cfg2, _ = weights_io.load_weights(path)
        assert cfg2.blocks == cfg.blocks

    def test_corruption_detected(self, tmp_path):
        cfg = tiny()
        path = tmp_path / "model.hfw"
        weights_io.save_weights(path, cfg, model.init_weights(cfg, seed=0))
        blob = bytearray(path.read_bytes())
        blob[len(blob) // 2] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(ValueError, match="checksum"):
            weights_io.load_weights(path)

    def test_bad_magic_detected(self, tmp_path):
        path = tmp_path / "noise.hfw"
        path.write_bytes(b"NOPE" + b"\x00" * 32)
        with pytest.raises(ValueError, match="magic"):
            weights_io.load_weights(path)

    def test_mismatched_weights_rejected_on_save(self, tmp_path):
        cfg = tiny()
        w = model.init_weights(cfg, seed=0)
        del w["dec1.conv0.bias"]
        with pytest.raises(ValueError, match="missing"):
            weights_io.save_weights(tmp_path / "x.hfw", cfg, w)


class TestGradientsThroughModel:
    def test_decoder_block_weights_receive_gradients(self, rng):
        cfg = tiny()
        w = model.init_weights(cfg, seed=0)
        x = rng.random((1, 3, 16, 16))
        _, taps, skips = model.encode(x, cfg, w)
        tape = Tape()
        wvars = dict(w)
        names = model.decoder_param_names(cfg, level=4)
        leaves = {n: tape.leaf(w[n], trainable=True) for n in names}
        wvars.update(leaves)
        y = model.decode_block(4, taps[4], skips, cfg, wvars)
        loss = ops.mean_sq(ops.sub(y, taps[3]))
        grads = backward(tape, loss)
        got = [np.abs(grads[leaves[n].id]).max() for n in names]
        assert all(g > 0 for g in got[:2])  # conv weights see signal
