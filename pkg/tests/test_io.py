import numpy as np
import pytest

from stereonav import io as sw_io
from stereonav.errors import FormatError


class TestFeatureContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(0)
        frames = [rng.standard_normal((3, 4, 5)) for _ in range(2)]
        path = tmp_path / "f.swft"
        sw_io.save_features(path, frames)
        loaded = sw_io.load_features(path)
        assert loaded.shape == (2, 3, 4, 5)
        np.testing.assert_array_equal(loaded[0], frames[0])
        np.testing.assert_array_equal(loaded[1], frames[1])

    def test_header_layout(self):
        blob = sw_io.encode_features([np.zeros((2, 3, 4))])
        assert blob[:4] == b"SWFT"
        assert len(blob) == 4 + 4 * 5 + 2 * 3 * 4 * 8

    def test_bad_magic(self):
        blob = bytearray(sw_io.encode_features([np.zeros((1, 1, 1))]))
        blob[1] ^= 0x01
        with pytest.raises(FormatError) as e:
            sw_io.decode_features(bytes(blob))
        assert e.value.offset == 0

    def test_truncation_offset(self):
        blob = sw_io.encode_features([np.zeros((2, 2, 2))])
        with pytest.raises(FormatError) as e:
            sw_io.decode_features(blob[:-3])
        assert e.value.offset is not None

    def test_trailing_garbage(self):
        blob = sw_io.encode_features([np.zeros((1, 1, 1))]) + b"xx"
        with pytest.raises(FormatError):
            sw_io.decode_features(blob)

    def test_mixed_shapes_rejected(self):
        with pytest.raises(ValueError):
            sw_io.encode_features([np.zeros((2, 2, 2)), np.zeros((2, 2, 3))])


class TestCheckpointContainer:
    def test_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        cfg = {"heads": 4, "name": "desk"}
        named = [("layer.W", rng.standard_normal((3, 3))), ("layer.b", rng.standard_normal(3)),
                 ("scalar", np.float64(2.5))]
        path = tmp_path / "m.swck"
        sw_io.save_checkpoint(path, cfg, named)
        cfg2, named2 = sw_io.load_checkpoint(path)
        assert cfg2 == cfg
        assert [n for n, _ in named2] == ["layer.W", "layer.b", "scalar"]
        for (_, a), (_, b) in zip(named, named2):
            np.testing.assert_array_equal(np.asarray(a), b)

    def test_bitwise_stable(self, tmp_path):
        cfg = {"a": 1}
        named = [("w", np.arange(6, dtype=np.float64).reshape(2, 3))]
        b1 = sw_io.encode_checkpoint(cfg, named)
        b2 = sw_io.encode_checkpoint(cfg, named)
        assert b1 == b2

    def test_corrupt_magic(self):
        blob = bytearray(sw_io.encode_checkpoint({}, []))
        blob[0] = 0x00
        with pytest.raises(FormatError):
            sw_io.decode_checkpoint(bytes(blob))

    def test_bad_version(self):
        blob = bytearray(sw_io.encode_checkpoint({}, []))
        blob[4] = 99
        with pytest.raises(FormatError) as e:
            sw_io.decode_checkpoint(bytes(blob))
        assert e.value.offset == 4


def test_atomic_write_leaves_no_temp(tmp_path):
    sw_io.save_features(tmp_path / "a.swft", [np.zeros((1, 1, 1))])
    leftovers = [p for p in tmp_path.iterdir() if p.name.startswith(".swtmp")]
    assert leftovers == []
