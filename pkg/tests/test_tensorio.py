import struct
import zlib

import numpy as np
import pytest

from gluq.errors import ConfigError, CorruptFile
from gluq.glu_net import GLUNetConfig, build_model
from gluq.random_field import ExpKernel, Grid2D, kle_decompose
from gluq.tensorio import (
    decode_tensor,
    encode_tensor,
    load_basis,
    load_checkpoint,
    load_dataset,
    read_tensor,
    save_basis,
    save_checkpoint,
    save_dataset,
    write_tensor,
)


class TestTensorFile:
    def test_round_trip_bitwise(self, tmp_path):
        a = np.random.default_rng(0).standard_normal((3, 65, 65))
        write_tensor(tmp_path / "a.gluq", a)
        b = read_tensor(tmp_path / "a.gluq")
        assert b.shape == a.shape and b.tobytes() == a.tobytes()

    def test_layout(self):
        a = np.arange(6.0).reshape(2, 3)
        blob = encode_tensor(a)
        assert blob[:5] == b"GLUQ1"
        assert struct.unpack_from("<I", blob, 5) == (2,)
        assert struct.unpack_from("<2Q", blob, 9) == (2, 3)
        assert blob[25] == 1
        payload = blob[26:-4]
        assert payload == a.astype("<f8").tobytes()
        assert struct.unpack("<I", blob[-4:])[0] == zlib.crc32(payload)

    def test_scalar(self, tmp_path):
        write_tensor(tmp_path / "s.gluq", np.float64(2.5))
        s = read_tensor(tmp_path / "s.gluq")
        assert s.shape == () and s == 2.5

    def test_empty_dim(self):
        e = decode_tensor(encode_tensor(np.zeros((4, 0))))
        assert e.shape == (4, 0)

    def test_truncated(self, tmp_path):
        blob = encode_tensor(np.ones((5, 5)))
        for cut in (3, 7, 20, len(blob) - 1):
            (tmp_path / "t.gluq").write_bytes(blob[:cut])
            with pytest.raises(CorruptFile):
                read_tensor(tmp_path / "t.gluq")

    def test_flipped_payload_bit(self):
        blob = bytearray(encode_tensor(np.ones(4)))
        blob[20] ^= 0x01
        with pytest.raises(CorruptFile, match="checksum"):
            decode_tensor(bytes(blob))

    def test_bad_magic_and_missing(self, tmp_path):
        with pytest.raises(CorruptFile, match="magic"):
            decode_tensor(b"NOPE1" + b"\0" * 20)
        with pytest.raises(CorruptFile):
            read_tensor(tmp_path / "absent.gluq")


class TestBundles:
    def test_basis(self, tmp_path):
        basis = kle_decompose(Grid2D(9), ExpKernel(), 5)
        save_basis(tmp_path / "b", basis)
        back = load_basis(tmp_path / "b")
        assert back.eigenvectors.tobytes() == basis.eigenvectors.tobytes()
        assert back.kernel == basis.kernel and back.grid == basis.grid

    def test_dataset_kind_checked(self, tmp_path):
        rng = np.random.default_rng(1)
        save_dataset(tmp_path / "d", rng.random((2, 5, 5)), rng.random((2, 3, 5, 5)), rng.random((2, 4)))
        K, Y, Z, meta = load_dataset(tmp_path / "d")
        assert Y.shape == (2, 3, 5, 5) and meta["count"] == 2
        with pytest.raises(ConfigError):
            load_basis(tmp_path / "d")

    def test_tampered_file_detected(self, tmp_path):
        save_dataset(tmp_path / "d", np.ones((2, 3, 3)), np.ones((2, 3, 3, 3)), np.ones((2, 1)))
        write_tensor(tmp_path / "d" / "K.gluq", np.full((2, 3, 3), 2.0))
        with pytest.raises(CorruptFile, match="manifest"):
            load_dataset(tmp_path / "d")

    def test_checkpoint_restores_model(self, tmp_path):
        cfg = GLUNetConfig(channels=(2, 3), bottleneck=4, grid=17, gln_width=3, gln_neurons=2, gln_m=2)
        model = build_model(cfg, seed=5)
        model.buffers["enc0.bn1.mean"][:] = 0.25
        model.norm = {"k_mean": 0.0, "k_std": 1.0, "y_mean": [0, 0, 0], "y_std": [1, 1, 1]}
        save_checkpoint(tmp_path / "m", model)
        back, meta = load_checkpoint(tmp_path / "m")
        x = np.random.default_rng(2).standard_normal((2, 1, 17, 17))
        assert back.forward(x).Y.data.tobytes() == model.forward(x).Y.data.tobytes()
        assert back.norm == model.norm and meta["config"]["grid"] == 17
        # the GGLN layer must still see optimiser writes to the table
        back.params["uq.ggln.w"].data[0, 0, 0] = 7.0
        assert back.gln.weights[0, 0, 0] == 7.0
