import numpy as np
import pytest

from cmedl import io as cio


class TestTensorContainer:
    @pytest.mark.parametrize("dtype", ["<f4", "<f8", "|u1", "<i4", "<u2", "<i8"])
    def test_roundtrip_dtypes(self, tmp_path, dtype):
        rng = np.random.default_rng(0)
        arr = (rng.uniform(0, 100, (3, 5, 7))).astype(dtype)
        cio.write_tensor(tmp_path / "t.cmdl", arr)
        back = cio.read_tensor(tmp_path / "t.cmdl")
        assert back.dtype == np.dtype(dtype)
        assert np.array_equal(back, arr)

    def test_header_layout(self, tmp_path):
        arr = np.arange(6, dtype="<f4").reshape(2, 3)
        cio.write_tensor(tmp_path / "t.cmdl", arr)
        raw = (tmp_path / "t.cmdl").read_bytes()
        assert raw[:4] == b"CMDL"
        assert len(raw) == 16 + arr.nbytes

    def test_rank_and_dim_limits(self, tmp_path):
        with pytest.raises(ValueError):
            cio.write_tensor(tmp_path / "t.cmdl", np.zeros((2, 2, 2, 2, 2)))

    def test_bad_magic_rejected(self, tmp_path):
        (tmp_path / "x.cmdl").write_bytes(b"XXXX" + b"\0" * 20)
        with pytest.raises(ValueError, match="magic"):
            cio.read_tensor(tmp_path / "x.cmdl")


class TestImage16:
    def test_roundtrip_within_quantization(self, tmp_path):
        rng = np.random.default_rng(1)
        img = rng.uniform(-3.2, 7.7, (32, 32))
        cio.write_image16(tmp_path / "s.png", img, {"modality": "student",
                                                    "case_id": "c0", "slice_index": 0})
        back, sidecar = cio.read_image16(tmp_path / "s.png")
        assert np.abs(back - img).max() <= (img.max() - img.min()) / 65535 + 1e-12
        assert sidecar["modality"] == "student"

    def test_constant_image(self, tmp_path):
        cio.write_image16(tmp_path / "c.png", np.full((4, 4), 2.5), {})
        back, _ = cio.read_image16(tmp_path / "c.png")
        assert np.allclose(back, 2.5)

    def test_mask_roundtrip(self, tmp_path):
        mask = np.arange(16, dtype=np.int64).reshape(4, 4) % 5
        cio.write_mask(tmp_path / "m.png", mask)
        assert np.array_equal(cio.read_mask(tmp_path / "m.png"), mask)

    def test_mask_label_overflow(self, tmp_path):
        with pytest.raises(ValueError):
            cio.write_mask(tmp_path / "m.png", np.full((2, 2), 300))


class TestCheckpointArchive:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        tensors = {
            "net/a/weight": rng.normal(size=(4, 3)).astype("<f4"),
            "net/a/bias": rng.normal(size=(4,)).astype("<f8"),
            "rng/torch": rng.integers(0, 255, 16).astype("|u1"),
        }
        meta = {"epoch": 3, "config_hash": "abc"}
        cio.save_checkpoint(tmp_path / "c.ckpt", meta, tensors)
        meta2, tensors2 = cio.load_checkpoint(tmp_path / "c.ckpt")
        assert meta2 == meta
        assert set(tensors2) == set(tensors)
        for key in tensors:
            assert np.array_equal(tensors2[key], tensors[key])
            assert tensors2[key].dtype == tensors[key].dtype

    def test_not_a_checkpoint(self, tmp_path):
        (tmp_path / "x.ckpt").write_bytes(b"nope")
        with pytest.raises(ValueError):
            cio.load_checkpoint(tmp_path / "x.ckpt")


def test_manifest_roundtrip(tmp_path):
    splits = {"train": ["a", "b"], "val": ["c"], "test": []}
    cio.write_manifest(tmp_path / "m.json", splits)
    assert cio.read_manifest(tmp_path / "m.json") == splits
