import numpy as np
import pytest

from physgan_lab.checkpoint import MAGIC, load_checkpoint, save_checkpoint
from physgan_lab.errors import ConfigurationError, IngestionError
from physgan_lab.tensor import Tensor


class TestCheckpoint:
    def test_round_trip_is_exact(self, tmp_path, rng):
        """Test float64 arrays and meta come back unchanged."""
        arrays = {"a": rng.normal(size=(2, 3)), "b": Tensor(rng.normal(size=4)), "s": np.array(1.5)}
        path = save_checkpoint(tmp_path / "m.pgt", arrays, meta={"epoch": 3})

        loaded, meta = load_checkpoint(path)

        np.testing.assert_array_equal(loaded["a"], arrays["a"])
        np.testing.assert_array_equal(loaded["b"], arrays["b"].data)
        assert loaded["s"].shape == ()
        assert meta == {"epoch": 3}

    def test_file_starts_with_magic(self, tmp_path):
        """Test the file header is the PGT1 magic."""
        path = save_checkpoint(tmp_path / "m.pgt", {"a": np.zeros(2)})

        assert path.read_bytes()[:4] == MAGIC

    def test_float32_storage(self, tmp_path):
        """Test float32 checkpoints load back as float64 within float32 precision."""
        path = save_checkpoint(tmp_path / "m.pgt", {"a": np.array([1 / 3])}, dtype="float32")

        loaded, _ = load_checkpoint(path)

        assert loaded["a"].dtype == np.float64
        assert loaded["a"][0] == pytest.approx(1 / 3, rel=1e-7)

    def test_unknown_dtype(self, tmp_path):
        """Test an unsupported storage dtype raises ConfigurationError."""
        with pytest.raises(ConfigurationError):
            save_checkpoint(tmp_path / "m.pgt", {"a": np.zeros(1)}, dtype="int8")

    def test_missing_file(self, tmp_path):
        """Test loading a missing checkpoint raises FileNotFoundError naming it."""
        with pytest.raises(FileNotFoundError) as exc_info:
            load_checkpoint(tmp_path / "nope.pgt")

        assert "nope.pgt" in str(exc_info.value)

    def test_bad_magic(self, tmp_path):
        """Test a file without the magic raises IngestionError."""
        path = tmp_path / "bad.pgt"
        path.write_bytes(b"XXXX" + b"\x00" * 8)

        with pytest.raises(IngestionError) as exc_info:
            load_checkpoint(path)

        assert "not a PGT1 checkpoint" in str(exc_info.value)

    def test_truncated_payload(self, tmp_path):
        """Test a truncated payload raises IngestionError naming the tensor."""
        path = save_checkpoint(tmp_path / "m.pgt", {"weights": np.zeros(8)})
        path.write_bytes(path.read_bytes()[:-16])

        with pytest.raises(IngestionError) as exc_info:
            load_checkpoint(path)

        assert "weights" in str(exc_info.value)
