import numpy as np
import pytest

from sketchlearn import io


@pytest.mark.parametrize("suffix", [".bin", ".csv"])
def test_matrix_round_trip(tmp_path, suffix):
    A = np.random.default_rng(0).standard_normal((7, 3)) * 10.0 ** np.arange(-3, 4)[:, None]
    A[0, 0] = np.nextafter(1.0, 2.0)
    path = tmp_path / f"a{suffix}"
    io.write_matrix(path, A)
    B = io.read_matrix(path)
    assert B.dtype == np.float64 and np.array_equal(A, B)


def test_bin_layout(tmp_path):
    io.write_matrix_bin(tmp_path / "a.bin", np.array([[1.0, 2.0]]))
    data = (tmp_path / "a.bin").read_bytes()
    assert data[:8] == b"SKLMAT01" and len(data) == 8 + 16 + 16
    assert np.frombuffer(data[24:], "<f8").tolist() == [1.0, 2.0]


def test_bin_rejects_corruption(tmp_path):
    io.write_matrix_bin(tmp_path / "a.bin", np.ones((2, 2)))
    raw = (tmp_path / "a.bin").read_bytes()
    (tmp_path / "b.bin").write_bytes(raw[:-8])
    with pytest.raises(ValueError):
        io.read_matrix_bin(tmp_path / "b.bin")
    (tmp_path / "c.bin").write_bytes(b"XXXXXXXX" + raw[8:])
    with pytest.raises(ValueError):
        io.read_matrix_bin(tmp_path / "c.bin")


def test_json_creates_parent(tmp_path):
    io.save_json(tmp_path / "x" / "y.json", {"a": [1, 2]})
    assert io.load_json(tmp_path / "x" / "y.json") == {"a": [1, 2]}
