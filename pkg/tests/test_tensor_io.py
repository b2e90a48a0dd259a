import numpy as np
import pytest

from grnas import tensor_io


def test_binary_round_trip(tmp_path):
    rng = np.random.default_rng(1)
    for shape in [(4,), (3, 5), (2, 3, 4)]:
        arr = rng.normal(size=shape).astype(np.float32).astype(np.float64)
        path = tmp_path / "t.grnt"
        tensor_io.write_tensor(path, arr)
        back = tensor_io.read_tensor(path)
        assert back.shape == shape
        assert np.array_equal(back, arr)


def test_binary_layout(tmp_path):
    path = tmp_path / "t.grnt"
    tensor_io.write_tensor(path, np.arange(6, dtype=np.float64).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:4] == b"GRNT"
    assert int.from_bytes(raw[4:8], "little") == 2
    assert int.from_bytes(raw[8:12], "little") == 2
    assert int.from_bytes(raw[12:16], "little") == 3
    assert len(raw) == 16 + 4 * 6
    assert np.frombuffer(raw[16:], dtype="<f4")[4] == 4.0


def test_bad_magic_and_truncation(tmp_path):
    path = tmp_path / "bad.grnt"
    path.write_bytes(b"NOPE" + b"\x00" * 8)
    with pytest.raises(ValueError):
        tensor_io.read_tensor(path)
    good = tmp_path / "good.grnt"
    tensor_io.write_tensor(good, np.ones((2, 2)))
    truncated = tmp_path / "trunc.grnt"
    truncated.write_bytes(good.read_bytes()[:-3])
    with pytest.raises(ValueError):
        tensor_io.read_tensor(truncated)


def test_csv_round_trip(tmp_path):
    mat = np.array([[1.5, -2.25], [0.0, 1e-7]])
    path = tmp_path / "t.csv"
    tensor_io.write_tensor_csv(path, mat)
    assert np.array_equal(tensor_io.read_tensor_csv(path), mat)


def test_csv_rejects_non_2d_and_ragged(tmp_path):
    with pytest.raises(ValueError):
        tensor_io.write_tensor_csv(tmp_path / "x.csv", np.zeros((2, 2, 2)))
    ragged = tmp_path / "r.csv"
    ragged.write_text("1,2\n3\n")
    with pytest.raises(ValueError):
        tensor_io.read_tensor_csv(ragged)
