import numpy as np
import pytest

from ddprior.numerics import (
    DtypeError,
    MagicError,
    TruncatedFileError,
    read_tensors,
    write_tensors,
)


def test_roundtrip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    tensors = {
        "cplx": (rng.normal(size=(3, 4)) + 1j * rng.normal(size=(3, 4))).astype(np.complex128),
        "real": rng.normal(size=(5,)).astype(np.float64),
        "single": rng.normal(size=(2, 2, 2)).astype(np.float32),
    }
    path = tmp_path / "t.ddpt"
    write_tensors(path, tensors, meta={"note": "x"})
    back, meta = read_tensors(path)
    assert meta == {"note": "x"}
    for name, arr in tensors.items():
        assert back[name].dtype == arr.dtype
        assert back[name].shape == arr.shape
        assert back[name].tobytes() == arr.tobytes()


def test_wrong_magic(tmp_path):
    path = tmp_path / "bad.ddpt"
    path.write_bytes(b"NOPE\n{}\n")
    with pytest.raises(MagicError):
        read_tensors(path)


def test_truncated_payload(tmp_path):
    path = tmp_path / "t.ddpt"
    write_tensors(path, {"a": np.arange(10, dtype=np.float64)})
    blob = path.read_bytes()
    path.write_bytes(blob[:-8])
    with pytest.raises(TruncatedFileError):
        read_tensors(path)


def test_unknown_dtype_in_header(tmp_path):
    path = tmp_path / "t.ddpt"
    write_tensors(path, {"a": np.arange(4, dtype=np.float64)})
    blob = path.read_bytes().replace(b'"real64"', b'"int512"')
    path.write_bytes(blob)
    with pytest.raises(DtypeError):
        read_tensors(path)


def test_unsupported_array_dtype_on_write(tmp_path):
    with pytest.raises(DtypeError):
        write_tensors(tmp_path / "t.ddpt", {"a": np.arange(4, dtype=np.int32)})


def test_empty_tensor_list(tmp_path):
    path = tmp_path / "empty.ddpt"
    write_tensors(path, {})
    tensors, meta = read_tensors(path)
    assert tensors == {}
    assert meta == {}


def test_write_is_deterministic(tmp_path):
    a = {"x": np.arange(6, dtype=np.float64).reshape(2, 3)}
    write_tensors(tmp_path / "1.ddpt", a, meta={"k": 1})
    write_tensors(tmp_path / "2.ddpt", a, meta={"k": 1})
    assert (tmp_path / "1.ddpt").read_bytes() == (tmp_path / "2.ddpt").read_bytes()
