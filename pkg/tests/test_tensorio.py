import struct

import numpy as np
import pytest

from overmind.errors import FormatError
from overmind.tensorio import MAGIC, dumps_tensor, loads_tensor, read_tensor, write_tensor


@pytest.mark.parametrize("dtype, arr", [
    ("f32", np.linspace(-1, 1, 12, dtype=np.float32).reshape(3, 4)),
    ("i8", np.arange(-5, 5, dtype=np.int8)),
    ("i32", np.arange(24, dtype=np.int32).reshape(2, 3, 4) * -7),
])
def test_round_trip(tmp_path, dtype, arr):
    write_tensor(tmp_path / "t.omt", arr, dtype)
    got_dtype, got = read_tensor(tmp_path / "t.omt")
    assert got_dtype == dtype and got.shape == arr.shape and np.array_equal(got, arr)


def test_layout():
    data = dumps_tensor(np.array([[1, 2]], np.int32), "i32")
    assert data[:4] == MAGIC
    assert struct.unpack_from("<BB2I2i", data, 4) == (2, 2, 1, 2, 1, 2)


@pytest.mark.parametrize("data", [b"NOPE", MAGIC, MAGIC + b"\x07\x01" + b"\0" * 8,
                                  MAGIC + b"\x00\x00", MAGIC + b"\x00\x01\x02\0\0\0" + b"\0" * 4])
def test_malformed(data):
    with pytest.raises(FormatError):
        loads_tensor(data)


def test_rank_zero_rejected():
    with pytest.raises(ValueError):
        dumps_tensor(np.float32(1.0), "f32")
