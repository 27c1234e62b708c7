import struct

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from radial_canon import rbt
from radial_canon.errors import FormatError


def test_header_layout():
    buf = rbt.encode(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    assert buf[:4] == b"RBT1"
    assert struct.unpack("<3I", buf[4:16]) == (2, 1, 3)
    assert np.frombuffer(buf[16:], "<f4").tolist() == [1.0, 2.0, 3.0]


@settings(max_examples=50)
@given(arrays(np.float32, st.lists(st.integers(0, 4), min_size=0, max_size=4).map(tuple),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_round_trip_bit_exact(arr):
    back, end = rbt.decode(rbt.encode(arr))
    assert back.shape == arr.shape and back.tobytes() == arr.astype("<f4").tobytes()


def test_file_round_trip(tmp_path):
    a = np.arange(12, dtype=np.float32).reshape(3, 4)
    rbt.write_tensor(tmp_path / "a.rbt", a)
    assert np.array_equal(rbt.read_tensor(tmp_path / "a.rbt"), a)


@pytest.mark.parametrize("blob", [b"", b"XXXX\x00\x00\x00\x00", rbt.encode(np.zeros(4))[:-3]])
def test_bad_blobs(blob):
    with pytest.raises(FormatError):
        rbt.decode(blob)


def test_checkpoint(tmp_path):
    params = {"a": np.ones((2, 2), np.float32), "b": np.arange(3, dtype=np.float32)}
    rbt.write_checkpoint(tmp_path / "c", params, {"k": 1})
    back, meta = rbt.read_checkpoint(tmp_path / "c")
    assert meta["k"] == 1 and set(back) == {"a", "b"}
    assert all(np.array_equal(back[k], params[k]) for k in params)
    raw = (tmp_path / "c").read_bytes()
    assert raw[:4] == b"RBCK" and struct.unpack("<I", raw[4:8])[0] == rbt.CKPT_VERSION
    (tmp_path / "bad").write_bytes(b"RBCK" + struct.pack("<I", 99) + raw[8:])
    with pytest.raises(FormatError):
        rbt.read_checkpoint(tmp_path / "bad")
