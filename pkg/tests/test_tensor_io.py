import struct

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from diec.errors import FormatError
from diec.tensor_io import (canonical_json, decode_checkpoint, decode_dtf, encode_checkpoint, encode_dtf,
                            read_checkpoint, tensor_to_csv, write_checkpoint, write_table)

finite32 = st.floats(-1e6, 1e6, allow_nan=False, width=32)


def test_dtf_layout_by_hand():
    blob = encode_dtf(np.array([[1.0, 2.0, 3.0]], dtype=np.float32))
    expected = b"DTF1" + bytes([2]) + struct.pack("<II", 1, 3) + struct.pack("<3f", 1, 2, 3)
    assert blob == expected


@given(arrays(np.float32, array_shapes(min_dims=0, max_dims=4, max_side=5), elements=finite32))
def test_dtf_roundtrip_byte_identical(a):
    blob = encode_dtf(a)
    back = decode_dtf(blob)
    np.testing.assert_array_equal(back, a)
    assert encode_dtf(back) == blob


def test_dtf_rejects_bad_input():
    blob = encode_dtf(np.zeros((2, 2)))
    with pytest.raises(FormatError):
        decode_dtf(b"XXXX" + blob[4:])
    with pytest.raises(FormatError):
        decode_dtf(blob[:-1])
    with pytest.raises(FormatError):
        decode_dtf(blob + b"\0")
    with pytest.raises(FormatError):
        encode_dtf(np.array([np.nan]))


def test_checkpoint_roundtrip(tmp_path):
    header = {"architecture": {"widths": [1, 2]}, "config_hash": "abc"}
    tensors = {"w": np.arange(6, dtype=np.float32).reshape(2, 3), "b": np.ones(3, np.float32)}
    p = tmp_path / "m.dck"
    write_checkpoint(p, header, tensors)
    h2, t2 = read_checkpoint(p)
    assert h2 == header and list(t2) == ["w", "b"]
    assert encode_checkpoint(h2, t2) == p.read_bytes()


def test_checkpoint_truncation_and_version():
    blob = encode_checkpoint({"a": 1}, {"x": np.zeros(4)})
    for cut in (3, 10, len(blob) - 2):
        with pytest.raises(FormatError):
            decode_checkpoint(blob[:cut])
    bad = blob[:4] + struct.pack("<I", 9) + blob[8:]
    with pytest.raises(FormatError):
        decode_checkpoint(bad)


def test_canonical_json_is_key_sorted():
    assert canonical_json({"b": 1, "a": [1, 2]}) == '{"a":[1,2],"b":1}'


def test_csv_helpers(tmp_path):
    assert tensor_to_csv(np.array([[1.5, 2.0]])) .strip() == "1.5,2.0"
    p = tmp_path / "t.csv"
    write_table(p, ["a", "b"], [[1, 0.25]], comment="config_hash=xyz")
    assert p.read_text() == "# config_hash=xyz\na,b\n1,0.25\n"
