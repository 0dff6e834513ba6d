import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import array_shapes, arrays

from gslm.io import (
    CorruptFileError,
    confidence_to_byte,
    decode_pgm,
    decode_tensor,
    encode_pgm,
    encode_tensor,
    load_tensor,
    save_tensor,
    unit_to_byte,
)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, array_shapes(min_dims=0, max_dims=4, max_side=5), elements=st.floats(allow_nan=False)))
def test_tensor_round_trip_is_exact(a):
    out = decode_tensor(encode_tensor(a))
    assert out.shape == a.shape
    assert out.tobytes() == np.ascontiguousarray(a).tobytes()


def test_header_layout():
    buf = encode_tensor(np.zeros((2, 3)))
    assert buf[:4] == b"GTEN" and buf[4:7] == bytes([1, 1, 2])
    assert len(buf) == 7 + 8 + 48


@pytest.mark.parametrize(
    "mutate,reason",
    [
        (lambda b: b"XTEN" + b[4:], "magic"),
        (lambda b: b[:4] + b"\x02" + b[5:], "version"),
        (lambda b: b[:5] + b"\x07" + b[6:], "dtype"),
        (lambda b: b[:-1], "payload"),
        (lambda b: b[:9], "truncated"),
    ],
)
def test_corrupt_tensor_is_rejected(mutate, reason):
    with pytest.raises(CorruptFileError, match=reason):
        decode_tensor(mutate(encode_tensor(np.ones((2, 2)))))


def test_missing_file_is_corrupt(tmp_path):
    with pytest.raises(CorruptFileError):
        load_tensor(tmp_path / "nope.gten")
    save_tensor(tmp_path / "x.gten", np.eye(2))
    np.testing.assert_array_equal(load_tensor(tmp_path / "x.gten"), np.eye(2))


def test_pgm_round_trip_and_errors():
    img = np.arange(12, dtype=np.uint8).reshape(3, 4)
    buf = encode_pgm(img)
    assert buf.startswith(b"P5\n4 3\n255\n")
    np.testing.assert_array_equal(decode_pgm(buf), img)
    with pytest.raises(CorruptFileError):
        decode_pgm(b"P2\n1 1\n255\n\x00")
    with pytest.raises(CorruptFileError):
        decode_pgm(buf[:-2])
    with pytest.raises(ValueError):
        encode_pgm(np.full((2, 2), 300))


def test_byte_mappings():
    np.testing.assert_array_equal(unit_to_byte([0.0, 0.5, 1.0, 2.0]), [0, 128, 255, 255])
    np.testing.assert_array_equal(confidence_to_byte([1, 0, -1]), [255, 0, 128])
