import io as _io

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from symnet.exceptions import ParseError
from symnet.io import (
    image_size,
    parse_config,
    read_config,
    read_heatmap_pgm,
    read_image,
    read_netpbm,
    read_tensor,
    write_config,
    write_heatmap_pgm,
    write_image,
    write_tensor,
)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float32, st.lists(st.integers(0, 5), min_size=0, max_size=4),
              elements=st.floats(-1e6, 1e6, width=32)))
def test_tensor_roundtrip(a):
    buf = _io.BytesIO()
    write_tensor(buf, a)
    back = read_tensor(_io.BytesIO(buf.getvalue()))
    assert back.shape == a.shape and back.dtype == np.float32
    np.testing.assert_array_equal(back, a)


def test_tensor_layout():
    buf = _io.BytesIO()
    write_tensor(buf, np.array([[1.0, 2.0]]))
    raw = buf.getvalue()
    assert raw[:4] == b"SYMT" and raw[4:8] == (2).to_bytes(4, "little")
    assert raw[8:16] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
    assert np.frombuffer(raw[16:], "<f4").tolist() == [1.0, 2.0]


def test_tensor_errors():
    with pytest.raises(ParseError, match="magic"):
        read_tensor(_io.BytesIO(b"XXXX"))
    buf = _io.BytesIO()
    write_tensor(buf, np.zeros((3, 3)))
    with pytest.raises(ParseError, match="truncated"):
        read_tensor(_io.BytesIO(buf.getvalue()[:-4]))


def test_image_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    rgb = rng.integers(0, 256, (7, 9, 3), dtype=np.uint8)
    gray = rng.integers(0, 256, (5, 4), dtype=np.uint8)
    write_image(tmp_path / "a.ppm", rgb)
    write_image(tmp_path / "b.pgm", gray)
    np.testing.assert_array_equal(read_image(tmp_path / "a.ppm"), rgb)
    np.testing.assert_array_equal(read_image(tmp_path / "b.pgm"), gray)
    assert image_size(tmp_path / "a.ppm") == (9, 7)


def test_netpbm_header_comments(tmp_path):
    p = tmp_path / "c.pgm"
    p.write_bytes(b"P5\n# made by hand\n2 1\n255\n\x01\x02")
    data, maxval = read_netpbm(p)
    assert data.tolist() == [[1, 2]] and maxval == 255
    p.write_bytes(b"P3\n1 1\n255\n0 0 0")
    with pytest.raises(ParseError):
        read_netpbm(p)
    p.write_bytes(b"P5\n4 4\n255\n\x00")
    with pytest.raises(ParseError, match="truncated"):
        read_netpbm(p)


def test_heatmap_pgm_quantization(tmp_path):
    h = np.array([[0.0, 1.0, 0.5], [1e-6, 0.25, 2.0]])
    write_heatmap_pgm(tmp_path / "h.pgm", h, sidecar=True)
    raw, maxval = read_netpbm(tmp_path / "h.pgm")
    assert maxval == 65535
    assert raw.tolist() == [[0, 65535, 32768], [0, 16384, 65535]]
    back = read_heatmap_pgm(tmp_path / "h.pgm")
    assert np.abs(back - np.clip(h, 0, 1)).max() <= 0.5 / 65535 + 1e-12
    np.testing.assert_array_equal(read_tensor(tmp_path / "h.pgm.symt"),
                                  np.clip(h, 0, 1).astype(np.float32))


def test_heatmap_file_is_byte_stable(tmp_path):
    h = np.random.default_rng(1).random((6, 8))
    write_heatmap_pgm(tmp_path / "a.pgm", h)
    write_heatmap_pgm(tmp_path / "b.pgm", read_heatmap_pgm(tmp_path / "a.pgm"))
    assert (tmp_path / "a.pgm").read_bytes() == (tmp_path / "b.pgm").read_bytes()


def test_config_canonical_and_roundtrip(tmp_path):
    text = write_config(tmp_path / "c.txt", {"b": 0.1, "a": (1, 2), "c": True, "d": "x"})
    assert text == "a=1,2\nb=0.1\nc=true\nd=x\n"
    assert read_config(tmp_path / "c.txt") == {"a": "1,2", "b": "0.1", "c": "true", "d": "x"}


def test_config_parse_rules():
    assert parse_config("# comment\n\n k = v = w \n") == {"k": "v = w"}
    with pytest.raises(ParseError) as exc:
        parse_config("a=1\nnot a pair\n")
    assert exc.value.lineno == 2
