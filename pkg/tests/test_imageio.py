import io

import numpy as np
import pytest

from smac import imageio as io_
from smac.errors import DataError, ParseError
from smac.synthetic import make_dataset


def test_p5_payload_maps_bytes():
    buf = b"P5\n2 2\n255\n" + bytes([0x00, 0x40, 0x80, 0xFF])
    np.testing.assert_array_equal(io_.decode_pnm(buf), [[0, 64], [128, 255]])


def test_p6_with_comments():
    buf = b"P6 # a comment\n1 # width\n 2\n255\n" + bytes(range(6))
    img = io_.decode_pnm(buf)
    assert img.shape == (2, 1, 3)
    np.testing.assert_array_equal(img.ravel(), range(6))


def test_p6_header_layout():
    img = np.zeros((2, 3, 3), dtype=np.uint8)
    assert io_.encode_pnm(img).startswith(b"P6\n3 2\n255\n")
    assert len(io_.encode_pnm(img)) == len(b"P6\n3 2\n255\n") + 18


def test_rejects_16_bit():
    buf = b"P5\n1 1\n65535\n\x00\x00"
    with pytest.raises(ParseError) as err:
        io_.decode_pnm(buf)
    assert err.value.offset == buf.index(b"65535")


def test_truncated_payload_reports_offset():
    buf = b"P5\n4 4\n255\n" + bytes(10)
    with pytest.raises(ParseError) as err:
        io_.decode_pnm(buf)
    assert err.value.offset == len(buf)
    assert "byte offset" in str(err.value)


@pytest.mark.parametrize("buf", [b"P2\n1 1\n255\n0", b"P5\nx 1\n255\n\x00", b"P5\n1", b""])
def test_malformed_headers(buf):
    with pytest.raises(ParseError):
        io_.decode_pnm(buf)


def test_load_image_keeps_offset(tmp_path):
    p = tmp_path / "bad.pgm"
    p.write_bytes(b"P5\n4 4\n255\n" + bytes(3))
    with pytest.raises(ParseError) as err:
        io_.load_image(p)
    assert err.value.offset == p.stat().st_size
    assert str(p) in str(err.value)


def test_save_gray_levels(tmp_path):
    p = tmp_path / "g.pgm"
    io_.save_gray(p, np.full((3, 2), 0.5))
    np.testing.assert_array_equal(io_.load_image(p), 128)
    io_.save_gray(p, np.full((3, 2), 1.0))
    np.testing.assert_array_equal(io_.load_image(p), 255)
    io_.save_gray(p, np.array([[-0.2, 1.7]]))
    np.testing.assert_array_equal(io_.load_image(p), [[0, 255]])


def test_save_load_idempotent(tmp_path, rng):
    values = rng.random((5, 7))
    a, b = tmp_path / "a.pgm", tmp_path / "b.pgm"
    io_.save_gray(a, values)
    io_.save_gray(b, io_.load_image(a) / 255.0)
    assert a.read_bytes() == b.read_bytes()


@pytest.mark.parametrize("shape", [(5, 9), (4, 3, 3), (1, 1)])
def test_png_round_trip(tmp_path, rng, shape):
    img = rng.integers(0, 256, shape).astype(np.uint8)
    p = tmp_path / "x.png"
    io_.save_image(p, img)
    np.testing.assert_array_equal(io_.load_image(p), img)


def test_png_decodes_pillow_output(rng):
    Image = pytest.importorskip("PIL.Image")
    img = rng.integers(0, 256, (13, 11, 3)).astype(np.uint8)
    img[:, :5] = 7  # smooth region pushes the encoder through several filters
    for mode, arr in (("RGB", img), ("L", img[..., 0])):
        buf = io.BytesIO()
        Image.fromarray(arr, mode).save(buf, format="PNG", optimize=True)
        np.testing.assert_array_equal(io_.decode_png(buf.getvalue()), arr)


def test_png_bad_signature():
    with pytest.raises(ParseError):
        io_.decode_png(b"\x89PNX\r\n\x1a\n" + bytes(20))


def test_gray_conversion():
    rgb = np.array([[[255, 0, 0], [0, 255, 0], [0, 0, 255], [10, 10, 10]]], dtype=np.uint8)
    np.testing.assert_array_equal(io_.to_gray(rgb), [[76, 150, 29, 10]])
    assert io_.to_rgb(np.zeros((2, 2), dtype=np.uint8)).shape == (2, 2, 3)


# -------------------------------------------------------------------- dataset

def test_dataset_round_trip(tmp_path):
    samples = make_dataset(3, seed=4, size=16)
    for s in samples:
        io_.write_sample(tmp_path, s)
    loaded = io_.load_dataset(tmp_path)
    assert [s.stem for s in loaded] == ["img000", "img001", "img002"]
    for a, b in zip(samples, loaded):
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.depth, b.depth)
        np.testing.assert_array_equal(a.gt, b.gt)


def test_dataset_stem_mismatch(tmp_path):
    s = make_dataset(1, size=8)[0]
    io_.write_sample(tmp_path, s)
    (tmp_path / "depth" / "img000.pgm").rename(tmp_path / "depth" / "other.pgm")
    with pytest.raises(DataError):
        io_.dataset_stems(tmp_path)


def test_dataset_without_gt(tmp_path):
    s = make_dataset(1, size=8)[0]
    io_.write_sample(tmp_path, s)
    (tmp_path / "gt" / "img000.pgm").unlink()
    with pytest.raises(DataError):
        io_.load_dataset(tmp_path)
    assert io_.load_dataset(tmp_path, require_gt=False)[0].gt is None


def test_dataset_size_mismatch(tmp_path):
    s = make_dataset(1, size=8)[0]
    io_.write_sample(tmp_path, s)
    io_.save_image(tmp_path / "depth" / "img000.pgm", np.zeros((7, 8), dtype=np.uint8))
    with pytest.raises(DataError):
        io_.load_dataset(tmp_path)


def test_missing_root(tmp_path):
    with pytest.raises(DataError):
        io_.load_dataset(tmp_path / "nope")
