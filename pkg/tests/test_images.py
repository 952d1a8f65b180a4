import numpy as np
import pytest

from ddrsplat.images import (
    ImageIoError,
    encode_png,
    read_image,
    read_pfm,
    read_png,
    write_image,
    write_pfm,
    write_png,
)


def test_pfm_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    raster = (rng.uniform(0, 100, (9, 7, 3)) * rng.choice([1e-8, 1.0, 1e6], (9, 7, 3))).astype(
        np.float32
    )
    p = tmp_path / "x.pfm"
    write_pfm(raster, p)
    back = read_pfm(p)
    assert back.dtype == np.float32
    assert np.array_equal(back, raster)
    # file-level: write(read(file)) reproduces the bytes
    write_pfm(back, tmp_path / "y.pfm")
    assert (tmp_path / "x.pfm").read_bytes() == (tmp_path / "y.pfm").read_bytes()


def test_pfm_header_errors(tmp_path):
    p = tmp_path / "bad.pfm"
    p.write_bytes(b"Pf\n2 2\n-1.0\n" + b"\x00" * 16)
    with pytest.raises(ImageIoError):
        read_pfm(p)
    p.write_bytes(b"PF\n2 2\n1.0\n" + b"\x00" * 48)
    with pytest.raises(ImageIoError):
        read_pfm(p)  # big-endian
    p.write_bytes(b"PF\n2 2\n-1.0\n" + b"\x00" * 10)
    with pytest.raises(ImageIoError):
        read_pfm(p)  # truncated payload


def test_png_half_gray_quantization(tmp_path):
    raster = np.full((4, 4, 3), 0.5)
    p = tmp_path / "g.png"
    write_png(raster, p)
    back = read_png(p)
    assert np.all(back == 128.0 / 255.0)


def test_png_round_trip_error_bound(tmp_path):
    rng = np.random.default_rng(1)
    raster = rng.uniform(0, 1, (16, 12, 3))
    p = tmp_path / "r.png"
    write_png(raster, p)
    back = read_png(p)
    assert np.max(np.abs(back - raster)) <= 1.0 / 510.0 + 1e-12


def test_png_rejects_out_of_range():
    with pytest.raises(ImageIoError):
        encode_png(np.full((4, 4, 3), 1.5))
    with pytest.raises(ImageIoError):
        encode_png(np.zeros((4, 4)))


def test_dispatch_by_extension(tmp_path):
    raster = np.random.default_rng(2).uniform(0, 1, (8, 8, 3))
    write_image(raster, tmp_path / "a.png")
    write_image(raster.astype(np.float32), tmp_path / "a.pfm")
    assert read_image(tmp_path / "a.png").shape == (8, 8, 3)
    assert np.array_equal(read_image(tmp_path / "a.pfm"), raster.astype(np.float32))
    with pytest.raises(ImageIoError):
        write_image(raster, tmp_path / "a.jpg")


def test_png_deterministic_bytes():
    raster = np.random.default_rng(3).uniform(0, 1, (10, 10, 3))
    assert encode_png(raster) == encode_png(raster.copy())
