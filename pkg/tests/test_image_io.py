"""
Tests for the Image buffer and the PPM/PGM codec
"""

import numpy as np
import pytest

from heliodet.exceptions import DatasetIOError, DecodeError
from heliodet.utils.image_io import Image, decode_ppm, encode_ppm, read_image, write_image


class TestDecode:

    def test_smallest_rgb_file(self):
        img = decode_ppm(b"P6\n1 1\n255\n" + bytes([10, 20, 30]))
        assert (img.width, img.height, img.channels) == (1, 1, 3)
        assert tuple(img.data[0, 0]) == (10, 20, 30)

    def test_grey_file(self):
        img = decode_ppm(b"P5\n2 1\n255\n" + bytes([0, 255]))
        assert (img.width, img.height, img.channels) == (2, 1, 1)
        assert img.data[0, :, 0].tolist() == [0, 255]

    def test_row_major_order(self):
        img = decode_ppm(b"P5\n2 2\n255\n" + bytes([1, 2, 3, 4]))
        assert img.data[:, :, 0].tolist() == [[1, 2], [3, 4]]

    def test_comment_lines_in_header(self):
        img = decode_ppm(b"P6\n# made by hand\n1 1\n# max\n255\n" + bytes([7, 8, 9]))
        assert tuple(img.data[0, 0]) == (7, 8, 9)

    def test_bad_magic(self):
        with pytest.raises(DecodeError) as exc:
            decode_ppm(b"P3\n1 1\n255\n0 0 0")
        assert exc.value.offset == 0

    def test_unsupported_maxval(self):
        with pytest.raises(DecodeError, match="maxval"):
            decode_ppm(b"P5\n1 1\n65535\n" + bytes(2))

    def test_truncated_raster(self):
        buf = b"P6\n2 2\n255\n" + bytes(5)
        with pytest.raises(DecodeError) as exc:
            decode_ppm(buf)
        assert exc.value.offset == len(buf)


class TestEncode:

    def test_canonical_header(self):
        out = encode_ppm(Image.blank(1, 1, 3, value=0))
        assert out == b"P6\n1 1\n255\n" + bytes(3)
        assert len(out) == 14

    def test_grey_uses_p5(self):
        out = encode_ppm(Image.blank(3, 2, 1, value=9))
        assert out.startswith(b"P5\n3 2\n255\n")
        assert out[-6:] == bytes([9] * 6)

    def test_roundtrip(self, rng):
        img = Image(rng.integers(0, 256, size=(5, 7, 3), dtype=np.uint8))
        assert decode_ppm(encode_ppm(img)) == img

    def test_canonical_file_roundtrip(self):
        canonical = b"P5\n2 1\n255\n" + bytes([0, 255])
        assert encode_ppm(decode_ppm(canonical)) == canonical

    def test_deterministic(self, rng):
        data = rng.integers(0, 256, size=(4, 4, 3), dtype=np.uint8)
        assert encode_ppm(Image(data)) == encode_ppm(Image(data.copy()))


class TestImage:

    def test_buffer_is_read_only_copy(self):
        data = np.zeros((2, 2, 3), dtype=np.uint8)
        img = Image(data)
        data[0, 0] = 255
        assert img.data[0, 0, 0] == 0
        assert not img.data.flags.writeable

    def test_rejects_non_uint8(self):
        with pytest.raises(ValueError):
            Image(np.zeros((2, 2, 3), dtype=np.float32))

    def test_two_dimensional_data_is_grey(self):
        assert Image(np.zeros((3, 4), dtype=np.uint8)).channels == 1

    def test_chw_float_layout(self):
        img = Image(np.full((2, 3, 3), 255, dtype=np.uint8))
        x = img.to_chw_float()
        assert x.shape == (3, 2, 3)
        assert x.dtype == np.float32
        assert np.all(x == 1.0)


class TestFiles:

    def test_write_then_read(self, tmp_path, rng):
        img = Image(rng.integers(0, 256, size=(6, 5, 3), dtype=np.uint8))
        path = tmp_path / "nested" / "scene.ppm"
        write_image(path, img)
        assert read_image(path) == img

    def test_missing_file(self, tmp_path):
        with pytest.raises(DatasetIOError) as exc:
            read_image(tmp_path / "absent.ppm")
        assert isinstance(exc.value, OSError)
        assert str(tmp_path / "absent.ppm") in exc.value.paths
