import numpy as np
import pytest

from src.core.exceptions import InputError
from src.utils.image_io import encode_pgm, read_pgm, to_gray8, write_pgm


def test_gray_levels_round_and_clip():
    np.testing.assert_array_equal(to_gray8(np.array([0.0, 0.5, 1.0, -1.0, 2.0])), [0, 128, 255, 0, 255])


def test_pgm_header_and_pixels():
    data = encode_pgm(np.array([[0.0, 1.0, 0.2], [1.0, 0.0, 0.6]]))
    assert data.startswith(b"P5\n3 2\n255\n")
    assert data[len(b"P5\n3 2\n255\n"):] == bytes([0, 255, 51, 255, 0, 153])


def test_pgm_needs_2d_input():
    with pytest.raises(InputError):
        encode_pgm(np.zeros(4))


def test_write_and_read_back(tmp_path):
    values = np.linspace(0.0, 1.0, 12).reshape(3, 4)
    path = write_pgm(values, tmp_path / "dump" / "guide.pgm")
    np.testing.assert_array_equal(read_pgm(path), to_gray8(values))
