import struct

import numpy as np
import pytest

from src.core.exceptions import FormatError, InputError
from src.core.synth_data import SegSample, generate_dataset
from src.utils.config import SynthConfig
from src.utils.dataset_io import DatasetCodec, read_dataset, write_dataset


def _tiny_sample():
    image = np.array([[[0.0, 0.25], [0.5, 1.0]]], dtype=np.float32)
    mask = np.array([[0, 1], [1, 0]], dtype=np.uint8)
    return SegSample(image, mask)


def test_single_2x2_sample_is_40_bytes():
    data = DatasetCodec().encode([_tiny_sample()])
    assert len(data) == 40
    assert data[:4] == b"GDS1"
    assert struct.unpack("<IIII", data[4:20]) == (1, 1, 2, 2)
    assert data[36:] == bytes([0, 1, 1, 0])


def test_round_trip_through_file(tmp_path):
    samples = generate_dataset(SynthConfig(size=16, n_samples=3))
    path = write_dataset(samples, tmp_path / "sub" / "data.gds")
    loaded = read_dataset(path)
    assert len(loaded) == 3
    for before, after in zip(samples, loaded):
        assert before.image.tobytes() == after.image.tobytes()
        assert before.mask.tobytes() == after.mask.tobytes()


def test_bad_magic_reports_offset_zero():
    data = b"XXXX" + DatasetCodec().encode([_tiny_sample()])[4:]
    with pytest.raises(FormatError) as info:
        DatasetCodec().decode(data)
    assert info.value.offset == 0


def test_unsupported_version():
    data = bytearray(DatasetCodec().encode([_tiny_sample()]))
    data[4:8] = struct.pack("<I", 2)
    with pytest.raises(FormatError) as info:
        DatasetCodec().decode(bytes(data))
    assert info.value.offset == 4


def test_truncated_payload():
    data = DatasetCodec().encode([_tiny_sample()])
    with pytest.raises(FormatError, match="truncated"):
        DatasetCodec().decode(data[:-1])


def test_trailing_bytes():
    with pytest.raises(FormatError, match="trailing"):
        DatasetCodec().decode(DatasetCodec().encode([_tiny_sample()]) + b"\0")


def test_non_binary_mask_byte_offset():
    data = bytearray(DatasetCodec().encode([_tiny_sample()]))
    data[38] = 2
    with pytest.raises(FormatError) as info:
        DatasetCodec().decode(bytes(data))
    assert info.value.offset == 38


def test_empty_header_is_rejected():
    data = b"GDS1" + struct.pack("<IIII", 1, 0, 2, 2)
    with pytest.raises(FormatError, match="empty"):
        DatasetCodec().decode(data)


def test_encode_rejects_bad_samples():
    with pytest.raises(InputError):
        DatasetCodec().encode([])
    sample = _tiny_sample()
    sample.mask[0, 0] = 3
    with pytest.raises(InputError, match="binary"):
        DatasetCodec().encode([sample])
    other = SegSample(np.zeros((1, 4, 4), dtype=np.float32), np.zeros((4, 4), dtype=np.uint8))
    with pytest.raises(InputError, match="do not match"):
        DatasetCodec().encode([_tiny_sample(), other])


def test_missing_file_is_input_error(tmp_path):
    with pytest.raises(InputError, match="cannot read"):
        read_dataset(tmp_path / "absent.gds")
