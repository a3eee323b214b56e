"""
GDS1 dataset container.

Layout (little-endian)::

    "GDS1"  u32 version=1  u32 n  u32 H  u32 W
    n x ( H*W float32 image values, H*W mask bytes in {0, 1} )
"""

import logging
from pathlib import Path
from typing import List, Sequence, Union

import numpy as np

from src.core.exceptions import FormatError, InputError
from src.core.synth_data import SegSample
from src.utils.binary_io import ByteReader, ByteWriter

logger = logging.getLogger(__name__)


class DatasetCodec:
    """Encoder/decoder for GDS1 containers."""

    SIGNATURE = b"GDS1"
    VERSION = 1

    def encode(self, samples: Sequence[SegSample]) -> bytes:
        if not samples:
            raise InputError("cannot write an empty dataset")
        h, w = samples[0].size
        writer = ByteWriter()
        writer.raw(self.SIGNATURE)
        writer.pack("IIII", self.VERSION, len(samples), h, w)
        for i, sample in enumerate(samples):
            if sample.image.shape != (1, h, w) or sample.mask.shape != (h, w):
                raise InputError(
                    f"sample {i}: image {sample.image.shape} / mask {sample.mask.shape} "
                    f"do not match [1,{h},{w}]"
                )
            if not np.isin(sample.mask, (0, 1)).all():
                raise InputError(f"sample {i}: mask is not binary")
            writer.array(sample.image.reshape(-1), "f4")
            writer.array(sample.mask.reshape(-1), "u1")
        return writer.getvalue()

    def decode(self, data: bytes) -> List[SegSample]:
        reader = ByteReader(data)
        magic = reader.take(4, "magic")
        if magic != self.SIGNATURE:
            raise FormatError(f"bad magic {magic!r}, expected {self.SIGNATURE!r}", 0)
        version = reader.u32("version")
        if version != self.VERSION:
            raise FormatError(f"unsupported GDS1 version {version}", 4)
        n, h, w = reader.unpack("III", "header")
        if n == 0 or h == 0 or w == 0:
            raise FormatError(f"empty dataset header n={n}, H={h}, W={w}", 8)

        samples = []
        for i in range(n):
            image = reader.array("f4", h * w, f"image of sample {i}").reshape(1, h, w)
            mask_offset = reader.offset
            mask = reader.array("u1", h * w, f"mask of sample {i}")
            bad = np.flatnonzero(mask > 1)
            if bad.size:
                raise FormatError(f"mask byte {mask[bad[0]]} of sample {i} is not 0 or 1",
                                  mask_offset + int(bad[0]))
            samples.append(SegSample(image=image, mask=mask.reshape(h, w), sample_id=i))
        reader.expect_end()
        return samples


def write_dataset(samples: Sequence[SegSample], path: Union[str, Path]) -> Path:
    path = Path(path)
    payload = DatasetCodec().encode(samples)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    logger.info(f"Wrote {len(samples)} samples to {path} ({len(payload)} bytes)")
    return path


def read_dataset(path: Union[str, Path]) -> List[SegSample]:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise InputError(f"cannot read dataset {path}: {e.strerror or e}") from e
    samples = DatasetCodec().decode(data)
    logger.debug(f"Read {len(samples)} samples from {path}")
    return samples
