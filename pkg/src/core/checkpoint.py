"""
GCK1 checkpoint container.

Layout (little-endian)::

    "GCK1"  u32 version  u32 json_len  <json_len bytes UTF-8 JSON, sorted keys>
    f64 val_dsc  u32 epoch  u32 n_groups
    per group:  u8 name_len  name  u8 frozen  u32 n_tensors
    per tensor: u16 key_len  key  u8 dtype (0=float32, 1=float64)  u8 ndim  ndim x u32  data

The JSON header holds the artifact version, mode, seed and every
configuration section, so a model can be rebuilt and its group shapes
re-verified on load.
"""

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
from packaging.version import InvalidVersion, Version

from src.core.exceptions import ConfigError, FormatError, InputError
from src.core.pipeline import GuidedSegmenter, Mode
from src.core.tensor import Precision
from src.utils.binary_io import ByteReader, ByteWriter
from src.utils.config import ConfigManager
from src.version import VERSION

logger = logging.getLogger(__name__)

DTYPE_CODES = {0: "f4", 1: "f8"}
CODE_FOR_DTYPE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}


@dataclass
class Checkpoint:
    """Parameter snapshot of a :class:`GuidedSegmenter` plus its validation score."""
    mode: Mode
    seed: int
    config: Dict[str, Any]
    groups: Dict[str, Dict[str, np.ndarray]]
    frozen: Dict[str, bool] = field(default_factory=dict)
    val_dsc: float = 0.0
    epoch: int = 0
    version: str = VERSION

    @classmethod
    def from_model(cls, model: GuidedSegmenter, val_dsc: float, epoch: int) -> "Checkpoint":
        groups = {name: module.state_arrays() for name, module in model.groups().items()}
        frozen = {name: name in model.frozen_groups() for name in groups}
        return cls(model.mode, model.seed, model.config.to_dict(), groups, frozen, float(val_dsc), int(epoch))

    def config_manager(self) -> ConfigManager:
        return ConfigManager.from_dict(self.config)

    def build_model(self, precision: Precision = Precision.SINGLE) -> GuidedSegmenter:
        """Rebuild the model from the stored config and load every group into it."""
        model = GuidedSegmenter(self.config_manager(), self.mode, self.seed, precision)
        expected = model.groups()
        if set(expected) != set(self.groups):
            raise FormatError(
                f"checkpoint groups {sorted(self.groups)} do not match mode "
                f"{self.mode.value} groups {sorted(expected)}"
            )
        for name, module in expected.items():
            try:
                module.load_state_arrays(self.groups[name])
            except ConfigError as e:
                raise FormatError(f"group '{name}': {e}") from e
        return model

    def verify(self) -> None:
        """Check group names and parameter shapes against a model built from the stored config."""
        reference = GuidedSegmenter(self.config_manager(), self.mode, self.seed)
        expected = reference.groups()
        if set(expected) != set(self.groups):
            raise FormatError(f"checkpoint groups {sorted(self.groups)} do not match {sorted(expected)}")
        for name, module in expected.items():
            shapes = {k: p.shape for k, p in module.named_parameters().items()}
            stored = {k: a.shape for k, a in self.groups[name].items()}
            if shapes != stored:
                diff = sorted(k for k in set(shapes) | set(stored) if shapes.get(k) != stored.get(k))
                raise FormatError(f"group '{name}' shape mismatch in {diff}")

    def strip_lora(self) -> "Checkpoint":
        """The same snapshot as a guided-frozen checkpoint without the LoRA group."""
        if self.mode is not Mode.LORA:
            raise ConfigError(f"checkpoint in mode {self.mode.value} has no LoRA group")
        groups = {k: v for k, v in self.groups.items() if k != "lora"}
        frozen = {k: v for k, v in self.frozen.items() if k != "lora"}
        return Checkpoint(Mode.GUIDED, self.seed, self.config, groups, frozen,
                          self.val_dsc, self.epoch, self.version)


class CheckpointCodec:
    """Encoder/decoder for GCK1 containers."""

    SIGNATURE = b"GCK1"
    VERSION = 1

    def encode(self, ckpt: Checkpoint) -> bytes:
        header = {"version": ckpt.version, "mode": ckpt.mode.value, "seed": ckpt.seed, "config": ckpt.config}
        header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

        writer = ByteWriter()
        writer.raw(self.SIGNATURE)
        writer.pack("II", self.VERSION, len(header_bytes))
        writer.raw(header_bytes)
        writer.pack("dII", ckpt.val_dsc, ckpt.epoch, len(ckpt.groups))
        for name, tensors in ckpt.groups.items():
            name_bytes = name.encode("utf-8")
            writer.pack("B", len(name_bytes))
            writer.raw(name_bytes)
            writer.pack("BI", int(ckpt.frozen.get(name, False)), len(tensors))
            for key, array in tensors.items():
                code = CODE_FOR_DTYPE.get(array.dtype)
                if code is None:
                    raise ConfigError(f"parameter '{name}.{key}' has unsupported dtype {array.dtype}")
                key_bytes = key.encode("utf-8")
                writer.pack("H", len(key_bytes))
                writer.raw(key_bytes)
                writer.pack("BB", code, array.ndim)
                writer.pack("I" * array.ndim, *array.shape)
                writer.array(array, DTYPE_CODES[code])
        return writer.getvalue()

    def decode(self, data: bytes, verify: bool = True) -> Checkpoint:
        reader = ByteReader(data)
        magic = reader.take(4, "magic")
        if magic != self.SIGNATURE:
            raise FormatError(f"bad magic {magic!r}, expected {self.SIGNATURE!r}", 0)
        version = reader.u32("container version")
        if version != self.VERSION:
            raise FormatError(f"unsupported GCK1 version {version}", 4)

        header_offset = reader.offset
        header_len = reader.u32("header length")
        try:
            header = json.loads(reader.take(header_len, "config header").decode("utf-8"))
            mode = Mode(header["mode"])
            seed = int(header["seed"])
            config = header["config"]
            artifact_version = str(header["version"])
        except (ValueError, KeyError, TypeError) as e:
            raise FormatError(f"unreadable config header: {e}", header_offset) from e
        self._check_artifact_version(artifact_version, header_offset)

        val_dsc = reader.f64("validation score")
        epoch = reader.u32("epoch")
        n_groups = reader.u32("group count")
        groups: Dict[str, Dict[str, np.ndarray]] = {}
        frozen: Dict[str, bool] = {}
        for _ in range(n_groups):
            name = reader.take(reader.u8("group name length"), "group name").decode("utf-8", "replace")
            frozen[name] = bool(reader.u8("frozen flag"))
            tensors: Dict[str, np.ndarray] = {}
            for _ in range(reader.u32("tensor count")):
                key = reader.take(reader.u16("key length"), "tensor key").decode("utf-8", "replace")
                code_offset = reader.offset
                code = reader.u8("dtype code")
                if code not in DTYPE_CODES:
                    raise FormatError(f"unknown dtype code {code} for '{name}.{key}'", code_offset)
                ndim = reader.u8("ndim")
                shape = reader.unpack("I" * ndim, "dims") if ndim else ()
                count = int(np.prod(shape)) if shape else 1
                tensors[key] = reader.array(DTYPE_CODES[code], count, f"data of '{name}.{key}'").reshape(shape)
            groups[name] = tensors
        reader.expect_end()

        try:
            ckpt = Checkpoint(mode, seed, config, groups, frozen, val_dsc, epoch, artifact_version)
            if verify:
                ckpt.verify()
        except ConfigError as e:
            raise FormatError(f"stored config is invalid: {e}") from e
        return ckpt

    @staticmethod
    def _check_artifact_version(stored: str, offset: int) -> None:
        try:
            stored_v, current_v = Version(stored), Version(VERSION)
        except InvalidVersion as e:
            raise FormatError(f"invalid artifact version '{stored}'", offset) from e
        if stored_v.major != current_v.major or stored_v > current_v:
            raise FormatError(f"checkpoint written by version {stored_v} cannot be read by {current_v}", offset)


def save_checkpoint(ckpt: Checkpoint, path: Union[str, Path]) -> Path:
    path = Path(path)
    payload = CheckpointCodec().encode(ckpt)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(payload)
    logger.info(f"Saved {ckpt.mode.value} checkpoint (epoch {ckpt.epoch}, val DSC {ckpt.val_dsc:.4f}) to {path}")
    return path


def load_checkpoint(path: Union[str, Path], verify: bool = True) -> Checkpoint:
    path = Path(path)
    try:
        data = path.read_bytes()
    except OSError as e:
        raise InputError(f"cannot read checkpoint {path}: {e.strerror or e}") from e
    ckpt = CheckpointCodec().decode(data, verify=verify)
    logger.debug(f"Loaded checkpoint {path}: mode={ckpt.mode.value}, groups={list(ckpt.groups)}")
    return ckpt


def load_encoder_weights(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    """Encoder arrays from any GCK1 file carrying an ``encoder`` group."""
    ckpt = load_checkpoint(path, verify=False)
    if "encoder" not in ckpt.groups:
        raise FormatError(f"{path} has no 'encoder' group")
    return ckpt.groups["encoder"]
