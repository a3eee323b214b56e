"""Run records for training and CLI commands.

``RunManifest`` captures everything needed to re-execute a command;
``HistoryLog`` collects per-epoch training records and writes them as JSON
lines. Neither artifact carries wall-clock data except the manifest's
``created_at`` field.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from src.core.exceptions import FormatError, InputError
from src.version import VERSION


@dataclass
class EpochRecord:
    epoch: int
    val_dsc: float
    loss: Optional[float] = None
    dice: Optional[float] = None
    bce: Optional[float] = None
    guide: Optional[float] = None
    hinge: Optional[float] = None

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class HistoryLog:
    records: List[EpochRecord] = field(default_factory=list)

    def append(self, record: EpochRecord) -> None:
        self.records.append(record)

    def best(self) -> EpochRecord:
        """Record with the highest validation DSC; the earliest wins ties."""
        best = self.records[0]
        for record in self.records[1:]:
            if record.val_dsc > best.val_dsc:
                best = record
        return best

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in self.records)

    def write(self, path: Union[str, Path]) -> Path:
        p = Path(path)
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(self.to_jsonl(), encoding='utf-8')
        return p

    @classmethod
    def read(cls, path: Union[str, Path]) -> "HistoryLog":
        log = cls()
        for line in Path(path).read_text(encoding='utf-8').splitlines():
            if line.strip():
                log.append(EpochRecord(**json.loads(line)))
        return log


def _finite_or_none(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _finite_or_none(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_finite_or_none(v) for v in value]
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


@dataclass
class RunManifest:
    """Resolved inputs of one CLI invocation."""
    command: str
    argv: List[str]
    config: Dict[str, Any] = field(default_factory=dict)
    seeds: List[int] = field(default_factory=list)
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    version: str = VERSION
    created_at: str = ''

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['config'] = _finite_or_none(data['config'])
        return data

    def write(self, path: Union[str, Path]) -> Path:
        p = Path(path)
        if not self.created_at:
            self.created_at = datetime.now(timezone.utc).isoformat(timespec='seconds')
        p.parent.mkdir(parents=True, exist_ok=True)
        p.write_text(json.dumps(self.to_dict(), ensure_ascii=False, indent=2, sort_keys=True) + "\n",
                     encoding='utf-8')
        return p

    @classmethod
    def read(cls, path: Union[str, Path]) -> "RunManifest":
        p = Path(path)
        try:
            data = json.loads(p.read_text(encoding='utf-8'))
        except OSError as e:
            raise InputError(f"cannot read manifest {p}: {e.strerror or e}") from e
        except json.JSONDecodeError as e:
            raise FormatError(f"manifest {p} is not valid JSON: {e}") from e
        try:
            return cls(**data)
        except TypeError as e:
            raise FormatError(f"manifest {p} has unexpected fields: {e}") from e


def manifest_path(output: Union[str, Path]) -> Path:
    """``<output>.manifest.json`` next to the output it describes."""
    p = Path(output)
    return p.with_name(p.name + '.manifest.json')
