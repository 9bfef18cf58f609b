"""Helpers shared by the pipeline stages: logging setup, artifact I/O and hashing."""

import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, Union

import numpy as np
import pandas as pd

from .errors import MissingArtifactError

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

PathLike = Union[str, Path]


def setup_logging(level: int = logging.INFO) -> None:
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


def _jsonable(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return _jsonable(value.tolist())
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating, float)):
        value = float(value)
        if math.isnan(value):
            return None
        if math.isinf(value):
            return "inf" if value > 0 else "-inf"
        return value
    if isinstance(value, np.bool_):
        return bool(value)
    return value


def save_json(data: Dict[str, Any], path: PathLike) -> None:
    """Write ``data`` as canonical JSON (sorted keys) so reruns are byte-identical."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(_jsonable(data), f, sort_keys=True, indent=2, ensure_ascii=False)
        f.write("\n")


def load_json(path: PathLike, producer: str) -> Dict[str, Any]:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producer)
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


def save_frame(frame: pd.DataFrame, path: PathLike, index: bool = False) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame.to_csv(path, index=index, lineterminator="\n")


def load_frame(path: PathLike, producer: str, **kwargs) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return pd.read_csv(path, float_precision="round_trip", **kwargs)


def require(path: PathLike, producer: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise MissingArtifactError(path, producer)
    return path


def file_sha256(path: PathLike) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def decode_float(value: Any) -> float:
    """Inverse of the JSON encoding used by ``save_json`` for non-finite floats."""
    if value is None:
        return float("nan")
    if value == "inf":
        return float("inf")
    if value == "-inf":
        return float("-inf")
    return float(value)
