"""Versioned JSON checkpoints of named float64 parameter arrays."""

import json
import os
from typing import Dict

import numpy as np

from models.errors import InvalidInputError
from utils.logger import get_logger

logger = get_logger(__name__)

FORMAT_VERSION = 1


def encode_params(params: Dict[str, np.ndarray]) -> Dict[str, Dict]:
    # repr of a Python float round-trips exactly
    return {
        name: {"shape": list(value.shape), "values": [float(x) for x in value.ravel()]}
        for name, value in sorted(params.items())
    }


def decode_params(data: Dict[str, Dict]) -> Dict[str, np.ndarray]:
    try:
        return {
            name: np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            for name, entry in data.items()
        }
    except (KeyError, TypeError, ValueError) as e:
        raise InvalidInputError(f"Malformed parameter block: {e}") from e


def check_version(data: Dict, kind: str) -> None:
    if not isinstance(data, dict):
        raise InvalidInputError(f"{kind} checkpoint must be a JSON object")
    version = data.get("format_version")
    if version != FORMAT_VERSION:
        raise InvalidInputError(f"Unsupported {kind} checkpoint version {version!r}")


def write_checkpoint(data: Dict, path: str) -> None:
    directory = os.path.dirname(path)
    if directory:
        os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=2)
    logger.debug(f"💾 Checkpoint written to {path}")


def read_checkpoint(path: str) -> Dict:
    try:
        with open(path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.error(f"Error reading checkpoint {path}: {e}")
        raise InvalidInputError(f"Cannot read checkpoint '{path}': {e}") from e
