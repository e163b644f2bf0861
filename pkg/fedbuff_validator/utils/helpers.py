"""
Helper utilities for fedbuff-validator.
"""

import hashlib
import json
import logging
import os
from typing import Any

import numpy as np

logger = logging.getLogger(__name__)


def format_duration_for_display(seconds: float) -> str:
    """Format a duration for table display."""
    if seconds < 1:
        return f"{seconds * 1000:.0f}ms"
    elif seconds < 60:
        return f"{seconds:.1f}s"
    elif seconds < 3600:
        return f"{int(seconds // 60)}m {int(seconds % 60)}s"
    else:
        return f"{int(seconds // 3600)}h {int((seconds % 3600) // 60)}m"


def format_float(value: float) -> str:
    """Shortest round-tripping text for a float; stable across platforms."""
    return repr(float(value))


def canonical_json(data: Any) -> str:
    """Serialize to JSON with sorted keys and no insignificant whitespace."""
    return json.dumps(data, sort_keys=True, separators=(",", ":"), allow_nan=False)


def fingerprint(data: Any) -> str:
    """Content hash of a JSON-serializable config.

    Args:
        data: Resolved configuration mapping

    Returns:
        Hex sha256 digest of the canonical JSON form
    """
    return hashlib.sha256(canonical_json(data).encode("utf-8")).hexdigest()


def model_checksum(values: np.ndarray) -> str:
    """Checksum of a parameter vector over its little-endian float64 bytes."""
    data = np.ascontiguousarray(values, dtype="<f8").tobytes()
    return hashlib.sha256(data).hexdigest()


def save_json_file(data: Any, file_path: str, indent: int = 2) -> str:
    """Save data to a JSON file, creating parent directories.

    Args:
        data: Data to save
        file_path: Path to save the file
        indent: Indentation level for JSON formatting

    Returns:
        The path written
    """
    directory = os.path.dirname(file_path)
    if directory:
        os.makedirs(directory, exist_ok=True)

    with open(file_path, "w", encoding="utf-8") as f:
        json.dump(data, f, indent=indent, sort_keys=True)
        f.write("\n")

    return file_path


def load_json_file(file_path: str, default: Any = None) -> Any:
    """Load data from a JSON file.

    Args:
        file_path: Path to the JSON file
        default: Default value if file doesn't exist or can't be loaded

    Returns:
        Loaded data or default value
    """
    if not os.path.exists(file_path):
        return default
    try:
        with open(file_path, "r", encoding="utf-8") as f:
            return json.load(f)
    except (OSError, json.JSONDecodeError) as e:
        logger.warning(f"Failed to load JSON file {file_path}: {e}")
        return default


# Stream tags; every random draw of a run comes from default_rng([seed, tag, ...]).
STREAM_CLIENT = 1
STREAM_DELAY = 2
STREAM_ARRIVAL = 3
STREAM_SAMPLING = 4


def client_stream(seed: int, client_id: int, round_index: int) -> np.random.Generator:
    """Batch-sampling stream of a client's round, shared by every scheduler."""
    return np.random.default_rng([seed, STREAM_CLIENT, client_id, round_index])


def delay_stream(seed: int, client_id: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, STREAM_DELAY, client_id, round_index])


def arrival_stream(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, STREAM_ARRIVAL])


def sampling_stream(seed: int, round_index: int) -> np.random.Generator:
    return np.random.default_rng([seed, STREAM_SAMPLING, round_index])
