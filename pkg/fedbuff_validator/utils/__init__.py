"""
Utility modules for fedbuff-validator.
"""

from fedbuff_validator.utils.helpers import (
    arrival_stream,
    canonical_json,
    client_stream,
    delay_stream,
    fingerprint,
    format_duration_for_display,
    format_float,
    load_json_file,
    model_checksum,
    sampling_stream,
    save_json_file,
)

__all__ = [
    "arrival_stream",
    "canonical_json",
    "client_stream",
    "delay_stream",
    "fingerprint",
    "format_duration_for_display",
    "format_float",
    "load_json_file",
    "model_checksum",
    "sampling_stream",
    "save_json_file",
]
