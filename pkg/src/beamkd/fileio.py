"""Shared binary file helpers.

Every beamkd artifact file (channels, datasets, models) starts with a single
JSON header line terminated by ``\\n``, followed by a raw little-endian
payload. Helpers here read/write that structure and raise distinct errors
for each way a file can be broken.
"""

import json

import numpy as np


class FileFormatError(Exception):
    """Base class for artifact file format violations."""


class MalformedHeaderError(FileFormatError):
    """Header line missing, not valid JSON, or self-inconsistent."""


class UnsupportedVersionError(FileFormatError):
    """Header declares a format_version this build cannot read."""


class DimensionMismatchError(FileFormatError):
    """Payload size disagrees with the dimensions declared in the header."""


class TruncatedPayloadError(FileFormatError):
    """Payload ends before the header-declared size."""


def write_header(fh, header: dict) -> None:
    fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))


def read_header(fh, path: str = "") -> dict:
    line = fh.readline()
    if not line or not line.endswith(b"\n"):
        raise MalformedHeaderError(f"{path}: missing or unterminated header line")
    try:
        header = json.loads(line.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeaderError(f"{path}: header is not valid JSON ({exc})") from exc
    if not isinstance(header, dict):
        raise MalformedHeaderError(f"{path}: header must be a JSON object")
    return header


def check_version(header: dict, expected: int, path: str = "") -> None:
    version = header.get("format_version")
    if version != expected:
        raise UnsupportedVersionError(
            f"{path}: format_version {version!r} is not supported (expected {expected})"
        )


def read_payload(fh, expected_bytes: int, path: str = "") -> bytes:
    """Read the remainder of the file, which must be exactly `expected_bytes`."""
    data = fh.read()
    if len(data) < expected_bytes:
        raise TruncatedPayloadError(
            f"{path}: payload holds {len(data)} bytes, header implies {expected_bytes}"
        )
    if len(data) > expected_bytes:
        raise DimensionMismatchError(
            f"{path}: payload holds {len(data)} bytes but header dimensions imply "
            f"{expected_bytes}"
        )
    return data


def floats_from(data: bytes, offset: int, count: int) -> np.ndarray:
    return np.frombuffer(data, dtype="<f4", count=count, offset=offset)
