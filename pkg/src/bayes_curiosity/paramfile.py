"""Flat parameter files: a text header followed by little-endian float64 data.

Layout::

    line 1   b"BCPARAM <kind> <version>\\n"
    line 2   JSON object (header), terminated by b"\\n"
    rest     float64 little-endian, the named arrays concatenated in header order

The header must contain ``"arrays": [[name, length], ...]`` describing the
payload; any other keys are free-form metadata (layer sizes, activations).
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .errors import InvalidArgument

VERSION = 1


def write_param_file(path, kind: str, header: dict, arrays: dict[str, np.ndarray]) -> None:
    header = dict(header)
    header["arrays"] = [[name, int(np.asarray(a).size)] for name, a in arrays.items()]
    payload = np.concatenate([np.asarray(a, dtype="<f8").ravel() for a in arrays.values()])
    with open(path, "wb") as fh:
        fh.write(f"BCPARAM {kind} {VERSION}\n".encode())
        fh.write(json.dumps(header, sort_keys=True).encode() + b"\n")
        fh.write(payload.astype("<f8").tobytes())


def read_param_file(path, kind: str) -> tuple[dict, dict[str, np.ndarray]]:
    data = Path(path).read_bytes()
    first = data.find(b"\n")
    second = data.find(b"\n", first + 1)
    if first < 0 or second < 0:
        raise InvalidArgument(f"{path}: truncated parameter file")
    magic = data[:first].decode(errors="replace").split()
    if len(magic) != 3 or magic[0] != "BCPARAM" or magic[1] != kind:
        raise InvalidArgument(f"{path}: expected a {kind!r} parameter file, found {magic}")
    if int(magic[2]) != VERSION:
        raise InvalidArgument(f"{path}: unsupported version {magic[2]}")
    header = json.loads(data[first + 1:second])
    payload = np.frombuffer(data[second + 1:], dtype="<f8")
    arrays = {}
    offset = 0
    for name, length in header["arrays"]:
        arrays[name] = payload[offset:offset + length].astype(np.float64)
        offset += length
    if offset != payload.size:
        raise InvalidArgument(f"{path}: payload has {payload.size} values, header describes {offset}")
    return header, arrays
