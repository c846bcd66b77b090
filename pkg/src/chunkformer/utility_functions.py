"""
     chunkformer: multi-stage chunked transformer encoder for long sequences
     Copyright (C), 2024 the chunkformer developers

     This program is free software: you can redistribute it and/or modify
     it under the terms of the GNU General Public License as published by
     the Free Software Foundation, either version 3 of the License, or
     (at your option) any later version.

     This program is distributed in the hope that it will be useful,
     but WITHOUT ANY WARRANTY; without even the implied warranty of
     MERCHANTABILITY or FITNESS FOR A PARTICULAR PURPOSE.  See the
     GNU General Public License for more details.

     You should have received a copy of the GNU General Public License
     along with this program.  If not, see <https://www.gnu.org/licenses/>.
"""

from __future__ import annotations
import hashlib
import json
import logging
import math
import typing as tp

import importlib_metadata

from .chunkformer_base import ConfigError, IngestionError


def aligned_length(length: int, chunk_sizes: tp.Sequence[int]) -> int:
    """Smallest L' >= length that every chunk size divides

    :raises IngestionError: if length is zero
    """
    if length < 1:
        raise IngestionError("cannot process an empty sequence")
    m = math.lcm(*chunk_sizes)
    return -(-length // m) * m


def check_chunk_sizes(chunk_sizes: tp.Sequence[int]) -> None:
    """Chunk sizes must be positive and strictly increasing"""
    if len(chunk_sizes) == 0:
        raise ConfigError("a ChunkFormer needs at least one stage")
    for i, k in enumerate(chunk_sizes):
        if not isinstance(k, int) or isinstance(k, bool) or k < 1:
            raise ConfigError(f"chunk size {k!r} of stage {i + 1} must be an int >= 1")
    if any(b <= a for a, b in zip(chunk_sizes, chunk_sizes[1:])):
        raise ConfigError(f"chunk sizes {list(chunk_sizes)} must strictly increase")


def canonical_json(obj: tp.Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def stable_hash(obj: tp.Any) -> str:
    """sha256 of the canonical json form of obj"""
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


def package_version() -> str:
    try:
        return importlib_metadata.version("chunkformer")
    except importlib_metadata.PackageNotFoundError:
        return "0+unknown"


def parse_override(item: str) -> tuple[str, str, tp.Any]:
    """Split "section.key=value" into its parts. The value is parsed as
    json, and kept as a string if that fails.

    :raises ConfigError: on a malformed item
    """
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    path, raw = item.split("=", 1)
    if path.count(".") != 1:
        raise ConfigError(f"override {item!r} must look like section.key=value")
    section, key = path.split(".")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    logging.debug(f"override {section}.{key} = {value!r}")
    return section, key, value


def plot_geometry(noo: int) -> tuple[tuple[float, float], tuple[int, int]]:
    """Figure size and (rows, columns) for noo panels"""
    if noo < 2:
        return (5, 4), (1, 1)
    if noo == 2:
        return (10, 4), (1, 2)
    if noo <= 4:
        return (10, 8), (2, 2)
    rows = math.ceil(noo / 3)
    return (15, 4 * rows), (rows, 3)
