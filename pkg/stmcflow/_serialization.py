"""
This Source Code Form is subject to the terms of the Mozilla Public
License, v. 2.0. If a copy of the MPL was not distributed with this
file, You can obtain one at http://mozilla.org/MPL/2.0/.

Copyright (C) 2026 stmcflow contributors
"""

from __future__ import annotations

import csv
import hashlib
from collections.abc import Iterable, Sequence
from pathlib import Path
from typing import Any, TypeVar

import msgspec
import numpy as np

T = TypeVar("T")

SCHEMA_VERSION = 1


def _enc_hook(obj: Any) -> Any:  # noqa: ANN401
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, Path):
        return str(obj)
    msg = f"Objects of type {type(obj)} are not supported"
    raise NotImplementedError(msg)


_encoder = msgspec.json.Encoder(enc_hook=_enc_hook, order="deterministic")


def encode(obj: Any) -> bytes:  # noqa: ANN401
    # floats are written with shortest round-trip repr, so reloading is bit-exact
    return msgspec.json.format(_encoder.encode(obj), indent=2)


def decode(raw: bytes, type: type[T]) -> T:  # noqa: A002
    return msgspec.json.decode(raw, type=type)


def write_json(path: Path, obj: Any) -> None:  # noqa: ANN401
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(encode(obj))


def read_json(path: Path, type: type[T]) -> T:  # noqa: A002
    return decode(path.read_bytes(), type)


def _cell(value: object) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, columns: Sequence[str], rows: Iterable[Sequence[object]]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="", encoding="utf-8") as fp:
        writer = csv.writer(fp)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(v) for v in row])


def read_csv(path: Path) -> list[dict[str, str]]:
    with path.open(newline="", encoding="utf-8") as fp:
        return list(csv.DictReader(fp))


def sha256(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()
