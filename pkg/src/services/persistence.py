from __future__ import annotations

import hashlib
import json
import logging
import struct
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from pydantic import ValidationError

from src.config import ForestConfig, RunConfig
from src.core.errors import (
    BadFormat,
    ChecksumMismatch,
    Inconsistent,
    Truncated,
    VersionMismatch,
)
from src.core.forest import DecisionTree, Forest
from src.core.model import Model
from src.core.specialists import RowKey

logger = logging.getLogger(__name__)

# Container layout (all integers little-endian):
#   "HGCL" | u32 version | u64 header length | JSON header (UTF-8)
#   | u64 payload length | payload: raw arrays listed in header["arrays"] | sha256(all above)
MAGIC = b"HGCL"
FORMAT_VERSION = 1
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_DIGEST = 32

TREE_ARRAYS: tuple[tuple[str, str], ...] = (
    ("feature", "<i8"),
    ("threshold", "<f8"),
    ("left", "<i8"),
    ("right", "<i8"),
    ("value", "<f8"),
    ("train_count", "<i8"),
)


def pack_container(header: dict[str, Any], arrays: Sequence[np.ndarray]) -> bytes:
    """Encode a header and raw arrays into the versioned, checksummed container."""
    head = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = b"".join(np.ascontiguousarray(a).tobytes() for a in arrays)
    body = b"".join(
        [
            MAGIC,
            _U32.pack(FORMAT_VERSION),
            _U64.pack(len(head)),
            head,
            _U64.pack(len(payload)),
            payload,
        ]
    )
    return body + hashlib.sha256(body).digest()


def unpack_container(blob: bytes) -> tuple[dict[str, Any], bytes]:
    """Validate framing and checksum; return (header, payload)."""
    if len(blob) < len(MAGIC) or blob[: len(MAGIC)] != MAGIC:
        raise BadFormat("not a hedgeclipper model file (bad magic)")
    pos = len(MAGIC)

    def take(n: int) -> bytes:
        nonlocal pos
        if pos + n > len(blob):
            raise Truncated(f"file ends at byte {len(blob)}, needed {pos + n}")
        chunk = blob[pos:pos + n]
        pos += n
        return chunk

    (version,) = _U32.unpack(take(_U32.size))
    if version != FORMAT_VERSION:
        raise VersionMismatch(f"model format version {version}, this build reads {FORMAT_VERSION}")
    (head_len,) = _U64.unpack(take(_U64.size))
    head = take(head_len)
    (payload_len,) = _U64.unpack(take(_U64.size))
    payload = take(payload_len)
    body_end = pos
    digest = take(_DIGEST)
    if pos != len(blob):
        raise BadFormat(f"{len(blob) - pos} trailing bytes after the checksum")
    if hashlib.sha256(blob[:body_end]).digest() != digest:
        raise ChecksumMismatch("model file checksum does not match its contents")
    try:
        header = json.loads(head.decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise BadFormat(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise BadFormat("header must be a JSON object")
    return header, payload


def _model_header(model: Model) -> tuple[dict[str, Any], list[np.ndarray]]:
    arrays: list[np.ndarray] = []
    table: list[dict[str, Any]] = []
    for t, tree in enumerate(model.forest.trees):
        for name, dtype in TREE_ARRAYS:
            arr = getattr(tree, name).astype(dtype)
            arrays.append(arr)
            table.append({"name": f"tree{t}.{name}", "dtype": dtype, "length": int(arr.size)})
    header = {
        "format": "hedgeclipper-model",
        "config": model.config.model_dump(mode="json"),
        "forest": {
            "config": model.forest.config.model_dump(mode="json"),
            "n_features": model.forest.n_features,
            "min_leaf": model.forest.min_leaf,
            "num_trees": len(model.forest.trees),
        },
        "num_rows": model.num_rows,
        "rows": [key.to_list() for key in model.keys],
        "row_scale": model.row_scale.tolist(),
        "b": model.b.tolist(),
        "sigma": model.sigma.tolist(),
        "alpha": float(model.alpha),
        "arrays": table,
    }
    return header, arrays


def save_model(model: Model, path: str | Path) -> None:
    """Write `model`; the bytes depend only on the model, so equal models give equal files."""
    header, arrays = _model_header(model)
    Path(path).write_bytes(pack_container(header, arrays))
    logger.info("saved model with %d rows to %s", model.num_rows, path)


def _array_table(header: dict[str, Any]) -> list[tuple[str, np.dtype, int]]:
    return [
        (str(entry["name"]), np.dtype(entry["dtype"]), int(entry["length"]))
        for entry in header["arrays"]
    ]


def _read_arrays(table: list[tuple[str, np.dtype, int]], payload: bytes) -> dict[str, np.ndarray]:
    out: dict[str, np.ndarray] = {}
    offset = 0
    for name, dtype, length in table:
        nbytes = dtype.itemsize * length
        if length < 0 or offset + nbytes > len(payload):
            raise Inconsistent(f"array {name} runs past the payload")
        raw = np.frombuffer(payload, dtype=dtype, count=length, offset=offset)
        out[name] = raw.astype(dtype.newbyteorder("="))
        offset += nbytes
    if offset != len(payload):
        raise Inconsistent("payload holds bytes not described by the array table")
    return out


def load_model(path: str | Path) -> Model:
    """
    Read a model written by `save_model`.

    Raises
    ------
    BadFormat, VersionMismatch, Truncated, ChecksumMismatch
        Framing problems.
    Inconsistent
        The header's declared sizes disagree with each other or with the payload.
    """
    header, payload = unpack_container(Path(path).read_bytes())
    try:
        num_rows = int(header["num_rows"])
        rows = [RowKey.from_list(item) for item in header["rows"]]
        vectors = {k: np.asarray(header[k], dtype=np.float64) for k in ("row_scale", "b", "sigma")}
        forest_meta = header["forest"]
        config = RunConfig.model_validate(header["config"])
        forest_config = ForestConfig.model_validate(forest_meta["config"])
        alpha = float(header["alpha"])
        num_trees = int(forest_meta["num_trees"])
        n_features = int(forest_meta["n_features"])
        min_leaf = int(forest_meta["min_leaf"])
        table = _array_table(header)
    except (KeyError, TypeError, ValueError, ValidationError) as exc:
        raise BadFormat(f"header is missing or mistyping a field: {exc}") from None

    for name, vec in vectors.items():
        if vec.shape != (num_rows,):
            raise Inconsistent(f"header declares {num_rows} rows but `{name}` has {vec.size}")
    if len(rows) != num_rows:
        raise Inconsistent(f"header declares {num_rows} rows but lists {len(rows)}")
    arrays = _read_arrays(table, payload)

    trees = []
    for t in range(num_trees):
        try:
            parts = {name: arrays[f"tree{t}.{name}"] for name, _ in TREE_ARRAYS}
        except KeyError as exc:
            raise Inconsistent(f"missing tree array {exc}") from None
        if len({a.size for a in parts.values()}) != 1:
            raise Inconsistent(f"tree {t} arrays have different lengths")
        trees.append(DecisionTree(**parts))
    for key in rows:
        if key.tree >= len(trees):
            raise Inconsistent(f"row {key} refers to a missing tree")
        if key.kind == "leaf" and not (
            0 <= key.leaf < trees[key.tree].num_nodes and trees[key.tree].feature[key.leaf] == -1
        ):
            raise Inconsistent(f"row {key} does not name a leaf")

    try:
        forest = Forest(
            trees=tuple(trees),
            config=forest_config,
            n_features=n_features,
            min_leaf=min_leaf,
        )
        return Model(
            forest=forest,
            keys=tuple(rows),
            row_scale=vectors["row_scale"],
            b=vectors["b"],
            sigma=vectors["sigma"],
            alpha=alpha,
            config=config,
        )
    except ValueError as exc:
        raise Inconsistent(str(exc)) from None
