"""Self-describing binary checkpoints.

Layout: 4-byte magic, little-endian uint32 header length, UTF-8 JSON
header, then the payload of concatenated little-endian float32 arrays.
The header indexes every parameter and every batch-norm running-statistic
buffer by name with (dtype, shape, offset, kind). Round trips are
bit-exact; sorted-key JSON keeps repeated saves byte-identical.
"""

from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np

from .errors import CheckpointError
from .model import Model, ModelConfig

MAGIC = b"GCBL"
FORMAT_VERSION = 1


def get_state(model: Model) -> dict[str, np.ndarray]:
    """Copy of every parameter and buffer, keyed by path."""
    state = {name: v.data.copy() for name, v in model.named_parameters()}
    state.update({f"{name}@buffer": arr.copy() for name, arr in model.named_buffers()})
    return state


def set_state(model: Model, state: dict[str, np.ndarray]) -> None:
    for name, v in model.named_parameters():
        v.data = state[name].copy()
    for name, arr in model.named_buffers():
        arr[:] = state[f"{name}@buffer"]


def save_checkpoint(model: Model, path: str | Path) -> None:
    index: dict[str, dict] = {}
    chunks: list[bytes] = []
    offset = 0
    entries = [(name, v.data, "param") for name, v in model.named_parameters()]
    entries += [(name, arr, "buffer") for name, arr in model.named_buffers()]
    for name, array, kind in entries:
        raw = np.ascontiguousarray(array, dtype="<f4").tobytes()
        index[name] = {"dtype": "float32", "shape": list(array.shape), "offset": offset, "kind": kind}
        chunks.append(raw)
        offset += len(raw)

    header = {
        "format_version": FORMAT_VERSION,
        "model_config": model.config.to_dict(),
        "parameters": index,
    }
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        for raw in chunks:
            fh.write(raw)


def read_header(path: str | Path) -> tuple[dict, bytes]:
    path = Path(path)
    try:
        blob = path.read_bytes()
    except FileNotFoundError:
        raise CheckpointError(f"checkpoint not found: {path}") from None
    if len(blob) < 8 or blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (header_len,) = struct.unpack("<I", blob[4:8])
    if len(blob) < 8 + header_len:
        raise CheckpointError(f"{path}: truncated header")
    try:
        header = json.loads(blob[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: corrupt header ({exc})") from None
    if header.get("format_version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: format version {header.get('format_version')} not supported (expected {FORMAT_VERSION})"
        )
    return header, blob[8 + header_len :]


def load_checkpoint(path: str | Path, expected_config: ModelConfig | None = None, seed: int = 0) -> Model:
    """Rebuild the model stored at `path`.

    When expected_config is given, the stored config must match it exactly;
    the error names each differing field.
    """
    header, payload = read_header(path)
    config = ModelConfig.from_dict(header["model_config"])
    if expected_config is not None and config != expected_config:
        diffs = [
            f"{name} (checkpoint {getattr(config, name)!r} != expected {getattr(expected_config, name)!r})"
            for name in config.__dataclass_fields__
            if getattr(config, name) != getattr(expected_config, name)
        ]
        raise CheckpointError(f"{path}: model config mismatch: {'; '.join(diffs)}")

    model = Model(config, seed=seed)
    index = dict(header["parameters"])
    params = dict(model.named_parameters())
    buffers = dict(model.named_buffers())
    expected = [(name, v.data, "param") for name, v in params.items()]
    expected += [(name, arr, "buffer") for name, arr in buffers.items()]
    for name, current, kind in expected:
        entry = index.pop(name, None)
        if entry is None:
            raise CheckpointError(f"{path}: checkpoint is missing parameter {name!r}")
        if tuple(entry["shape"]) != current.shape or entry["kind"] != kind:
            raise CheckpointError(
                f"{path}: parameter {name!r} has shape {entry['shape']} (kind {entry['kind']}), "
                f"expected {list(current.shape)} ({kind})"
            )
        start = entry["offset"]
        count = int(np.prod(entry["shape"], dtype=np.int64)) if entry["shape"] else 1
        end = start + 4 * count
        if end > len(payload):
            raise CheckpointError(f"{path}: truncated payload while reading {name!r}")
        array = np.frombuffer(payload[start:end], dtype="<f4").reshape(entry["shape"]).astype(np.float32)
        if kind == "param":
            params[name].data = array
        else:
            buffers[name][:] = array
    if index:
        raise CheckpointError(f"{path}: unknown parameter names in checkpoint: {sorted(index)}")
    return model
