"""Bit-exact binary checkpoints of named parameter arrays.

Layout: magic "TRRG" (4 bytes), version uint32 LE = 1, entry count
uint32 LE; per entry: name length uint16 LE, UTF-8 name, rank uint8,
each dim uint32 LE, then row-major IEEE-754 32-bit LE values.

The producing configuration and the vocabulary ride along as reserved
entries "__config__" and "__vocab__": their UTF-8 byte streams stored one
byte per float32 value, so the container format stays uniform.
"""

import json
import struct

import numpy as np

from .config import ModelConfig

MAGIC = b"TRRG"
VERSION = 1

CONFIG_ENTRY = "__config__"
VOCAB_ENTRY = "__vocab__"


class CheckpointError(ValueError):
    """Raised for unreadable or mismatched checkpoint files."""


def _text_to_array(text):
    return np.frombuffer(text.encode("utf-8"), dtype=np.uint8).astype(np.float32)


def _array_to_text(arr):
    return bytes(np.asarray(arr).astype(np.uint8)).decode("utf-8")


def write_arrays(path, arrays):
    """Write named float32 arrays in insertion order."""
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<II", VERSION, len(arrays)))
        for name, arr in arrays.items():
            arr = np.ascontiguousarray(arr, dtype="<f4")
            encoded = name.encode("utf-8")
            fh.write(struct.pack("<H", len(encoded)))
            fh.write(encoded)
            fh.write(struct.pack("<B", arr.ndim))
            for dim in arr.shape:
                fh.write(struct.pack("<I", dim))
            fh.write(arr.tobytes())


def read_arrays(path):
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {blob[:4]!r}")
    version, count = struct.unpack_from("<II", blob, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    arrays = {}
    offset = 12
    try:
        for _ in range(count):
            (name_len,) = struct.unpack_from("<H", blob, offset)
            offset += 2
            name = blob[offset : offset + name_len].decode("utf-8")
            offset += name_len
            (rank,) = struct.unpack_from("<B", blob, offset)
            offset += 1
            shape = struct.unpack_from(f"<{rank}I", blob, offset)
            offset += 4 * rank
            size = int(np.prod(shape, dtype=np.int64)) if rank else 1
            data = np.frombuffer(blob, dtype="<f4", count=size, offset=offset)
            offset += 4 * size
            arrays[name] = data.reshape(shape).copy()
    except (struct.error, ValueError) as err:
        raise CheckpointError(f"{path}: truncated or corrupt ({err})") from err
    return arrays


def save_model(path, params, config, vocab_tokens):
    """Persist model parameters together with their config and vocabulary."""
    arrays = {
        CONFIG_ENTRY: _text_to_array(json.dumps(config.to_dict(), sort_keys=True)),
        VOCAB_ENTRY: _text_to_array("\n".join(vocab_tokens)),
    }
    for name, tensor in params.items():
        arrays[name] = tensor.data
    write_arrays(path, arrays)


def load_model(path):
    """Return (param arrays, ModelConfig, vocabulary tokens)."""
    arrays = read_arrays(path)
    for entry in (CONFIG_ENTRY, VOCAB_ENTRY):
        if entry not in arrays:
            raise CheckpointError(f"{path}: missing reserved entry {entry}")
    config = ModelConfig.from_dict(json.loads(_array_to_text(arrays.pop(CONFIG_ENTRY))))
    vocab_tokens = _array_to_text(arrays.pop(VOCAB_ENTRY)).split("\n")
    return arrays, config, vocab_tokens


def load_into(params, arrays, names=None):
    """Copy checkpoint arrays into model parameters by name.

    Raises a CheckpointError naming the first tensor that is missing or
    whose shape disagrees.
    """
    for name in names if names is not None else params:
        if name not in arrays:
            raise CheckpointError(f"checkpoint is missing tensor {name!r}")
        if tuple(arrays[name].shape) != tuple(params[name].shape):
            raise CheckpointError(
                f"tensor {name!r} shape {arrays[name].shape} does not match "
                f"model shape {params[name].shape}"
            )
        params[name].data = arrays[name].astype(params[name].data.dtype)
