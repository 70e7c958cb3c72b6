"""Versioned, lossless checkpoint files.

A checkpoint is a flat map from canonical path to array, serialized as
text: one line per entry with the shape and C hex float literals, so
64-bit values round-trip exactly.  Model parameters, running statistics,
and optimizer state all travel through the same format.
"""
from __future__ import annotations

import numpy as np

MAGIC = "fairbn-checkpoint"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def save_checkpoint(path, arrays: dict[str, np.ndarray]) -> None:
    with open(path, "w") as fh:
        fh.write(f"{MAGIC} v{VERSION}\n")
        for name, arr in arrays.items():
            arr = np.asarray(arr, dtype=np.float64)
            shape = ",".join(str(d) for d in arr.shape)
            data = " ".join(float(v).hex() for v in arr.reshape(-1))
            fh.write(f"{name}|{shape}|{data}\n")


def load_checkpoint(path) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    with open(path) as fh:
        header = fh.readline().strip()
        if header != f"{MAGIC} v{VERSION}":
            raise CheckpointFormatError(
                f"unrecognized checkpoint header {header!r} in {path}"
            )
        for lineno, line in enumerate(fh, start=2):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("|")
            if len(parts) != 3:
                raise CheckpointFormatError(f"line {lineno}: expected 3 fields")
            name, shape_s, data = parts
            shape = tuple(int(d) for d in shape_s.split(",")) if shape_s else ()
            values = (
                np.array([float.fromhex(tok) for tok in data.split()])
                if data
                else np.empty(0)
            )
            expected = int(np.prod(shape)) if shape else 1
            if values.size != expected:
                raise CheckpointFormatError(
                    f"line {lineno}: {values.size} values for shape {shape}"
                )
            arrays[name] = values.reshape(shape)
    return arrays
