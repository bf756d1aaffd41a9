"""Binary parameter container shared by language model and SAE checkpoints.

Layout, all little-endian:

    magic      4 bytes   b"LGCK"
    version    uint32
    header_len uint32
    header     JSON, UTF-8: {"kind", "config", "params": [{"name", "shape"}, ...]}
    data       float64 values of every parameter, in header order, row-major
"""

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from src.errors import InputError

MAGIC = b"LGCK"
VERSION = 1
_PREFIX = struct.Struct("<4sII")


@dataclasses.dataclass
class Checkpoint:
    """A loaded checkpoint.

    Attributes:
        kind (str): What the parameters belong to, e.g. "lm" or "sae".
        config (dict): The configuration needed to rebuild the owner.
        params (dict[str, np.ndarray]): Parameters in declaration order.
    """

    kind: str
    config: dict
    params: dict[str, np.ndarray]


def save_checkpoint(path: Path, kind: str, config: dict, params: dict[str, np.ndarray]) -> None:
    """Writes parameters and their configuration to `path`."""
    header = json.dumps(
        {
            "kind": kind,
            "config": config,
            "params": [{"name": name, "shape": list(array.shape)} for name, array in params.items()],
        },
        sort_keys=True,
    ).encode("utf-8")
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as f:
        f.write(_PREFIX.pack(MAGIC, VERSION, len(header)))
        f.write(header)
        for array in params.values():
            f.write(np.ascontiguousarray(array, dtype="<f8").tobytes())


def load_checkpoint(path: Path, kind: str | None = None) -> Checkpoint:
    """Reads a checkpoint written by `save_checkpoint`.

    Args:
        path (Path): The checkpoint file.
        kind (str | None): If given, the kind the checkpoint must have.

    Raises:
        InputError: If the file is not a checkpoint, has another version or
            kind, or is truncated.
    """
    raw = path.read_bytes()
    if len(raw) < _PREFIX.size:
        raise InputError(f"{path} is too short to be a checkpoint")
    magic, version, header_len = _PREFIX.unpack_from(raw)
    if magic != MAGIC:
        raise InputError(f"{path} is not a checkpoint (bad magic {magic!r})")
    if version != VERSION:
        raise InputError(f"{path} has checkpoint version {version}, expected {VERSION}")
    header = json.loads(raw[_PREFIX.size : _PREFIX.size + header_len].decode("utf-8"))
    if kind is not None and header["kind"] != kind:
        raise InputError(f"{path} holds a {header['kind']} checkpoint, expected {kind}")

    offset = _PREFIX.size + header_len
    params = {}
    for entry in header["params"]:
        shape = tuple(entry["shape"])
        count = int(np.prod(shape, dtype=np.int64))
        end = offset + 8 * count
        if end > len(raw):
            raise InputError(f"{path} is truncated in parameter {entry['name']}")
        params[entry["name"]] = np.frombuffer(raw[offset:end], dtype="<f8").reshape(shape).astype(np.float64)
        offset = end
    return Checkpoint(kind=header["kind"], config=header["config"], params=params)
