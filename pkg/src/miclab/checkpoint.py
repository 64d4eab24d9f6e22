"""Versioned binary checkpoints.

Layout: 8-byte magic, u32 format version, u64 header length, a JSON
header (run step, config, architecture, rng stream states, teacher and
discriminator bookkeeping, and a block table), then the named float64
parameter blocks back to back in table order.  Loading is the exact
bit-level inverse of saving, so save -> load -> save reproduces the
first file byte for byte.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import CheckpointError, ConfigError
from .models import ArchSpec
from .uda import TrainState, state_from_payload, state_payload

__all__ = ["save_checkpoint", "load_checkpoint", "peek_checkpoint",
           "CHECKPOINT_MAGIC", "FORMAT_VERSION"]

CHECKPOINT_MAGIC = b"MICLAB01"
FORMAT_VERSION = 1


def save_checkpoint(path: str, state: TrainState, config_dict: dict,
                    arch: ArchSpec) -> None:
    """Write ``state`` to ``path`` atomically (tmp file + rename)."""
    meta, blocks = state_payload(state, config_dict, arch)
    table = []
    payload = []
    for name in sorted(blocks):
        arr = np.ascontiguousarray(blocks[name], dtype=np.float64)
        table.append({"name": name, "shape": list(arr.shape)})
        payload.append(arr.tobytes())
    header = json.dumps({"meta": meta, "blocks": table},
                        sort_keys=True).encode("utf-8")
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(np.uint32(FORMAT_VERSION).tobytes())
        fh.write(np.uint64(len(header)).tobytes())
        fh.write(header)
        for chunk in payload:
            fh.write(chunk)
    os.replace(tmp, path)


def _read_header(fh, path):
    magic = fh.read(8)
    if len(magic) < 8 or magic != CHECKPOINT_MAGIC:
        raise CheckpointError(f"{path}: bad checkpoint magic {magic!r}")
    fixed = fh.read(12)
    if len(fixed) < 12:
        raise IOError(f"{path}: truncated checkpoint header")
    version = int(np.frombuffer(fixed[:4], dtype=np.uint32)[0])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"{path}: checkpoint format version {version}, "
                              f"this build reads {FORMAT_VERSION}")
    hlen = int(np.frombuffer(fixed[4:], dtype=np.uint64)[0])
    raw = fh.read(hlen)
    if len(raw) < hlen:
        raise IOError(f"{path}: truncated checkpoint header")
    try:
        return json.loads(raw.decode("utf-8"))
    except ValueError as e:
        raise CheckpointError(f"{path}: unreadable checkpoint header: {e}") from None


def peek_checkpoint(path: str) -> dict:
    """Header metadata only (step, config, arch, ...) without the blocks."""
    with open(path, "rb") as fh:
        return _read_header(fh, path)["meta"]


def load_checkpoint(path: str) -> tuple[TrainState, dict]:
    """Rebuild the saved TrainState; returns (state, config_dict).

    The config and architecture stored in the header drive the rebuild,
    so the caller needs nothing beyond the file.
    """
    from .config import config_from_dict  # local import, config imports uda

    with open(path, "rb") as fh:
        header = _read_header(fh, path)
        blocks = {}
        for entry in header["blocks"]:
            shape = tuple(int(d) for d in entry["shape"])
            nbytes = int(np.prod(shape, dtype=np.int64)) * 8
            raw = fh.read(nbytes)
            if len(raw) < nbytes:
                raise IOError(f"{path}: truncated block {entry['name']!r}")
            blocks[entry["name"]] = np.frombuffer(raw, dtype=np.float64).reshape(shape)
        if fh.read(1):
            raise CheckpointError(f"{path}: trailing bytes after the last block")
    meta = header["meta"]
    try:
        config = config_from_dict(meta["config"])
        arch = ArchSpec.from_dict(meta["arch"])
    except (KeyError, TypeError) as e:
        raise CheckpointError(f"{path}: malformed checkpoint metadata: {e}") from None
    state = state_from_payload(meta, blocks, config, arch)
    return state, meta["config"]
