"""Single-file binary checkpoints.

Layout (little-endian)::

    b"DRPOCKPT" | u32 version | u32 n | JSON header (n bytes) | blocks...

The header lists every block in order with its kind (``net`` or ``arr``),
name and byte length.  Networks use the diffcore serialization; arrays are
raw ``<f8`` with their shape in the header.  Files are written to a sibling
temporary path and renamed into place so a failed save never leaves a
partial checkpoint behind.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from .errors import CheckpointError

MAGIC = b"DRPOCKPT"
VERSION = 1
_U32 = struct.Struct("<I")


@dataclass
class Checkpoint:
    config_text: str
    config_hash: str
    networks: dict = field(default_factory=dict)
    arrays: dict = field(default_factory=dict)
    meta: dict = field(default_factory=dict)
    version: int = VERSION


def to_bytes(ckpt: Checkpoint) -> bytes:
    blocks, index = [], []
    for name, net in ckpt.networks.items():
        b = dc.network_to_bytes(net)
        blocks.append(b)
        index.append({"kind": "net", "name": name, "nbytes": len(b)})
    for name, arr in ckpt.arrays.items():
        a = np.ascontiguousarray(arr, dtype="<f8")
        b = a.tobytes()
        blocks.append(b)
        index.append({"kind": "arr", "name": name, "nbytes": len(b), "shape": list(a.shape)})
    header = {"config_hash": ckpt.config_hash, "config_text": ckpt.config_text,
              "meta": ckpt.meta, "blocks": index}
    hb = json.dumps(header, sort_keys=True).encode("utf-8")
    return MAGIC + _U32.pack(ckpt.version) + _U32.pack(len(hb)) + hb + b"".join(blocks)


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < len(MAGIC) + 8 or buf[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint (bad magic string)")
    off = len(MAGIC)
    (version,) = _U32.unpack_from(buf, off)
    if version != VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported "
                              f"(this build reads version {VERSION})")
    (n,) = _U32.unpack_from(buf, off + 4)
    off += 8
    try:
        header = json.loads(buf[off:off + n].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupt checkpoint header: {e}") from None
    off += n
    ckpt = Checkpoint(header["config_text"], header["config_hash"], meta=header["meta"],
                      version=version)
    for blk in header["blocks"]:
        end = off + blk["nbytes"]
        if end > len(buf):
            raise CheckpointError(f"checkpoint truncated inside block {blk['name']!r}")
        if blk["kind"] == "net":
            net, nxt = dc.network_from_bytes(buf[:end], off)
            if nxt != end:
                raise CheckpointError(f"network block {blk['name']!r} has inconsistent length")
            ckpt.networks[blk["name"]] = net
        else:
            ckpt.arrays[blk["name"]] = np.frombuffer(buf[off:end], dtype="<f8").reshape(
                blk["shape"]).astype(np.float64)
        off = end
    return ckpt


def save(path, ckpt: Checkpoint):
    path = os.fspath(path)
    tmp = path + ".tmp"
    data = to_bytes(ckpt)
    try:
        with open(tmp, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    finally:
        if os.path.exists(tmp):
            os.remove(tmp)
    return path


def load(path) -> Checkpoint:
    with open(path, "rb") as fh:
        return from_bytes(fh.read())


def restore_network(target: dc.NetworkParams, ckpt: Checkpoint, name):
    """Copy a stored network into ``target`` in place, checking shapes."""
    if name not in ckpt.networks:
        raise CheckpointError(f"checkpoint has no network {name!r}")
    src = ckpt.networks[name]
    if src.layer_dims != target.layer_dims or src.stacked != target.stacked or \
            [w.shape for w, _ in src.layers] != [w.shape for w, _ in target.layers]:
        raise CheckpointError(f"network {name!r} shape mismatch: checkpoint has "
                              f"{src.layer_dims}, expected {target.layer_dims}")
    for (tw, tb), (sw, sb) in zip(target.layers, src.layers):
        tw[...] = sw
        tb[...] = sb
    return target


def adam_to_arrays(prefix, state: dc.AdamState):
    out = {}
    for i, (m, v) in enumerate(zip(state.first_moment, state.second_moment)):
        out[f"{prefix}/m{i}"] = m
        out[f"{prefix}/v{i}"] = v
    out[f"{prefix}/t"] = np.array([state.step_count], dtype=np.float64)
    return out


def adam_from_arrays(prefix, ckpt: Checkpoint, state: dc.AdamState):
    for i, (m, v) in enumerate(zip(state.first_moment, state.second_moment)):
        try:
            m[...] = ckpt.arrays[f"{prefix}/m{i}"]
            v[...] = ckpt.arrays[f"{prefix}/v{i}"]
        except KeyError:
            raise CheckpointError(f"checkpoint lacks optimizer state {prefix!r}") from None
        except ValueError:
            raise CheckpointError(f"optimizer state {prefix!r} shape mismatch") from None
    state.step_count = int(ckpt.arrays[f"{prefix}/t"][0])
    return state
