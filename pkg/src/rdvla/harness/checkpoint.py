"""Single-file binary checkpoints with CRC32-checksummed sections.

Layout (little endian)::

    magic[8] | version u32 | n_sections u32
    then per section: tag[4] | length u64 | crc32 u32 | payload[length]

Sections: CONF (config JSON), PARM (tensors), OPTM (optimizer scalars JSON +
moment tensors), RNGS (bit-generator states JSON), STEP (u64).  Tensors are
stored as name, dtype string, shape and the row-major payload.
"""

from __future__ import annotations

import io
import json
import os
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from ..errors import IncompatibleVersionError, IntegrityError

MAGIC = b"RDCKPT\x00\x01"
VERSION = 1
_HEAD = struct.Struct("<8sII")
_SEC = struct.Struct("<4sQI")


@dataclass
class Checkpoint:
    version: int
    config: dict
    params: dict
    optimizer: dict | None
    rng: dict | None
    step: int


def _pack_tensors(tensors):
    buf = io.BytesIO()
    buf.write(struct.pack("<I", len(tensors)))
    for name, arr in tensors.items():
        arr = np.asarray(arr, order="C")
        raw_name = name.encode()
        dt = arr.dtype.str.encode()
        buf.write(struct.pack("<H", len(raw_name)) + raw_name)
        buf.write(struct.pack("<B", len(dt)) + dt)
        buf.write(struct.pack("<B", arr.ndim))
        buf.write(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        buf.write(arr.tobytes())
    return buf.getvalue()


def _unpack_tensors(payload):
    view = memoryview(payload)
    pos = 0

    def take(n):
        nonlocal pos
        if pos + n > len(view):
            raise IntegrityError("tensor section ends early")
        out = bytes(view[pos : pos + n])
        pos += n
        return out

    (count,) = struct.unpack("<I", take(4))
    out = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (dlen,) = struct.unpack("<B", take(1))
        dtype = np.dtype(take(dlen).decode())
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}Q", take(8 * ndim))
        size = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
        out[name] = np.frombuffer(take(size), dtype=dtype).reshape(shape).copy()
    if pos != len(view):
        raise IntegrityError("trailing bytes in tensor section")
    return out


def _json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode()


def capture(policy, trainer=None, config=None):
    """Snapshot live objects into a Checkpoint (arrays are copies)."""
    if trainer is None:
        return Checkpoint(VERSION, config or {}, policy.state_dict(), None, None, 0)
    st = trainer.state_dict()
    rng = {"rng": st["rng"], "sampler_rng": st["sampler_rng"]}
    return Checkpoint(VERSION, config or {}, policy.state_dict(), st["optimizer"], rng, st["step"])


def encode(ckpt: Checkpoint):
    sections = [(b"CONF", _json(ckpt.config)), (b"PARM", _pack_tensors(ckpt.params))]
    if ckpt.optimizer is not None:
        opt = ckpt.optimizer
        moments = {f"m/{k}": v for k, v in opt["m"].items()}
        moments.update({f"v/{k}": v for k, v in opt["v"].items()})
        meta = _json({"t": opt["t"]})
        sections.append((b"OPTM", struct.pack("<I", len(meta)) + meta + _pack_tensors(moments)))
    if ckpt.rng is not None:
        sections.append((b"RNGS", _json(ckpt.rng)))
    sections.append((b"STEP", struct.pack("<Q", ckpt.step)))
    out = [_HEAD.pack(MAGIC, VERSION, len(sections))]
    for tag, payload in sections:
        out.append(_SEC.pack(tag, len(payload), zlib.crc32(payload)))
        out.append(payload)
    return b"".join(out)


def save_checkpoint(path, policy, trainer=None, config=None):
    """Write atomically via a temporary sibling file."""
    data = encode(capture(policy, trainer, config))
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)
    return data


def decode_checkpoint(data):
    if len(data) < _HEAD.size:
        raise IntegrityError("file too short for a checkpoint header")
    magic, version, count = _HEAD.unpack_from(data, 0)
    if magic != MAGIC:
        raise IntegrityError("bad magic bytes; not a checkpoint")
    if version != VERSION:
        raise IncompatibleVersionError(f"checkpoint format version {version}, this build reads {VERSION}")
    pos = _HEAD.size
    sections = {}
    for _ in range(count):
        if pos + _SEC.size > len(data):
            raise IntegrityError("truncated section header")
        tag, length, crc = _SEC.unpack_from(data, pos)
        pos += _SEC.size
        payload = data[pos : pos + length]
        if len(payload) != length:
            raise IntegrityError(f"section {tag!r} truncated")
        if zlib.crc32(payload) != crc:
            raise IntegrityError(f"checksum mismatch in section {tag!r}")
        sections[tag] = payload
        pos += length
    if pos != len(data):
        raise IntegrityError("trailing bytes after last section")
    for need in (b"CONF", b"PARM", b"STEP"):
        if need not in sections:
            raise IntegrityError(f"missing section {need!r}")

    optimizer = rng = None
    if b"OPTM" in sections:
        raw = sections[b"OPTM"]
        (mlen,) = struct.unpack_from("<I", raw, 0)
        meta = json.loads(raw[4 : 4 + mlen])
        moments = _unpack_tensors(raw[4 + mlen :])
        optimizer = {
            "t": meta["t"],
            "m": {k[2:]: v for k, v in moments.items() if k.startswith("m/")},
            "v": {k[2:]: v for k, v in moments.items() if k.startswith("v/")},
        }
    if b"RNGS" in sections:
        rng = json.loads(sections[b"RNGS"])
    (step,) = struct.unpack("<Q", sections[b"STEP"])
    return Checkpoint(version, json.loads(sections[b"CONF"]), _unpack_tensors(sections[b"PARM"]), optimizer, rng, step)


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_checkpoint(fh.read())


def restore(ckpt: Checkpoint, policy, trainer=None):
    policy.load_state_dict(ckpt.params)
    if trainer is not None:
        if ckpt.optimizer is None or ckpt.rng is None:
            raise IntegrityError("checkpoint has no optimizer/RNG state to resume from")
        trainer.load_state_dict({"step": ckpt.step, "optimizer": ckpt.optimizer, **ckpt.rng})
