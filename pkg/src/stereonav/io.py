"""Binary containers: feature tensors, model checkpoints, episode datasets.

All three share the same conventions: a 4-byte ASCII magic, a little-endian
u32 version, fixed-size little-endian integer headers, and float64
little-endian payloads. Readers never return partial state; a corrupt or
truncated file raises FormatError carrying the failing byte offset.

Feature container ("SWFT")
    magic, version, grid_h u32, grid_w u32, dim u32, frame_count u32,
    then frame_count * grid_h * grid_w * dim float64 values.

Checkpoint container ("SWCK")
    magic, version, u32 config-JSON length + bytes, u32 tensor count,
    then per tensor: u16 name length + name, u8 ndim, ndim * u32 dims,
    float64 values.

Dataset container ("SWEP")
    magic, version, u32 episode count, then per episode a u32 JSON length
    + UTF-8 JSON record.
"""

from __future__ import annotations

import json
import os
import struct
import tempfile

import numpy as np

from .errors import FormatError

FEATURE_MAGIC = b"SWFT"
CHECKPOINT_MAGIC = b"SWCK"
DATASET_MAGIC = b"SWEP"
FORMAT_VERSION = 1


class _Reader:
    def __init__(self, data):
        self.data = data
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.data):
            raise FormatError(f"truncated while reading {what}", offset=self.pos)
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def u8(self, what):
        return struct.unpack("<B", self.take(1, what))[0]

    def u16(self, what):
        return struct.unpack("<H", self.take(2, what))[0]

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]

    def f64_array(self, count, what):
        raw = self.take(count * 8, what)
        return np.frombuffer(raw, dtype="<f8").astype(np.float64)


def _check_header(reader, magic):
    got = reader.take(4, "magic")
    if got != magic:
        raise FormatError(f"bad magic {got!r}, expected {magic!r}", offset=0)
    version = reader.u32("version")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported version {version}", offset=4)


def _atomic_write(path, payload):
    # single-writer discipline: write a sibling temp file, then rename
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".swtmp-")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(payload)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


# -- feature tensors ----------------------------------------------------------


def encode_features(frames):
    """Pack per-frame feature grids, each (grid_h, grid_w, dim), into SWFT bytes."""
    frames = [np.asarray(f, dtype=np.float64) for f in frames]
    if not frames:
        raise ValueError("need at least one frame")
    gh, gw, dim = frames[0].shape
    for f in frames:
        if f.shape != (gh, gw, dim):
            raise ValueError("all frames must share one grid shape")
    head = FEATURE_MAGIC + struct.pack("<IIIII", FORMAT_VERSION, gh, gw, dim, len(frames))
    body = b"".join(f.astype("<f8").tobytes() for f in frames)
    return head + body


def decode_features(blob):
    """Inverse of encode_features; returns a (frames, grid_h, grid_w, dim) array."""
    r = _Reader(blob)
    _check_header(r, FEATURE_MAGIC)
    gh = r.u32("grid_h")
    gw = r.u32("grid_w")
    dim = r.u32("dim")
    n = r.u32("frame_count")
    values = r.f64_array(n * gh * gw * dim, "feature values")
    if r.pos != len(blob):
        raise FormatError("trailing bytes after feature payload", offset=r.pos)
    return values.reshape(n, gh, gw, dim)


def save_features(path, frames):
    _atomic_write(path, encode_features(frames))


def load_features(path):
    with open(path, "rb") as f:
        return decode_features(f.read())


# -- checkpoints ---------------------------------------------------------------


def encode_checkpoint(config_dict, named_arrays):
    cfg = json.dumps(config_dict, sort_keys=True).encode("utf-8")
    parts = [CHECKPOINT_MAGIC, struct.pack("<I", FORMAT_VERSION)]
    parts.append(struct.pack("<I", len(cfg)))
    parts.append(cfg)
    parts.append(struct.pack("<I", len(named_arrays)))
    for name, arr in named_arrays:
        arr = np.asarray(arr, dtype=np.float64)
        nb = name.encode("utf-8")
        parts.append(struct.pack("<H", len(nb)))
        parts.append(nb)
        parts.append(struct.pack("<B", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape) if arr.ndim else b"")
        parts.append(arr.astype("<f8").tobytes())
    return b"".join(parts)


def decode_checkpoint(blob):
    r = _Reader(blob)
    _check_header(r, CHECKPOINT_MAGIC)
    cfg_len = r.u32("config length")
    try:
        config = json.loads(r.take(cfg_len, "config json").decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as e:
        raise FormatError(f"invalid config json: {e}", offset=r.pos - cfg_len) from e
    count = r.u32("tensor count")
    named = []
    for _ in range(count):
        name_len = r.u16("name length")
        name = r.take(name_len, "name").decode("utf-8")
        ndim = r.u8("ndim")
        shape = tuple(r.u32("dim") for _ in range(ndim))
        n_values = int(np.prod(shape)) if shape else 1
        arr = r.f64_array(n_values, f"values of {name}").reshape(shape)
        named.append((name, arr))
    if r.pos != len(blob):
        raise FormatError("trailing bytes after checkpoint payload", offset=r.pos)
    return config, named


def save_checkpoint(path, config_dict, named_arrays):
    _atomic_write(path, encode_checkpoint(config_dict, named_arrays))


def load_checkpoint(path):
    with open(path, "rb") as f:
        return decode_checkpoint(f.read())


# -- episode datasets -----------------------------------------------------------


def encode_dataset(records):
    """Pack JSON-serializable episode records into SWEP bytes."""
    parts = [DATASET_MAGIC, struct.pack("<I", FORMAT_VERSION), struct.pack("<I", len(records))]
    for rec in records:
        payload = json.dumps(rec, sort_keys=True).encode("utf-8")
        parts.append(struct.pack("<I", len(payload)))
        parts.append(payload)
    return b"".join(parts)


def decode_dataset(blob):
    r = _Reader(blob)
    _check_header(r, DATASET_MAGIC)
    count = r.u32("episode count")
    records = []
    for _ in range(count):
        n = r.u32("episode length")
        start = r.pos
        try:
            records.append(json.loads(r.take(n, "episode json").decode("utf-8")))
        except (UnicodeDecodeError, json.JSONDecodeError) as e:
            raise FormatError(f"invalid episode json: {e}", offset=start) from e
    if r.pos != len(blob):
        raise FormatError("trailing bytes after dataset payload", offset=r.pos)
    return records


def save_dataset_records(path, records):
    _atomic_write(path, encode_dataset(records))


def load_dataset_records(path):
    with open(path, "rb") as f:
        return decode_dataset(f.read())
