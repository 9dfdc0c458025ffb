"""Versioned checkpoint container.

Layout (little-endian)::

    b"XVCK"  u16 version  u32 manifest_len  manifest (canonical JSON, utf-8)
    float64 parameter blobs in manifest order
    u32 crc32 of everything above

The manifest holds the system spec, training metadata and the ordered
``[name, shape]`` list.  Serialisation is canonical (sorted keys, fixed
separators), so saving a loaded, unmodified checkpoint reproduces its bytes.
"""

import json
import struct
import zlib
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import BadMagicError, ChecksumError, TruncatedError, VersionError
from .system import build_system

MAGIC = b"XVCK"
VERSION = 1


@dataclass
class Checkpoint:
    spec: dict
    state: dict
    epoch: Optional[int] = None
    dev_per: Optional[float] = None
    meta: dict = field(default_factory=dict)

    @classmethod
    def from_system(cls, system, epoch=None, dev_per=None, meta=None):
        return cls(system.spec, system.state_dict(), epoch, dev_per, dict(meta or {}))

    def to_system(self):
        system = build_system(self.spec)
        system.load_state_dict(self.state)
        return system

    def to_bytes(self):
        names = list(self.state)
        manifest = {
            "format": "xview-checkpoint",
            "spec": self.spec,
            "epoch": self.epoch,
            "dev_per": self.dev_per,
            "meta": self.meta,
            "params": [[n, list(self.state[n].shape)] for n in names],
        }
        raw = json.dumps(manifest, sort_keys=True, separators=(",", ":"),
                         allow_nan=False).encode("utf-8")
        parts = [MAGIC, struct.pack("<HI", VERSION, len(raw)), raw]
        parts += [np.ascontiguousarray(self.state[n], dtype="<f8").tobytes() for n in names]
        body = b"".join(parts)
        return body + struct.pack("<I", zlib.crc32(body))

    @classmethod
    def from_bytes(cls, buf):
        buf = memoryview(buf)
        if len(buf) < 4 or bytes(buf[:4]) != MAGIC:
            raise BadMagicError("not an xview checkpoint")
        if len(buf) < 10:
            raise TruncatedError("checkpoint header truncated")
        version, mlen = struct.unpack("<HI", buf[4:10])
        if version != VERSION:
            raise VersionError(f"unsupported checkpoint version {version}")
        pos = 10 + mlen
        if pos > len(buf):
            raise TruncatedError("checkpoint manifest truncated")
        try:
            manifest = json.loads(bytes(buf[10:pos]).decode("utf-8"))
            entries = [(str(n), tuple(int(s) for s in shape)) for n, shape in manifest["params"]]
        except (ValueError, KeyError, TypeError):
            raise ChecksumError("checkpoint manifest is corrupt") from None
        state = {}
        for name, shape in entries:
            nbytes = 8 * int(np.prod(shape, dtype=np.int64))
            if pos + nbytes > len(buf):
                raise TruncatedError(f"checkpoint payload truncated in {name!r}")
            state[name] = np.frombuffer(buf[pos:pos + nbytes], dtype="<f8").astype(
                np.float64).reshape(shape)
            pos += nbytes
        if pos + 4 > len(buf):
            raise TruncatedError("checkpoint checksum missing")
        (crc,) = struct.unpack("<I", buf[pos:pos + 4])
        if pos + 4 != len(buf):
            raise ChecksumError("trailing bytes after checkpoint payload")
        if zlib.crc32(buf[:pos]) != crc:
            raise ChecksumError("checkpoint checksum mismatch")
        return cls(manifest["spec"], state, manifest.get("epoch"), manifest.get("dev_per"),
                   manifest.get("meta") or {})


def save_checkpoint(ckpt, path):
    with open(path, "wb") as fh:
        fh.write(ckpt.to_bytes())


def load_checkpoint(path):
    with open(path, "rb") as fh:
        return Checkpoint.from_bytes(fh.read())
