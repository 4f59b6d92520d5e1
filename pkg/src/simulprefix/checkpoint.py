"""Versioned binary checkpoint container.

Layout (all integers little-endian uint32, floats little-endian float64)::

    b"ADCK"  version  len(arch) arch-utf8  len(header) header-json-utf8
    n_tensors
    repeated n_tensors times:
        len(name) name-utf8  ndim  dim_1 .. dim_ndim  values (row-major)

The JSON header holds the model config, the architecture fingerprint,
both vocabularies (token lists without the reserved entries) and
training metadata. Tensors appear in the model's fixed parameter order.
"""

from __future__ import annotations

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import CompatibilityError, FormatError
from .textio import Vocabulary

MAGIC = b"ADCK"
VERSION = 1


def fingerprint(arch, architecture: dict) -> str:
    blob = json.dumps({"arch": arch, **architecture}, sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class Checkpoint:
    arch: str
    config: dict
    architecture: dict
    params: dict  # name -> ndarray, insertion order is the serialization order
    src_vocab: Vocabulary
    tgt_vocab: Vocabulary
    meta: dict = field(default_factory=dict)

    @property
    def fingerprint(self):
        return fingerprint(self.arch, self.architecture)

    def require(self, arch, architecture=None):
        if self.arch != arch:
            raise CompatibilityError(f"checkpoint holds a {self.arch!r} model, expected {arch!r}")
        if architecture is not None and fingerprint(arch, architecture) != self.fingerprint:
            raise CompatibilityError(
                f"architecture fingerprint {self.fingerprint} does not match "
                f"{fingerprint(arch, architecture)}")

    def to_bytes(self) -> bytes:
        header = json.dumps({
            "config": self.config,
            "architecture": self.architecture,
            "fingerprint": self.fingerprint,
            "src_vocab": self.src_vocab.tokens,
            "tgt_vocab": self.tgt_vocab.tokens,
            "meta": self.meta,
        }, sort_keys=True).encode("utf-8")
        arch = self.arch.encode("utf-8")
        out = [MAGIC, struct.pack("<I", VERSION),
               struct.pack("<I", len(arch)), arch,
               struct.pack("<I", len(header)), header,
               struct.pack("<I", len(self.params))]
        for name, value in self.params.items():
            value = np.ascontiguousarray(value, dtype="<f8")
            raw = name.encode("utf-8")
            out.append(struct.pack("<I", len(raw)) + raw)
            out.append(struct.pack(f"<{1 + value.ndim}I", value.ndim, *value.shape))
            out.append(value.tobytes())
        return b"".join(out)

    @classmethod
    def from_bytes(cls, blob: bytes) -> "Checkpoint":
        if blob[:4] != MAGIC:
            raise FormatError("not a checkpoint (bad magic)")
        pos = 4

        def u32():
            nonlocal pos
            (v,) = struct.unpack_from("<I", blob, pos)
            pos += 4
            return v

        def raw(n):
            nonlocal pos
            chunk = blob[pos:pos + n]
            if len(chunk) != n:
                raise FormatError("truncated checkpoint")
            pos += n
            return chunk

        version = u32()
        if version != VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        arch = raw(u32()).decode("utf-8")
        header = json.loads(raw(u32()).decode("utf-8"))
        params = {}
        for _ in range(u32()):
            name = raw(u32()).decode("utf-8")
            ndim = u32()
            shape = tuple(u32() for _ in range(ndim))
            count = int(np.prod(shape)) if shape else 1
            params[name] = np.frombuffer(raw(8 * count), dtype="<f8").reshape(shape).astype(np.float64)
        ckpt = cls(arch, header["config"], header["architecture"], params,
                   Vocabulary(header["src_vocab"]), Vocabulary(header["tgt_vocab"]),
                   header.get("meta", {}))
        if ckpt.fingerprint != header["fingerprint"]:
            raise FormatError("checkpoint fingerprint does not match its architecture")
        return ckpt

    def save(self, path):
        atomic_write_bytes(path, self.to_bytes())

    @classmethod
    def load(cls, path):
        return cls.from_bytes(Path(path).read_bytes())


def atomic_write_bytes(path, data: bytes):
    """Write via a temp file in the same directory and rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode("utf-8"))
