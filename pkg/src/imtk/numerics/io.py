"""Binary tensor container.

Layout (all integers little-endian):
    magic   4 bytes  b"IMTK"
    version u32      currently 1
    count   u32      number of named entries
    entry*  count times:
        name_len u16, name utf-8
        rank     u32
        dims     rank x u64
        dtype    u8   (0 = float32, 1 = float64)
        data     prod(dims) values, little-endian

A single tensor is stored as a count=1 container; there is no separate
single-tensor layout, so readers never have to guess.
"""

import os
import struct

import numpy as np

__all__ = ["save_tensors", "load_tensors", "ContainerError", "MissingArtifactError",
           "MAGIC", "VERSION"]

MAGIC = b"IMTK"
VERSION = 1

_DTYPE_CODE = {np.dtype(np.float32): 0, np.dtype(np.float64): 1}
_CODE_DTYPE = {0: np.dtype("<f4"), 1: np.dtype("<f8")}


class ContainerError(ValueError):
    """File is not a valid tensor container."""


class MissingArtifactError(FileNotFoundError):
    """A required input artifact (checkpoint, dataset, ...) does not exist."""


def save_tensors(path, tensors):
    """Write an ordered {name: ndarray} mapping. Values must be f32 or f64."""
    blobs = []
    for name, arr in tensors.items():
        arr = np.asarray(arr)
        if arr.dtype not in _DTYPE_CODE:
            raise ContainerError("unsupported dtype %s for %r" % (arr.dtype, name))
        nb = name.encode("utf-8")
        if len(nb) > 0xFFFF:
            raise ContainerError("name too long: %r" % name[:40])
        head = struct.pack("<H", len(nb)) + nb
        head += struct.pack("<I", arr.ndim)
        head += struct.pack("<%dQ" % arr.ndim, *arr.shape)
        head += struct.pack("<B", _DTYPE_CODE[arr.dtype])
        le = arr.astype(arr.dtype.newbyteorder("<"), copy=False)
        blobs.append(head + np.ascontiguousarray(le).tobytes())
    payload = MAGIC + struct.pack("<II", VERSION, len(blobs)) + b"".join(blobs)
    tmp = path + ".tmp"
    with open(tmp, "wb") as f:
        f.write(payload)
    os.replace(tmp, path)


def load_tensors(path):
    """Read a container back into an ordered {name: ndarray} dict."""
    if not os.path.exists(path):
        raise MissingArtifactError(path)
    with open(path, "rb") as f:
        buf = f.read()
    if buf[:4] != MAGIC:
        raise ContainerError("%s: bad magic %r" % (path, buf[:4]))
    pos = 4

    def pull(fmt):
        nonlocal pos
        size = struct.calcsize(fmt)
        if pos + size > len(buf):
            raise ContainerError("%s: truncated header" % path)
        vals = struct.unpack_from(fmt, buf, pos)
        pos += size
        return vals

    version, count = pull("<II")
    if version != VERSION:
        raise ContainerError("%s: unsupported version %d" % (path, version))
    out = {}
    for _ in range(count):
        (nlen,) = pull("<H")
        if pos + nlen > len(buf):
            raise ContainerError("%s: truncated name" % path)
        name = buf[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = pull("<I")
        if rank > 16:
            raise ContainerError("%s: implausible rank %d" % (path, rank))
        dims = pull("<%dQ" % rank) if rank else ()
        (code,) = pull("<B")
        if code not in _CODE_DTYPE:
            raise ContainerError("%s: unknown dtype code %d" % (path, code))
        dt = _CODE_DTYPE[code]
        n = int(np.prod(dims, dtype=np.int64)) if rank else 1
        nbytes = n * dt.itemsize
        if pos + nbytes > len(buf):
            raise ContainerError("%s: truncated data for %r" % (path, name))
        arr = np.frombuffer(buf, dtype=dt, count=n, offset=pos).reshape(dims)
        pos += nbytes
        out[name] = arr.astype(arr.dtype.newbyteorder("="))
    if pos != len(buf):
        raise ContainerError("%s: %d trailing bytes" % (path, len(buf) - pos))
    return out
