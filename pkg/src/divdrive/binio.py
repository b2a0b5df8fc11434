"""Deterministic binary container for named arrays plus a JSON header.

Layout (all integers little-endian)::

    magic      4 bytes    file kind, e.g. b"DDCK" for checkpoints
    version    uint16
    hlen       uint32     length of the header
    header     hlen bytes UTF-8 JSON, keys sorted
    count      uint32     number of arrays
    per array:
      nlen uint16, name (UTF-8)
      dlen uint8,  numpy dtype string, e.g. "<f8"
      ndim uint8,  shape as ndim x uint32
      zlen uint32, zlib-compressed C-order bytes

Nothing time- or platform-dependent is written, so equal inputs give
byte-identical files.
"""

import json
import struct
import zlib

import numpy as np


class FormatError(ValueError):
    """Raised for a malformed, foreign or incompatible container."""


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def encode(magic, version, header, arrays):
    if len(magic) != 4:
        raise ValueError("magic must be 4 bytes")
    out = [magic, struct.pack("<H", version)]
    h = canonical_json(header).encode()
    out += [struct.pack("<I", len(h)), h, struct.pack("<I", len(arrays))]
    for name in sorted(arrays):
        a = np.ascontiguousarray(arrays[name])
        if a.dtype.byteorder == ">" or (a.dtype.byteorder == "=" and not np.little_endian):
            a = a.astype(a.dtype.newbyteorder("<"))
        nb, dt = name.encode(), a.dtype.str.encode()
        z = zlib.compress(a.tobytes(), 6)
        out += [struct.pack("<H", len(nb)), nb, struct.pack("<B", len(dt)), dt,
                struct.pack("<B", a.ndim), struct.pack(f"<{a.ndim}I", *a.shape),
                struct.pack("<I", len(z)), z]
    return b"".join(out)


class _Reader:
    def __init__(self, buf):
        self.buf, self.pos = buf, 0

    def take(self, n):
        if self.pos + n > len(self.buf):
            raise FormatError("truncated container")
        b = self.buf[self.pos:self.pos + n]
        self.pos += n
        return b

    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode(buf, magic, versions=(1,)):
    r = _Reader(buf)
    m = r.take(4)
    if m != magic:
        raise FormatError(f"bad magic {m!r}, expected {magic!r}")
    (version,) = r.unpack("<H")
    if version not in versions:
        raise FormatError(f"unsupported format version {version}")
    (hlen,) = r.unpack("<I")
    header = json.loads(r.take(hlen).decode())
    (count,) = r.unpack("<I")
    arrays = {}
    for _ in range(count):
        (nlen,) = r.unpack("<H")
        name = r.take(nlen).decode()
        (dlen,) = r.unpack("<B")
        dt = np.dtype(r.take(dlen).decode())
        (ndim,) = r.unpack("<B")
        shape = r.unpack(f"<{ndim}I") if ndim else ()
        (zlen,) = r.unpack("<I")
        raw = zlib.decompress(r.take(zlen))
        arrays[name] = np.frombuffer(raw, dtype=dt).reshape(shape).copy()
    if r.pos != len(buf):
        raise FormatError("trailing bytes after container")
    return version, header, arrays


def write(path, magic, version, header, arrays):
    data = encode(magic, version, header, arrays)
    with open(path, "wb") as fh:
        fh.write(data)
    return data


def read(path, magic, versions=(1,)):
    with open(path, "rb") as fh:
        return decode(fh.read(), magic, versions)
