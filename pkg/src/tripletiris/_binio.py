"""Little-endian binary framing helpers with a trailing CRC32."""

import struct
import zlib
from pathlib import Path

from .errors import ChecksumError, FormatError


def seal(payload: bytes) -> bytes:
    return payload + struct.pack("<I", zlib.crc32(payload) & 0xFFFFFFFF)


def unseal(blob: bytes, magic: bytes, version: int, what: str) -> memoryview:
    """Validate magic, CRC and version; return the body after the version field."""
    if len(blob) < len(magic) + 8:
        raise ChecksumError(f"{what} file is truncated ({len(blob)} bytes)")
    if blob[: len(magic)] != magic:
        raise FormatError(f"bad magic {bytes(blob[:len(magic)])!r}; not a {what} file")
    payload, (crc,) = blob[:-4], struct.unpack("<I", blob[-4:])
    if zlib.crc32(payload) & 0xFFFFFFFF != crc:
        raise ChecksumError(f"{what} checksum mismatch (corrupt or truncated file)")
    (found,) = struct.unpack_from("<I", payload, len(magic))
    if found != version:
        raise FormatError(f"{what} format version {found} is not supported (expected {version})")
    return memoryview(payload)[len(magic) + 4 :]


class Reader:
    def __init__(self, buf: memoryview, what: str):
        self.buf = buf
        self.pos = 0
        self.what = what

    def take(self, n: int) -> memoryview:
        if self.pos + n > len(self.buf):
            raise FormatError(f"{self.what} file ends early")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        size = struct.calcsize(fmt)
        return struct.unpack(fmt, self.take(size))

    def string(self) -> str:
        (n,) = self.unpack("<H")
        return bytes(self.take(n)).decode("utf-8")

    def done(self):
        if self.pos != len(self.buf):
            raise FormatError(f"{self.what} file has {len(self.buf) - self.pos} trailing bytes")


def pack_string(s: str) -> bytes:
    raw = s.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValueError("string longer than 65535 bytes")
    return struct.pack("<H", len(raw)) + raw


def write_atomic(path, data: bytes):
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(data)
    tmp.replace(path)
