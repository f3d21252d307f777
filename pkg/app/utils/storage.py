"""
Storage Utilities
Atomic writes and shared helpers for the binary containers (SSRF, SSRD, SSRM, SSRP)
"""
import hashlib
import json
import os
import struct
import tempfile
from pathlib import Path

from app.errors import ArtifactError, BadMagicError, TruncatedPayloadError, UnsupportedFormatError

FINGERPRINT_BYTES = 16
EMPTY_FINGERPRINT = '0' * FINGERPRINT_BYTES


def atomic_write_bytes(path, payload: bytes):
    """Write to a temp file in the target directory, then rename over the target"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(prefix=f'.{path.name}.', dir=path.parent)
    try:
        with os.fdopen(fd, 'wb') as f:
            f.write(payload)
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise


def atomic_write_text(path, text: str):
    atomic_write_bytes(path, text.encode('utf-8'))


def atomic_write_json(path, data):
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + '\n')


def pack_fingerprint(fingerprint: str) -> bytes:
    fingerprint = fingerprint or EMPTY_FINGERPRINT
    raw = fingerprint.encode('ascii')
    if len(raw) != FINGERPRINT_BYTES:
        raise ValueError(f"Fingerprint must be {FINGERPRINT_BYTES} ASCII chars, got {fingerprint!r}")
    return raw


def read_artifact(path) -> bytes:
    path = Path(path)
    if not path.is_file():
        raise ArtifactError(f"Artifact not found: {path}")
    return path.read_bytes()


def sha256_file(path) -> str:
    digest = hashlib.sha256()
    with open(path, 'rb') as f:
        for chunk in iter(lambda: f.read(1 << 20), b''):
            digest.update(chunk)
    return digest.hexdigest()


class BinaryReader:
    """Sequential little-endian reader that reports truncation with the file name"""

    def __init__(self, data: bytes, source='<bytes>'):
        self.data = data
        self.pos = 0
        self.source = source

    def expect_magic(self, magic: bytes):
        found = self.data[:len(magic)]
        if found != magic:
            raise BadMagicError(f"{self.source}: expected magic {magic!r}, found {found!r}")
        self.pos = len(magic)

    def read(self, size: int) -> bytes:
        if self.pos + size > len(self.data):
            raise TruncatedPayloadError(
                f"{self.source}: needed {size} bytes at offset {self.pos}, file has {len(self.data)}"
            )
        chunk = self.data[self.pos:self.pos + size]
        self.pos += size
        return chunk

    def unpack(self, fmt: str):
        fmt = '<' + fmt
        return struct.unpack(fmt, self.read(struct.calcsize(fmt)))

    def expect_version(self, supported: int):
        (version,) = self.unpack('I')
        if version != supported:
            raise UnsupportedFormatError(f"{self.source}: unsupported version {version}")
        return version

    def fingerprint(self) -> str:
        return self.read(FINGERPRINT_BYTES).decode('ascii')

    def expect_end(self):
        if self.pos != len(self.data):
            raise TruncatedPayloadError(
                f"{self.source}: {len(self.data) - self.pos} unexpected trailing bytes"
            )
