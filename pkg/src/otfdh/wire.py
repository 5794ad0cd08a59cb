"""Byte-exact message and frame layouts.

Message::

    "OTFD" | version:u8 = 1 | type:u8 | session:u32 | seq:u64 | count:u16
           | count * (len:u32 | bytes)

Frame (the plaintext that gets XORed with a per-packet pad)::

    seq:u64 | len:u32 | payload | crc32(seq | len | payload):u32

All integers are big-endian.  Integers carried inside fields use the canonical
encoding from :mod:`otfdh.numtheory` (no leading zero byte).
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from enum import IntEnum

from .errors import DecodeError, ParameterError
from .numtheory import DhParams, int_from_bytes, int_to_bytes
from .textbook_rsa import RsaPublicKey

MAGIC = b"OTFD"
VERSION = 1
HEADER = struct.Struct(">4sBBIQH")
FIELD_LEN = struct.Struct(">I")
FRAME_HEADER = struct.Struct(">QI")
FRAME_OVERHEAD = FRAME_HEADER.size + 4

PARAMS_TAG = b"DH"
PUBKEY_TAG = b"RSA"


class MsgType(IntEnum):
    SETUP_U2HG = 1
    SETUP_HG2SD = 2
    PUBKEY_REQUEST = 3
    PUBKEY_REPLY = 4
    DH_OFFER = 5
    DH_RESPONSE = 6
    DATA = 7
    REINIT = 8


class WireError(DecodeError):
    code = "malformed"


class BadMagic(WireError):
    code = "bad_magic"


class BadVersion(WireError):
    code = "bad_version"


class UnknownType(WireError):
    code = "unknown_type"


class Truncated(WireError):
    code = "truncated"


class TrailingBytes(WireError):
    code = "trailing_bytes"


class IntegrityError(WireError):
    code = "crc"


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    session_id: int
    seq: int
    fields: tuple[bytes, ...] = ()

    def __post_init__(self):
        try:
            object.__setattr__(self, "msg_type", MsgType(self.msg_type))
        except ValueError:
            raise ParameterError(f"unknown message type {self.msg_type!r}") from None
        object.__setattr__(self, "fields", tuple(bytes(f) for f in self.fields))
        if not 0 <= self.session_id < 1 << 32:
            raise ParameterError("session_id must fit in 32 bits")
        if not 0 <= self.seq < 1 << 64:
            raise ParameterError("seq must fit in 64 bits")
        if len(self.fields) >= 1 << 16:
            raise ParameterError("too many fields")
        if any(len(f) >= 1 << 32 for f in self.fields):
            raise ParameterError("field too long")


def pack_fields(fields) -> bytes:
    out = bytearray(struct.pack(">H", len(fields)))
    for f in fields:
        out += FIELD_LEN.pack(len(f))
        out += f
    return bytes(out)


def _read_fields(data: bytes, offset: int, count: int) -> tuple[tuple[bytes, ...], int]:
    fields = []
    for _ in range(count):
        if len(data) - offset < FIELD_LEN.size:
            raise Truncated("field length cut short")
        (n,) = FIELD_LEN.unpack_from(data, offset)
        offset += FIELD_LEN.size
        # declared length is checked against the buffer before any slicing
        if n > len(data) - offset:
            raise Truncated(f"field declares {n} bytes, {len(data) - offset} remain")
        fields.append(data[offset : offset + n])
        offset += n
    return tuple(fields), offset


def unpack_fields(data: bytes) -> tuple[bytes, ...]:
    if len(data) < 2:
        raise Truncated("field count cut short")
    (count,) = struct.unpack_from(">H", data)
    fields, end = _read_fields(data, 2, count)
    if end != len(data):
        raise TrailingBytes(f"{len(data) - end} bytes after the last field")
    return fields


def serialize(m: WireMessage) -> bytes:
    head = HEADER.pack(MAGIC, VERSION, m.msg_type, m.session_id, m.seq, len(m.fields))
    return head + pack_fields(m.fields)[2:]


def parse(data: bytes) -> WireMessage:
    """Parse untrusted bytes; every malformation raises a distinct WireError."""
    data = bytes(data)
    if len(data) < HEADER.size:
        if not MAGIC.startswith(data[:4]):
            raise BadMagic("bad magic")
        raise Truncated(f"header needs {HEADER.size} bytes, got {len(data)}")
    magic, version, mtype, session, seq, count = HEADER.unpack_from(data)
    if magic != MAGIC:
        raise BadMagic("bad magic")
    if version != VERSION:
        raise BadVersion(f"unsupported version {version}")
    if mtype not in MsgType._value2member_map_:
        raise UnknownType(f"unknown message type {mtype}")
    fields, end = _read_fields(data, HEADER.size, count)
    if end != len(data):
        raise TrailingBytes(f"{len(data) - end} bytes after the last field")
    return WireMessage(MsgType(mtype), session, seq, fields)


def encode_int(n: int) -> bytes:
    return int_to_bytes(n)


def decode_int(data: bytes) -> int:
    return int_from_bytes(data)


def encode_params(params: DhParams) -> bytes:
    return pack_fields([PARAMS_TAG, int_to_bytes(params.g), int_to_bytes(params.p)])


def decode_params(data: bytes) -> DhParams:
    """Decode and validate; raises DecodeError or ParameterError."""
    fields = unpack_fields(data)
    if len(fields) != 3 or fields[0] != PARAMS_TAG:
        raise DecodeError("not an encoded (g, p) pair")
    return DhParams(int_from_bytes(fields[1]), int_from_bytes(fields[2]))


def encode_public_key(key: RsaPublicKey) -> bytes:
    return pack_fields([PUBKEY_TAG, int_to_bytes(key.n), int_to_bytes(key.e)])


def decode_public_key(data: bytes) -> RsaPublicKey:
    fields = unpack_fields(data)
    if len(fields) != 3 or fields[0] != PUBKEY_TAG:
        raise DecodeError("not an encoded RSA public key")
    n, e = int_from_bytes(fields[1]), int_from_bytes(fields[2])
    if n < 257 or not 3 <= e < n:
        raise DecodeError("implausible RSA public key")
    return RsaPublicKey(n, e)


@dataclass(frozen=True)
class Frame:
    seq: int
    payload: bytes

    @property
    def payload_len(self) -> int:
        return len(self.payload)

    @property
    def crc32(self) -> int:
        return zlib.crc32(FRAME_HEADER.pack(self.seq, len(self.payload)) + self.payload)


def frame_pack(seq: int, payload: bytes) -> bytes:
    body = FRAME_HEADER.pack(seq, len(payload)) + payload
    return body + struct.pack(">I", zlib.crc32(body))


def frame_unpack(data: bytes) -> Frame:
    if len(data) < FRAME_OVERHEAD:
        raise Truncated(f"frame of {len(data)} bytes is shorter than its overhead")
    seq, n = FRAME_HEADER.unpack_from(data)
    body, (crc,) = data[:-4], struct.unpack(">I", data[-4:])
    if zlib.crc32(body) != crc:
        raise IntegrityError("frame checksum mismatch")
    if n != len(data) - FRAME_OVERHEAD:
        raise IntegrityError(f"frame declares {n} payload bytes, carries {len(data) - FRAME_OVERHEAD}")
    return Frame(seq, bytes(data[FRAME_HEADER.size : -4]))


def max_payload(params: DhParams) -> int:
    """Largest payload whose frame still fits in one pad."""
    return params.width - FRAME_OVERHEAD
