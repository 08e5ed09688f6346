"""
Bit-exact binary codec for gradient messages.

Layout (little-endian throughout):

    header   u16 version | u32 round | u32 client id | u8 domain | u8 step kind | u16 group count
    group    u8 role code | u16 entry count
    entry    u16 name length | utf-8 name | u8 rank | u32 extent * rank | f32 payload (row-major)
    trailer  u32 CRC32 of every preceding byte

The group/entry part is shared with the parameter and dataset files.
"""
import math
import struct
import zlib
from dataclasses import dataclass
from typing import Dict, List, Mapping, Optional, Tuple, Union
import numpy as np
from src.nn.params import ROLE_CODES, ROLES, GradientMap
from src.transport.message import DOMAIN_CODES, DOMAIN_TAGS, PROTOCOL_VERSION, GradientMessage, StepKind
from src.utils.errors import (
    ChecksumError,
    CodecError,
    LengthOverflowError,
    NonFiniteError,
    TruncatedError,
    UnknownVersionError,
)

HEADER = struct.Struct("<HIIBB")
COUNT = struct.Struct("<H")
GROUP = struct.Struct("<BH")
EXTENT = struct.Struct("<I")
CRC = struct.Struct("<I")

HEADER_SIZE = HEADER.size + COUNT.size
MAX_RANK = 8

ShapeLike = Union[np.ndarray, Tuple[int, ...]]


# ============================================================================
# Encoding
# ============================================================================

def encode_tensor(name: str, value: np.ndarray) -> bytes:
    """name length, name, rank, extents, payload"""
    value = np.asarray(value)
    if not np.isfinite(value).all():
        raise NonFiniteError(f"Non-finite values in '{name}'", parameter=name)
    raw_name = name.encode("utf-8")
    if 0 in value.shape:
        raise CodecError(f"Entry '{name}' has a zero extent {value.shape}")
    if len(raw_name) > 0xFFFF or value.ndim > MAX_RANK:
        raise LengthOverflowError(f"Entry '{name}' exceeds name length or rank limits")
    parts = [COUNT.pack(len(raw_name)), raw_name, bytes([value.ndim])]
    parts.extend(EXTENT.pack(extent) for extent in value.shape)
    parts.append(np.ascontiguousarray(value, dtype="<f4").tobytes())
    return b"".join(parts)


def encode_groups(groups: Mapping[str, Mapping[str, np.ndarray]]) -> bytes:
    """Group count followed by every group in mapping order."""
    parts = [COUNT.pack(len(groups))]
    for role, entries in groups.items():
        if role not in ROLE_CODES:
            raise CodecError(f"Unknown role '{role}'")
        parts.append(GROUP.pack(ROLE_CODES[role], len(entries)))
        for role_name, value in entries.items():
            try:
                parts.append(encode_tensor(role_name, value))
            except NonFiniteError as e:
                raise NonFiniteError(f"Non-finite gradient for {role}/{role_name}", parameter=f"{role}/{role_name}") from e
    return b"".join(parts)


def seal(body: bytes) -> bytes:
    """Append the CRC32 trailer."""
    return body + CRC.pack(zlib.crc32(body))


def encode(message: GradientMessage) -> bytes:
    """Deterministic encoding: identical messages give identical bytes."""
    if message.domain not in DOMAIN_CODES:
        raise CodecError(f"Unknown domain tag '{message.domain}'")
    header = HEADER.pack(message.version, message.round, message.client_id,
                         DOMAIN_CODES[message.domain], int(message.step))
    return seal(header + encode_groups(message.groups))


def message_size(groups: Mapping[str, Mapping[str, ShapeLike]]) -> int:
    """Encoded size in bytes of a message carrying these entries (arrays or shapes)."""
    size = HEADER_SIZE + CRC.size
    for entries in groups.values():
        size += GROUP.size
        for name, value in entries.items():
            shape = np.shape(value) if isinstance(value, np.ndarray) else tuple(value)
            size += COUNT.size + len(name.encode("utf-8")) + 1 + EXTENT.size * len(shape)
            size += 4 * math.prod(shape)
    return size


# ============================================================================
# Decoding
# ============================================================================

class ByteReader:
    """Cursor over a buffer that never reads past `limit`."""

    def __init__(self, buffer: bytes, offset: int = 0, limit: Optional[int] = None):
        self.buffer = buffer
        self.offset = offset
        self.limit = len(buffer) if limit is None else limit

    def remaining(self) -> int:
        return self.limit - self.offset

    def take(self, n: int) -> bytes:
        if n > self.remaining():
            raise TruncatedError(f"Need {n} bytes at offset {self.offset}, {self.remaining()} left", offset=self.offset)
        chunk = self.buffer[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def unpack(self, layout: struct.Struct) -> tuple:
        return layout.unpack(self.take(layout.size))


@dataclass
class _EntryLayout:
    raw_name: bytes
    shape: Tuple[int, ...]
    offset: int


def _payload_size(shape: Tuple[int, ...], reader: ByteReader) -> int:
    """Payload bytes of an entry; extents are exact Python ints so nothing wraps."""
    if any(extent == 0 for extent in shape):
        raise CodecError(f"Zero extent in shape {shape}", offset=reader.offset)
    payload = 4 * math.prod(shape)
    if payload > len(reader.buffer):
        raise LengthOverflowError(
            f"Shape {shape} declares {payload} payload bytes in a {len(reader.buffer)}-byte buffer",
            offset=reader.offset,
        )
    if payload > reader.remaining():
        raise TruncatedError(
            f"Payload of {payload} bytes for shape {shape} exceeds the {reader.remaining()} bytes left",
            offset=reader.offset,
        )
    return payload


def _walk_entries(reader: ByteReader, entry_count: int) -> List[_EntryLayout]:
    """Read entry headers and skip payloads without building arrays."""
    entries = []
    for _ in range(entry_count):
        (name_length,) = reader.unpack(COUNT)
        raw_name = reader.take(name_length)
        rank = reader.take(1)[0]
        if rank > MAX_RANK:
            raise LengthOverflowError(f"Rank {rank} exceeds limit {MAX_RANK}", offset=reader.offset - 1)
        shape = tuple(reader.unpack(EXTENT)[0] for _ in range(rank))
        payload = _payload_size(shape, reader)
        entries.append(_EntryLayout(raw_name, shape, reader.offset))
        reader.offset += payload
    return entries


def _build_entries(buffer: bytes, layouts: List[_EntryLayout], label: str) -> Dict[str, np.ndarray]:
    entries: Dict[str, np.ndarray] = {}
    for entry in layouts:
        try:
            name = entry.raw_name.decode("utf-8")
        except UnicodeDecodeError as e:
            raise CodecError(f"Entry name is not UTF-8 at offset {entry.offset}", offset=entry.offset) from e
        if name in entries:
            raise CodecError(f"Duplicate entry {label}/{name}")
        count = math.prod(entry.shape)
        values = np.frombuffer(buffer, dtype="<f4", count=count, offset=entry.offset)
        entries[name] = values.astype(np.float32).reshape(entry.shape)
    return entries


def verify_crc(buffer: bytes, end: int) -> None:
    """Check the trailer at `end` against the CRC of buffer[:end]."""
    (expected,) = CRC.unpack_from(buffer, end)
    actual = zlib.crc32(buffer[:end])
    if actual != expected:
        raise ChecksumError(f"CRC mismatch: computed {actual:#010x}, trailer {expected:#010x}", offset=end)


def _verify_trailer(buffer: bytes, end: int) -> None:
    trailing = len(buffer) - end
    if trailing < CRC.size:
        raise TruncatedError(f"Missing CRC trailer at offset {end}", offset=end)
    if trailing > CRC.size:
        raise LengthOverflowError(f"{trailing - CRC.size} bytes past the declared layout", offset=end + CRC.size)
    verify_crc(buffer, end)


def read_groups(buffer: bytes, reader: ByteReader) -> GradientMap:
    """
    Walk the groups at the reader position, check the CRC trailer that must
    follow them and end the buffer, then build the arrays.
    """
    (group_count,) = reader.unpack(COUNT)
    layout = []
    for _ in range(group_count):
        role_code, entry_count = reader.unpack(GROUP)
        layout.append((role_code, _walk_entries(reader, entry_count)))
    _verify_trailer(buffer, reader.offset)

    groups: GradientMap = {}
    for role_code, entries in layout:
        if role_code >= len(ROLES):
            raise CodecError(f"Unknown role code {role_code}")
        role = ROLES[role_code]
        if role in groups:
            raise CodecError(f"Duplicate group {role}")
        groups[role] = _build_entries(buffer, entries, role)
    return groups


def encode_entries(entries: Mapping[str, np.ndarray]) -> bytes:
    """Entry count followed by named tensors, without role grouping."""
    return COUNT.pack(len(entries)) + b"".join(encode_tensor(name, value) for name, value in entries.items())


def read_entries(buffer: bytes, reader: ByteReader) -> Dict[str, np.ndarray]:
    """Counterpart of encode_entries; the CRC trailer must follow and end the buffer."""
    (entry_count,) = reader.unpack(COUNT)
    layouts = _walk_entries(reader, entry_count)
    _verify_trailer(buffer, reader.offset)
    return _build_entries(buffer, layouts, "file")


def decode(buffer: bytes) -> GradientMessage:
    """
    Parse an encoded message.

    Raises:
        TruncatedError, LengthOverflowError: the layout does not fit the buffer
        ChecksumError: CRC mismatch (checked before any array is built)
        UnknownVersionError: intact message of another protocol version
        CodecError: field values are invalid
    """
    buffer = bytes(buffer)
    if len(buffer) < HEADER_SIZE + CRC.size:
        raise TruncatedError(f"Buffer of {len(buffer)} bytes is shorter than the empty message", offset=0)

    reader = ByteReader(buffer)
    version, round_id, client_id, domain_code, step_code = reader.unpack(HEADER)
    if version != PROTOCOL_VERSION:
        verify_crc(buffer, len(buffer) - CRC.size)
        raise UnknownVersionError(version)

    groups = read_groups(buffer, reader)
    if domain_code not in DOMAIN_TAGS:
        raise CodecError(f"Unknown domain code {domain_code}", offset=HEADER.size - 2)
    try:
        step = StepKind(step_code)
    except ValueError:
        raise CodecError(f"Unknown step kind {step_code}", offset=HEADER.size - 1) from None
    return GradientMessage(
        round=round_id,
        client_id=client_id,
        domain=DOMAIN_TAGS[domain_code],
        step=step,
        groups=groups,
        version=version,
    )
