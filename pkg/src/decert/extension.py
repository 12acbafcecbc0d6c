"""DER codec for the DelegationInfo certificate extension.

Wire layout::

    DelegationInfo ::= SEQUENCE {
        excludes  [0] EXPLICIT SEQUENCE OF IA5String,
        includes  [1] EXPLICIT SEQUENCE OF IA5String OPTIONAL,
        pathLen   [2] EXPLICIT INTEGER (0..255) OPTIONAL }

Strings are sorted by their octets.  The decoder accepts only the canonical
encoding, so every value has exactly one byte representation.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import FrozenSet, List, Optional, Tuple

from .names import DomainName, DomainPattern, MalformedName, parse_name, parse_pattern

__all__ = [
    "DELEGATION_INFO_OID",
    "REVOCATION_DNS_OID",
    "DelegationInfo",
    "MalformedExtension",
    "EncodingOverflow",
    "InvalidPathLen",
    "encode_delegation_info",
    "decode_delegation_info",
]

# private-enterprise placeholder arc; no IANA assignment exists
DELEGATION_INFO_OID = "1.3.6.1.4.1.57264.100.1"
REVOCATION_DNS_OID = "1.3.6.1.4.1.57264.100.2"

MAX_STRING = 253
MAX_PATH_LEN = 255

_SEQUENCE = 0x30
_IA5STRING = 0x16
_INTEGER = 0x02
_CTX = (0xA0, 0xA1, 0xA2)


class MalformedExtension(ValueError):
    pass


class EncodingOverflow(ValueError):
    pass


class InvalidPathLen(ValueError):
    pass


@dataclass(frozen=True)
class DelegationInfo:
    exclude_domains: FrozenSet[DomainName] = frozenset()
    include_domains: Optional[FrozenSet[DomainPattern]] = None
    path_len: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "exclude_domains", frozenset(self.exclude_domains))
        if self.include_domains is not None:
            object.__setattr__(self, "include_domains", frozenset(self.include_domains))

    @property
    def effective_path_len(self) -> int:
        return 0 if self.path_len is None else self.path_len


# -- primitive DER helpers ---------------------------------------------------


def _length(n: int) -> bytes:
    if n < 0x80:
        return bytes([n])
    body = n.to_bytes((n.bit_length() + 7) // 8, "big")
    return bytes([0x80 | len(body)]) + body


def _tlv(tag: int, content: bytes) -> bytes:
    return bytes([tag]) + _length(len(content)) + content


def _integer(value: int) -> bytes:
    body = value.to_bytes(value.bit_length() // 8 + 1, "big")
    return _tlv(_INTEGER, body)


def _read_tlv(buf: bytes, pos: int) -> Tuple[int, bytes, int]:
    """Return (tag, content, next_pos), enforcing minimal definite lengths."""
    if pos + 2 > len(buf):
        raise MalformedExtension("truncated TLV header")
    tag = buf[pos]
    first = buf[pos + 1]
    pos += 2
    if first < 0x80:
        length = first
    else:
        nbytes = first & 0x7F
        if nbytes == 0 or nbytes > 4:
            raise MalformedExtension("unsupported length form")
        if pos + nbytes > len(buf):
            raise MalformedExtension("truncated length")
        raw = buf[pos : pos + nbytes]
        pos += nbytes
        length = int.from_bytes(raw, "big")
        if raw[0] == 0 or length < 0x80:
            raise MalformedExtension("non-minimal length encoding")
    end = pos + length
    if end > len(buf):
        raise MalformedExtension("content runs past end of input")
    return tag, buf[pos:end], end


def _read_strings(content: bytes) -> List[str]:
    tag, seq, end = _read_tlv(content, 0)
    if tag != _SEQUENCE or end != len(content):
        raise MalformedExtension("expected a single SEQUENCE OF IA5String")
    out = []
    pos = 0
    while pos < len(seq):
        tag, raw, pos = _read_tlv(seq, pos)
        if tag != _IA5STRING:
            raise MalformedExtension(f"expected IA5String, got tag 0x{tag:02x}")
        if any(b > 0x7F for b in raw):
            raise MalformedExtension("non-IA5 octet in string")
        out.append(raw.decode("ascii"))
    raw_sorted = [s.encode("ascii") for s in out]
    for a, b in zip(raw_sorted, raw_sorted[1:]):
        if a == b:
            raise MalformedExtension(f"duplicate entry {a!r}")
        if a > b:
            raise MalformedExtension("entries are not in canonical order")
    return out


def _string_seq(strings) -> bytes:
    encoded = sorted(s.encode("ascii") for s in strings)
    for s in encoded:
        if len(s) > MAX_STRING:
            raise EncodingOverflow(f"string of {len(s)} octets exceeds {MAX_STRING}")
    return _tlv(_SEQUENCE, b"".join(_tlv(_IA5STRING, s) for s in encoded))


# -- public codec ------------------------------------------------------------


def encode_delegation_info(info: DelegationInfo) -> bytes:
    parts = [_tlv(0xA0, _string_seq(str(e) for e in info.exclude_domains))]
    if info.include_domains is not None:
        parts.append(_tlv(0xA1, _string_seq(str(p) for p in info.include_domains)))
    if info.path_len is not None:
        if not 0 <= info.path_len <= MAX_PATH_LEN:
            raise InvalidPathLen(f"path length {info.path_len} outside 0..{MAX_PATH_LEN}")
        parts.append(_tlv(0xA2, _integer(info.path_len)))
    return _tlv(_SEQUENCE, b"".join(parts))


def decode_delegation_info(data: bytes) -> DelegationInfo:
    data = bytes(data)
    tag, body, end = _read_tlv(data, 0)
    if tag != _SEQUENCE:
        raise MalformedExtension("DelegationInfo must be a SEQUENCE")
    if end != len(data):
        raise MalformedExtension("trailing bytes after DelegationInfo")

    fields = {}
    pos = 0
    last = -1
    while pos < len(body):
        tag, content, pos = _read_tlv(body, pos)
        if tag not in _CTX:
            raise MalformedExtension(f"unexpected field tag 0x{tag:02x}")
        idx = _CTX.index(tag)
        if idx <= last:
            raise MalformedExtension("fields out of order or repeated")
        last = idx
        fields[idx] = content
    if 0 not in fields:
        raise MalformedExtension("excludes field is mandatory")

    try:
        excludes = frozenset(parse_name(s) for s in _read_strings(fields[0]))
        includes = None
        if 1 in fields:
            includes = frozenset(parse_pattern(s) for s in _read_strings(fields[1]))
    except MalformedName as exc:
        raise MalformedExtension(str(exc)) from exc

    path_len = None
    if 2 in fields:
        tag, raw, end = _read_tlv(fields[2], 0)
        if tag != _INTEGER or end != len(fields[2]) or not raw:
            raise MalformedExtension("pathLen must be a single INTEGER")
        if len(raw) > 1 and raw[0] == 0 and raw[1] < 0x80:
            raise MalformedExtension("non-minimal INTEGER")
        if raw[0] & 0x80:
            raise MalformedExtension("negative pathLen")
        path_len = int.from_bytes(raw, "big")
        if path_len > MAX_PATH_LEN:
            raise MalformedExtension(f"pathLen {path_len} outside 0..{MAX_PATH_LEN}")

    info = DelegationInfo(excludes, includes, path_len)
    # names decode case-insensitively; only the canonical spelling is accepted
    if encode_delegation_info(info) != data:
        raise MalformedExtension("non-canonical encoding")
    return info
