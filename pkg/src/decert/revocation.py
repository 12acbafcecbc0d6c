"""Owner-managed revocation: store, signed CRLs and DNS TXT publication.

Revoked serials are published under
``<hex serial>._decert-revoked.<issuer domain>`` with a TXT value starting
``revoked=1``.  A validator needs one TXT query per DeCert.
"""

from __future__ import annotations

import datetime
import os
import re
import shlex
import threading
from dataclasses import dataclass
from enum import Enum
from typing import Dict, Iterable, List, Mapping, Optional, Protocol, Union

from cryptography import x509
from cryptography.hazmat.primitives import serialization
from cryptography.x509.oid import NameOID

from . import keys
from .certs import ParsedCertificate, SigningFailure, _common_name, _name
from .clock import Clock, as_utc, system_clock, whole_seconds
from .names import DomainName, parse_name

__all__ = [
    "AlreadyRevoked",
    "LookupFailed",
    "RevocationRecord",
    "RevocationStore",
    "RevocationStatus",
    "CRLDocument",
    "RevocationZone",
    "ZoneResolver",
    "CountingResolver",
    "serial_hex",
    "revoke",
    "build_crl",
    "check_crl",
    "dns_record_name",
    "revocation_domain",
    "check_dns",
    "export_zone",
    "parse_zone",
]

DEFAULT_CRL_LIFETIME = datetime.timedelta(hours=1)
RECORD_LABEL = "_decert-revoked"
ZONE_TTL = 300


class AlreadyRevoked(KeyError):
    pass


class LookupFailed(RuntimeError):
    pass


class RevocationStatus(str, Enum):
    NOT_REVOKED = "NotRevoked"
    REVOKED = "Revoked"
    STALE_CRL = "StaleCRL"
    LOOKUP_FAILED = "LookupFailed"


def serial_hex(serial: int) -> str:
    width = max(1, (serial.bit_length() + 7) // 8)
    return serial.to_bytes(width, "big").hex()


@dataclass(frozen=True)
class RevocationRecord:
    serial: int
    revoked_at: datetime.datetime
    reason: str = "unspecified"

    def to_line(self) -> str:
        reason = " ".join(self.reason.split()) or "unspecified"
        return f"{serial_hex(self.serial)}\t{int(self.revoked_at.timestamp())}\t{reason}"

    @classmethod
    def from_line(cls, line: str) -> "RevocationRecord":
        serial, ts, reason = line.rstrip("\n").split("\t", 2)
        return cls(
            int(serial, 16),
            datetime.datetime.fromtimestamp(int(ts), datetime.timezone.utc),
            reason,
        )


class RevocationStore:
    """Serial -> record map, optionally persisted as an append-only file.

    Many readers, one writer.  ``generation`` increments on every change so
    publishers can tell when to rebuild their documents.
    """

    def __init__(self, path: Union[str, os.PathLike, None] = None):
        self.path = path
        self._lock = threading.Lock()
        self._records: Dict[int, RevocationRecord] = {}
        self.generation = 0
        if path is not None and os.path.exists(path):
            with open(path, encoding="ascii") as f:
                for line in f:
                    if line.strip():
                        rec = RevocationRecord.from_line(line)
                        self._records[rec.serial] = rec
            self.generation = len(self._records)

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, serial: int) -> bool:
        return serial in self._records

    def get(self, serial: int) -> Optional[RevocationRecord]:
        return self._records.get(serial)

    def records(self) -> List[RevocationRecord]:
        with self._lock:
            return sorted(self._records.values(), key=lambda r: r.serial)

    def add(self, record: RevocationRecord) -> RevocationRecord:
        with self._lock:
            if record.serial in self._records:
                raise AlreadyRevoked(serial_hex(record.serial))
            if self.path is not None:
                with open(self.path, "a", encoding="ascii") as f:
                    f.write(record.to_line() + "\n")
            self._records[record.serial] = record
            self.generation += 1
        return record


def revoke(
    store: RevocationStore, serial: int, reason: str = "unspecified", clock: Clock = system_clock
) -> RevocationRecord:
    return store.add(RevocationRecord(serial, whole_seconds(clock()), reason))


# -- CRL ---------------------------------------------------------------------


@dataclass(frozen=True)
class CRLDocument:
    issuer_cn: str
    this_update: datetime.datetime
    next_update: datetime.datetime
    entries: tuple
    der: bytes

    @classmethod
    def from_der(cls, der: bytes) -> "CRLDocument":
        crl = x509.load_der_x509_crl(der)
        entries = tuple(
            sorted(
                (
                    RevocationRecord(r.serial_number, r.revocation_date_utc)
                    for r in crl
                ),
                key=lambda r: r.serial,
            )
        )
        return cls(
            _common_name(crl.issuer),
            crl.last_update_utc,
            crl.next_update_utc,
            entries,
            der,
        )

    @property
    def serials(self) -> frozenset:
        return frozenset(r.serial for r in self.entries)

    def verify(self, issuer: ParsedCertificate) -> bool:
        if self.issuer_cn != issuer.subject_cn:
            return False
        crl = x509.load_der_x509_crl(self.der)
        try:
            return crl.is_signature_valid(issuer.public_key())
        except (TypeError, ValueError):
            return False


def build_crl(
    store: RevocationStore,
    issuer_cert: ParsedCertificate,
    issuer_key: keys.PrivateKey,
    clock: Clock = system_clock,
    lifetime: datetime.timedelta = DEFAULT_CRL_LIFETIME,
) -> CRLDocument:
    if not keys.keys_match(issuer_key, issuer_cert.public_key()):
        raise SigningFailure("issuer key does not match the issuer certificate")
    this_update = whole_seconds(clock())
    builder = (
        x509.CertificateRevocationListBuilder()
        .issuer_name(_name(issuer_cert.subject_cn))
        .last_update(this_update)
        .next_update(this_update + lifetime)
        .add_extension(x509.CRLNumber(store.generation), critical=False)
    )
    for rec in store.records():
        builder = builder.add_revoked_certificate(
            x509.RevokedCertificateBuilder()
            .serial_number(rec.serial)
            .revocation_date(rec.revoked_at)
            .build()
        )
    try:
        crl = builder.sign(issuer_key, keys.hash_for(issuer_key))
    except (ValueError, TypeError, keys.UnsupportedAlgorithm) as exc:
        raise SigningFailure(str(exc)) from exc
    return CRLDocument.from_der(crl.public_bytes(serialization.Encoding.DER))


def check_crl(
    cert: ParsedCertificate, crl: CRLDocument, at: datetime.datetime
) -> RevocationStatus:
    """The CRL signature must already have been checked by the caller."""
    if as_utc(at) > crl.next_update:
        return RevocationStatus.STALE_CRL
    if cert.serial in crl.serials:
        return RevocationStatus.REVOKED
    return RevocationStatus.NOT_REVOKED


# -- DNS ---------------------------------------------------------------------


def dns_record_name(serial: int, issuer_domain: Union[str, DomainName]) -> DomainName:
    if isinstance(issuer_domain, str):
        issuer_domain = parse_name(issuer_domain)
    return DomainName((serial_hex(serial), RECORD_LABEL) + issuer_domain.labels)


def revocation_domain(cert: ParsedCertificate) -> str:
    """Zone a DeCert's revocation status is published under."""
    return cert.revocation_dns_suffix or cert.issuer_cn


class TxtResolver(Protocol):
    def resolve_txt(self, name: str) -> List[str]:
        ...


class RevocationZone(dict):
    """Owner name (no trailing dot) -> TXT value."""

    def to_text(self) -> str:
        lines = [
            f"{name}. {ZONE_TTL} IN TXT {_quote(value)}" for name, value in sorted(self.items())
        ]
        return "".join(line + "\n" for line in lines)


def _quote(value: str) -> str:
    return '"' + value.replace("\\", "\\\\").replace('"', '\\"') + '"'


_ZONE_LINE = re.compile(r"^(\S+)\s+(?:(\d+)\s+)?(?:IN\s+)?TXT\s+(.*)$", re.IGNORECASE)


def parse_zone(text: str) -> RevocationZone:
    zone = RevocationZone()
    for raw in text.splitlines():
        line = raw.strip()
        if not line or line.startswith(";"):
            continue
        m = _ZONE_LINE.match(line)
        if not m:
            raise ValueError(f"unsupported zone line: {raw!r}")
        name = m.group(1).rstrip(".").lower()
        value = "".join(shlex.split(m.group(3), comments=False, posix=True))
        zone[name] = value
    return zone


def export_zone(store: RevocationStore, issuer_domain: Union[str, DomainName]) -> RevocationZone:
    zone = RevocationZone()
    for rec in store.records():
        name = str(dns_record_name(rec.serial, issuer_domain))
        zone[name] = f"revoked=1;t={int(rec.revoked_at.timestamp())}"
    return zone


class ZoneResolver:
    """Answers TXT queries from an in-memory zone snapshot."""

    def __init__(self, zone: Mapping[str, str]):
        self.zone = dict(zone)

    def resolve_txt(self, name: str) -> List[str]:
        value = self.zone.get(name.rstrip(".").lower())
        return [] if value is None else [value]


class CountingResolver:
    """Wraps a resolver and records every query made through it."""

    def __init__(self, inner):
        self.inner = inner
        self.queries: List[str] = []
        self._lock = threading.Lock()

    def resolve_txt(self, name: str) -> List[str]:
        with self._lock:
            self.queries.append(name)
        return self.inner.resolve_txt(name)


def check_dns(
    cert: ParsedCertificate, resolver, issuer_domain: Optional[str] = None
) -> RevocationStatus:
    name = dns_record_name(cert.serial, issuer_domain or revocation_domain(cert))
    try:
        answers = resolver.resolve_txt(str(name))
    except (LookupFailed, TimeoutError, OSError):
        return RevocationStatus.LOOKUP_FAILED
    if any(a.startswith("revoked=1") for a in answers):
        return RevocationStatus.REVOKED
    return RevocationStatus.NOT_REVOKED
