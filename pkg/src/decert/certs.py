"""Certificate model: assembly, parsing and DeCert classification."""

from __future__ import annotations

import datetime
import os
import secrets
from dataclasses import dataclass, field
from typing import FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519, padding, rsa
from cryptography.x509.oid import NameOID

from . import keys
from .extension import (
    DELEGATION_INFO_OID,
    REVOCATION_DNS_OID,
    DelegationInfo,
    MalformedExtension,
    decode_delegation_info,
    encode_delegation_info,
)
from .names import DomainPattern, DomainScope, MalformedName, owner_scope, parse_pattern

__all__ = [
    "KeyUsageSet",
    "CertificateTemplate",
    "ParsedCertificate",
    "MalformedCertificate",
    "PolicyViolation",
    "SigningFailure",
    "build_certificate",
    "parse_certificate",
    "load_certificates",
    "is_decert",
    "random_serial",
    "verify_signature",
    "to_pem",
]

_DELEGATION_OID = x509.ObjectIdentifier(DELEGATION_INFO_OID)
_REVOCATION_DNS_OID = x509.ObjectIdentifier(REVOCATION_DNS_OID)

_KU_FIELDS = (
    "digital_signature",
    "content_commitment",
    "key_encipherment",
    "data_encipherment",
    "key_agreement",
    "key_cert_sign",
    "crl_sign",
    "encipher_only",
    "decipher_only",
)


class MalformedCertificate(ValueError):
    pass


class PolicyViolation(ValueError):
    def __init__(self, message: str, violations: Sequence = ()):
        super().__init__(message)
        self.violations = list(violations)


class SigningFailure(RuntimeError):
    pass


@dataclass(frozen=True)
class KeyUsageSet:
    """X.509 KeyUsage as a set of bit indices 0..8."""

    bits: FrozenSet[int] = frozenset()

    def __post_init__(self):
        bits = frozenset(int(b) for b in self.bits)
        if any(not 0 <= b <= 8 for b in bits):
            raise ValueError(f"key usage bits must be in 0..8, got {sorted(bits)}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def of(cls, *bits: int) -> "KeyUsageSet":
        return cls(frozenset(bits))

    @classmethod
    def parse(cls, text: str) -> "KeyUsageSet":
        text = text.strip()
        if not text:
            return cls()
        return cls(frozenset(int(b) for b in text.split(",")))

    def __le__(self, other: "KeyUsageSet") -> bool:
        return self.bits <= other.bits

    def __str__(self) -> str:
        return ",".join(str(b) for b in sorted(self.bits))

    def to_x509(self) -> x509.KeyUsage:
        flags = {name: (i in self.bits) for i, name in enumerate(_KU_FIELDS)}
        return x509.KeyUsage(**flags)

    @classmethod
    def from_x509(cls, ku: x509.KeyUsage) -> "KeyUsageSet":
        bits = set()
        for i, name in enumerate(_KU_FIELDS[:7]):
            if getattr(ku, name):
                bits.add(i)
        if ku.key_agreement:
            if ku.encipher_only:
                bits.add(7)
            if ku.decipher_only:
                bits.add(8)
        return cls(frozenset(bits))


def random_serial() -> int:
    """16 octets, positive, leading octet non-zero so the width is fixed."""
    raw = bytearray(secrets.token_bytes(16))
    raw[0] = (raw[0] & 0x7F) or 0x01
    return int.from_bytes(raw, "big")


@dataclass
class CertificateTemplate:
    subject_cn: str
    public_key: keys.PublicKey
    not_before: datetime.datetime
    not_after: datetime.datetime
    san: Sequence[DomainPattern] = ()
    delegation_info: Optional[DelegationInfo] = None
    key_usage: Optional[KeyUsageSet] = None
    is_ca: bool = False
    basic_path_len: Optional[int] = None
    serial: Optional[int] = None
    crl_url: Optional[str] = None
    revocation_dns_suffix: Optional[str] = None
    delegation_critical: bool = True


@dataclass(frozen=True)
class ParsedCertificate:
    subject_cn: str
    issuer_cn: str
    san_patterns: FrozenSet[DomainPattern]
    delegation_info: Optional[DelegationInfo]
    key_usage: Optional[KeyUsageSet]
    is_ca: bool
    basic_path_len: Optional[int]
    serial: int
    not_before: datetime.datetime
    not_after: datetime.datetime
    public_key_bytes: bytes
    raw_der: bytes = field(repr=False)
    crl_url: Optional[str] = None
    revocation_dns_suffix: Optional[str] = None
    unknown_critical: Tuple[str, ...] = ()
    delegation_critical: bool = True
    x509_cert: x509.Certificate = field(repr=False, compare=False, default=None)

    @property
    def is_decert(self) -> bool:
        return self.delegation_info is not None

    @property
    def scope(self) -> DomainScope:
        """Names this certificate's SAN and excludes denote."""
        excludes = self.delegation_info.exclude_domains if self.delegation_info else ()
        return DomainScope(self.san_patterns, frozenset(excludes))

    @property
    def delegation_scope(self) -> DomainScope:
        """Authority this certificate can hand down to a child DeCert."""
        if self.is_decert:
            return self.scope
        return owner_scope(self.san_patterns)

    @property
    def path_len(self) -> int:
        return self.delegation_info.effective_path_len if self.delegation_info else 0

    def public_key(self) -> keys.PublicKey:
        return keys.load_public_key(self.public_key_bytes)

    def pem(self) -> bytes:
        return to_pem(self.raw_der)

    def valid_at(self, at: datetime.datetime) -> bool:
        return self.not_before <= at <= self.not_after


def is_decert(cert: ParsedCertificate) -> bool:
    return cert.delegation_info is not None


def _name(cn: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, cn)])


def _ia5(text: str) -> bytes:
    raw = text.encode("ascii")
    if len(raw) >= 0x80:
        raise ValueError("revocation suffix too long")
    return bytes([0x16, len(raw)]) + raw


def _read_ia5(raw: bytes) -> str:
    if len(raw) < 2 or raw[0] != 0x16 or raw[1] != len(raw) - 2:
        raise MalformedCertificate("bad revocation-DNS extension")
    return raw[2:].decode("ascii")


def build_certificate(
    template: CertificateTemplate,
    issuer_cert: Optional[ParsedCertificate],
    issuer_key: keys.PrivateKey,
    enforce_policy: bool = True,
) -> bytes:
    """Assemble and sign an X.509 v3 certificate; returns DER.

    ``issuer_cert=None`` produces a self-signed certificate.  Passing
    ``enforce_policy=False`` allows structurally invalid DeCerts, which test
    corpora need.
    """
    if template.not_before >= template.not_after:
        raise ValueError("validity window is empty")
    if template.delegation_info is not None and enforce_policy:
        if template.is_ca:
            raise PolicyViolation("a DeCert must not carry the CA flag")
        if not template.san:
            raise PolicyViolation("a DeCert requires a subjectAltName")
    if issuer_cert is not None and not keys.keys_match(issuer_key, issuer_cert.public_key()):
        raise SigningFailure("issuer key does not match the issuer certificate")

    issuer_cn = template.subject_cn if issuer_cert is None else issuer_cert.subject_cn
    issuer_public = issuer_key.public_key()
    builder = (
        x509.CertificateBuilder()
        .subject_name(_name(template.subject_cn))
        .issuer_name(_name(issuer_cn))
        .public_key(template.public_key)
        .serial_number(template.serial if template.serial is not None else random_serial())
        .not_valid_before(template.not_before)
        .not_valid_after(template.not_after)
        .add_extension(
            x509.BasicConstraints(
                ca=template.is_ca,
                path_length=template.basic_path_len if template.is_ca else None,
            ),
            critical=True,
        )
        .add_extension(
            x509.SubjectKeyIdentifier.from_public_key(template.public_key), critical=False
        )
        .add_extension(
            x509.AuthorityKeyIdentifier.from_issuer_public_key(issuer_public),
            critical=False,
        )
    )
    if template.key_usage is not None:
        builder = builder.add_extension(template.key_usage.to_x509(), critical=True)
    if template.san:
        builder = builder.add_extension(
            x509.SubjectAlternativeName(
                [x509.DNSName(str(p)) for p in sorted(template.san, key=str)]
            ),
            critical=False,
        )
    if template.delegation_info is not None:
        builder = builder.add_extension(
            x509.UnrecognizedExtension(
                _DELEGATION_OID, encode_delegation_info(template.delegation_info)
            ),
            critical=template.delegation_critical,
        )
    if template.crl_url:
        builder = builder.add_extension(
            x509.CRLDistributionPoints(
                [
                    x509.DistributionPoint(
                        [x509.UniformResourceIdentifier(template.crl_url)], None, None, None
                    )
                ]
            ),
            critical=False,
        )
    if template.revocation_dns_suffix:
        builder = builder.add_extension(
            x509.UnrecognizedExtension(
                _REVOCATION_DNS_OID, _ia5(template.revocation_dns_suffix)
            ),
            critical=False,
        )
    try:
        cert = builder.sign(issuer_key, keys.hash_for(issuer_key))
    except (ValueError, TypeError, keys.UnsupportedAlgorithm) as exc:
        raise SigningFailure(str(exc)) from exc
    return cert.public_bytes(serialization.Encoding.DER)


def _common_name(name: x509.Name) -> str:
    attrs = name.get_attributes_for_oid(NameOID.COMMON_NAME)
    if not attrs:
        return ""
    value = attrs[0].value
    return value if isinstance(value, str) else value.decode("utf-8", "replace")


def parse_certificate(
    data: Union[bytes, str, x509.Certificate], decert_context: bool = True
) -> ParsedCertificate:
    """Decode a certificate from DER, PEM text or a ``cryptography`` object.

    With ``decert_context`` a DelegationInfo extension that is not marked
    critical is rejected.
    """
    try:
        if isinstance(data, x509.Certificate):
            cert = data
        elif isinstance(data, str) or data.lstrip().startswith(b"-----"):
            raw = data.encode("ascii") if isinstance(data, str) else data
            cert = x509.load_pem_x509_certificate(raw)
        else:
            cert = x509.load_der_x509_certificate(bytes(data))
        exts = cert.extensions
        not_before = cert.not_valid_before_utc
        not_after = cert.not_valid_after_utc
    except ValueError as exc:
        raise MalformedCertificate(str(exc)) from exc

    if not not_before < not_after:
        raise MalformedCertificate("notBefore must precede notAfter")

    san: FrozenSet[DomainPattern] = frozenset()
    info = None
    delegation_critical = True
    key_usage = None
    is_ca = False
    basic_path_len = None
    crl_url = None
    dns_suffix = None
    unknown_critical = []

    for ext in exts:
        value = ext.value
        if isinstance(value, x509.SubjectAlternativeName):
            try:
                san = frozenset(parse_pattern(n) for n in value.get_values_for_type(x509.DNSName))
            except MalformedName as exc:
                raise MalformedCertificate(f"bad dNSName in SAN: {exc}") from exc
        elif isinstance(value, x509.BasicConstraints):
            is_ca = value.ca
            basic_path_len = value.path_length
        elif isinstance(value, x509.KeyUsage):
            key_usage = KeyUsageSet.from_x509(value)
        elif isinstance(value, x509.CRLDistributionPoints):
            for dp in value:
                for gn in dp.full_name or ():
                    if isinstance(gn, x509.UniformResourceIdentifier) and crl_url is None:
                        crl_url = gn.value
        elif isinstance(value, x509.UnrecognizedExtension):
            if ext.oid == _DELEGATION_OID:
                try:
                    info = decode_delegation_info(value.value)
                except MalformedExtension as exc:
                    raise MalformedCertificate(f"bad DelegationInfo: {exc}") from exc
                delegation_critical = ext.critical
                if decert_context and not ext.critical:
                    raise MalformedCertificate("DelegationInfo must be marked critical")
            elif ext.oid == _REVOCATION_DNS_OID:
                dns_suffix = _read_ia5(value.value)
            if ext.critical:
                unknown_critical.append(ext.oid.dotted_string)

    if info is not None and decert_context:
        if is_ca:
            raise MalformedCertificate("DeCert carries the CA flag")
        if not san:
            raise MalformedCertificate("DeCert without subjectAltName")

    return ParsedCertificate(
        subject_cn=_common_name(cert.subject),
        issuer_cn=_common_name(cert.issuer),
        san_patterns=san,
        delegation_info=info,
        key_usage=key_usage,
        is_ca=is_ca,
        basic_path_len=basic_path_len,
        serial=cert.serial_number,
        not_before=not_before,
        not_after=not_after,
        public_key_bytes=keys.spki_bytes(cert.public_key()),
        raw_der=cert.public_bytes(serialization.Encoding.DER),
        crl_url=crl_url,
        revocation_dns_suffix=dns_suffix,
        unknown_critical=tuple(unknown_critical),
        delegation_critical=delegation_critical,
        x509_cert=cert,
    )


def load_certificates(data: Union[bytes, str], decert_context: bool = True) -> List[ParsedCertificate]:
    """Parse every certificate in a PEM bundle, in order."""
    raw = data.encode("ascii") if isinstance(data, str) else data
    if not raw.lstrip().startswith(b"-----"):
        return [parse_certificate(raw, decert_context)]
    try:
        certs = x509.load_pem_x509_certificates(raw)
    except ValueError as exc:
        raise MalformedCertificate(str(exc)) from exc
    return [parse_certificate(c, decert_context) for c in certs]


def load_certificate_file(path: Union[str, os.PathLike]) -> List[ParsedCertificate]:
    with open(path, "rb") as f:
        return load_certificates(f.read())


def to_pem(der: bytes) -> bytes:
    return x509.load_der_x509_certificate(der).public_bytes(serialization.Encoding.PEM)


def chain_pem(certs: Iterable[ParsedCertificate]) -> bytes:
    return b"".join(c.pem() for c in certs)


def verify_signature(child: ParsedCertificate, issuer_public_key_bytes: bytes) -> bool:
    """Check ``child``'s signature against an issuer SubjectPublicKeyInfo."""
    cert = child.x509_cert
    if cert is None:
        cert = x509.load_der_x509_certificate(child.raw_der)
    try:
        issuer_key = keys.load_public_key(issuer_public_key_bytes)
    except ValueError:
        return False
    try:
        if isinstance(issuer_key, ed25519.Ed25519PublicKey):
            issuer_key.verify(cert.signature, cert.tbs_certificate_bytes)
        elif isinstance(issuer_key, ec.EllipticCurvePublicKey):
            issuer_key.verify(
                cert.signature,
                cert.tbs_certificate_bytes,
                ec.ECDSA(cert.signature_hash_algorithm),
            )
        elif isinstance(issuer_key, rsa.RSAPublicKey):
            pad = cert.signature_algorithm_parameters
            if not isinstance(pad, (padding.PKCS1v15, padding.PSS)):
                pad = padding.PKCS1v15()
            issuer_key.verify(
                cert.signature, cert.tbs_certificate_bytes, pad, cert.signature_hash_algorithm
            )
        else:
            return False
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True
