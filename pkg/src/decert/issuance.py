"""Domain-owner side issuance of DeCerts.

Requests travel as PKCS#10 CSRs.  The requested scope is carried in the
subjectAltName (includes) and a DelegationInfo extension (excludes and path
length); the CSR signature is the proof of possession of the subject key.
"""

from __future__ import annotations

import datetime
from dataclasses import dataclass, field
from typing import FrozenSet, List, Optional, Sequence

from cryptography import x509
from cryptography.hazmat.primitives import serialization
from cryptography.x509.oid import ExtensionOID, NameOID

from . import keys
from .certs import (
    CertificateTemplate,
    KeyUsageSet,
    ParsedCertificate,
    PolicyViolation,
    build_certificate,
    parse_certificate,
    random_serial,
    verify_signature,
)
from .clock import Clock, system_clock, whole_seconds
from .codes import Violation, ViolationCode as V
from .extension import (
    DELEGATION_INFO_OID,
    DelegationInfo,
    MalformedExtension,
    decode_delegation_info,
    encode_delegation_info,
)
from .names import (
    DomainScope,
    MalformedName,
    excludes_within_include,
    parse_pattern,
    scope_subset_of,
)

__all__ = [
    "DelegationRequest",
    "IssuerPolicy",
    "MalformedRequest",
    "RevokedSubject",
    "UnknownSubject",
    "ClockError",
    "create_request",
    "policy_check",
    "issue_decert",
    "renew_decert",
]

CLOCK_SKEW_GRACE = datetime.timedelta(seconds=60)
DEFAULT_VALIDITY = datetime.timedelta(hours=6)


class MalformedRequest(ValueError):
    pass


class RevokedSubject(PermissionError):
    pass


class UnknownSubject(LookupError):
    pass


class ClockError(RuntimeError):
    pass


@dataclass(frozen=True)
class DelegationRequest:
    subject_cn: str
    public_key_bytes: bytes
    requested_scope: DomainScope
    requested_key_usage: Optional[KeyUsageSet]
    requested_path_len: int
    der: bytes = field(repr=False)

    @classmethod
    def from_der(cls, der: bytes) -> "DelegationRequest":
        try:
            csr = x509.load_der_x509_csr(bytes(der))
            exts = csr.extensions
            cn_attrs = csr.subject.get_attributes_for_oid(NameOID.COMMON_NAME)
            spki = keys.spki_bytes(csr.public_key())
        except (ValueError, TypeError) as exc:
            raise MalformedRequest(f"not a usable PKCS#10 request: {exc}") from exc
        if not cn_attrs:
            raise MalformedRequest("request has no subject common name")

        include = frozenset()
        info = DelegationInfo()
        key_usage = None
        try:
            for ext in exts:
                value = ext.value
                if isinstance(value, x509.SubjectAlternativeName):
                    include = frozenset(
                        parse_pattern(n) for n in value.get_values_for_type(x509.DNSName)
                    )
                elif isinstance(value, x509.KeyUsage):
                    key_usage = KeyUsageSet.from_x509(value)
                elif (
                    isinstance(value, x509.UnrecognizedExtension)
                    and ext.oid.dotted_string == DELEGATION_INFO_OID
                ):
                    info = decode_delegation_info(value.value)
        except (MalformedName, MalformedExtension) as exc:
            raise MalformedRequest(str(exc)) from exc
        if not include:
            raise MalformedRequest("request names no domains")

        return cls(
            subject_cn=cn_attrs[0].value,
            public_key_bytes=spki,
            requested_scope=DomainScope(include, info.exclude_domains),
            requested_key_usage=key_usage,
            requested_path_len=info.effective_path_len,
            der=bytes(der),
        )

    @classmethod
    def from_pem(cls, pem: bytes) -> "DelegationRequest":
        try:
            csr = x509.load_pem_x509_csr(pem)
        except ValueError as exc:
            raise MalformedRequest(str(exc)) from exc
        return cls.from_der(csr.public_bytes(serialization.Encoding.DER))

    def proof_valid(self) -> bool:
        try:
            return x509.load_der_x509_csr(self.der).is_signature_valid
        except ValueError:
            return False

    def public_key(self) -> keys.PublicKey:
        return keys.load_public_key(self.public_key_bytes)

    def pem(self) -> bytes:
        return x509.load_der_x509_csr(self.der).public_bytes(serialization.Encoding.PEM)


def create_request(
    subject_cn: str,
    key: keys.PrivateKey,
    scope: DomainScope,
    key_usage: Optional[KeyUsageSet] = None,
    path_len: int = 0,
) -> DelegationRequest:
    if keys.key_algorithm(key) not in keys.ALGORITHMS:
        raise keys.UnsupportedAlgorithm(f"unsupported key algorithm {keys.key_algorithm(key)}")
    if not scope.include:
        raise ValueError("a delegation request needs at least one include pattern")
    info = DelegationInfo(scope.exclude, None, path_len)
    builder = (
        x509.CertificateSigningRequestBuilder()
        .subject_name(x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, subject_cn)]))
        .add_extension(
            x509.SubjectAlternativeName(
                [x509.DNSName(str(p)) for p in scope.sorted_include()]
            ),
            critical=False,
        )
        .add_extension(
            x509.UnrecognizedExtension(
                x509.ObjectIdentifier(DELEGATION_INFO_OID), encode_delegation_info(info)
            ),
            critical=True,
        )
    )
    if key_usage is not None:
        builder = builder.add_extension(key_usage.to_x509(), critical=True)
    csr = builder.sign(key, keys.hash_for(key))
    return DelegationRequest.from_der(csr.public_bytes(serialization.Encoding.DER))


@dataclass(frozen=True)
class IssuerPolicy:
    allowed_key_algorithms: FrozenSet[str] = frozenset(keys.ALGORITHMS)
    min_key_bits: int = 256
    default_validity: datetime.timedelta = DEFAULT_VALIDITY
    min_validity: datetime.timedelta = datetime.timedelta(minutes=5)
    max_validity: datetime.timedelta = datetime.timedelta(days=30)
    max_path_len: int = 4
    allowed_key_usage: Optional[KeyUsageSet] = None

    def __post_init__(self):
        if not self.min_validity <= self.default_validity <= self.max_validity:
            raise ValueError("default validity must lie within the allowed range")


def _issuer_budget(issuer_cert: ParsedCertificate, policy: IssuerPolicy) -> int:
    if issuer_cert.is_decert:
        return issuer_cert.path_len
    return policy.max_path_len


def policy_check(
    req: DelegationRequest,
    policy: IssuerPolicy,
    issuer_scope: DomainScope,
    issuer_key_usage: Optional[KeyUsageSet],
    issuer_path_budget: int,
) -> List[Violation]:
    """Every reason the issuer must refuse ``req``; empty means acceptable."""
    out = []
    if not req.proof_valid():
        out.append(Violation(0, V.PROOF_OF_POSSESSION_INVALID, "CSR signature does not verify"))

    try:
        pub = req.public_key()
        alg = keys.key_algorithm(pub)
        if alg not in policy.allowed_key_algorithms:
            out.append(Violation(0, V.KEY_ALGORITHM_REJECTED, f"{alg} not allowed"))
        elif keys.key_bits(pub) < policy.min_key_bits:
            out.append(Violation(0, V.KEY_ALGORITHM_REJECTED, f"key shorter than {policy.min_key_bits} bits"))
    except ValueError as exc:
        out.append(Violation(0, V.KEY_ALGORITHM_REJECTED, str(exc)))

    scope = req.requested_scope
    subset = scope_subset_of(scope, issuer_scope)
    if not subset.is_subset:
        out.append(
            Violation(0, V.INCLUDE_NOT_SUBSET, ",".join(str(w) for w in subset.witnesses))
        )
    within = excludes_within_include(scope.exclude, issuer_scope.include)
    if not within.is_subset:
        out.append(
            Violation(0, V.EXCLUDE_NOT_SUBSET, ",".join(str(w) for w in within.witnesses))
        )

    ku = req.requested_key_usage
    if issuer_key_usage is not None and (ku is None or not ku <= issuer_key_usage):
        out.append(Violation(0, V.KEY_USAGE_NOT_SUBSET, f"requested {{{ku}}} vs issuer {{{issuer_key_usage}}}"))
    if policy.allowed_key_usage is not None and (ku is None or not ku <= policy.allowed_key_usage):
        out.append(Violation(0, V.KEY_USAGE_NOT_ALLOWED, f"requested {{{ku}}}"))

    if req.requested_path_len > issuer_path_budget - 1:
        out.append(
            Violation(
                0,
                V.PATH_LEN_EXCEEDED,
                f"requested pathLen {req.requested_path_len} with issuer budget {issuer_path_budget}",
            )
        )
    return sorted(set(out))


def check_against_issuer(
    req: DelegationRequest, issuer_cert: ParsedCertificate, policy: IssuerPolicy
) -> List[Violation]:
    return policy_check(
        req,
        policy,
        issuer_cert.delegation_scope,
        issuer_cert.key_usage,
        _issuer_budget(issuer_cert, policy),
    )


def _window(clock: Clock, validity: datetime.timedelta):
    try:
        now = clock()
    except Exception as exc:  # noqa: BLE001 - any clock failure is fatal here
        raise ClockError(str(exc)) from exc
    if now is None or now.tzinfo is None:
        raise ClockError("clock must return an aware UTC datetime")
    not_before = whole_seconds(now) - CLOCK_SKEW_GRACE
    return not_before, not_before + validity


def issue_decert(
    req: DelegationRequest,
    issuer_cert: ParsedCertificate,
    issuer_key: keys.PrivateKey,
    clock: Clock = system_clock,
    validity: Optional[datetime.timedelta] = None,
    policy: IssuerPolicy = IssuerPolicy(),
    serial: Optional[int] = None,
    crl_url: Optional[str] = None,
    revocation_dns_suffix: Optional[str] = None,
) -> ParsedCertificate:
    validity = policy.default_validity if validity is None else validity
    if not policy.min_validity <= validity <= policy.max_validity:
        raise PolicyViolation(f"validity {validity} outside policy bounds")
    violations = check_against_issuer(req, issuer_cert, policy)
    if violations:
        raise PolicyViolation(
            "request refused: " + ",".join(v.code.value for v in violations), violations
        )
    not_before, not_after = _window(clock, validity)
    template = CertificateTemplate(
        subject_cn=req.subject_cn,
        public_key=req.public_key(),
        not_before=not_before,
        not_after=not_after,
        san=req.requested_scope.sorted_include(),
        delegation_info=DelegationInfo(
            req.requested_scope.exclude, None, req.requested_path_len
        ),
        key_usage=req.requested_key_usage,
        serial=serial if serial is not None else random_serial(),
        crl_url=crl_url,
        revocation_dns_suffix=revocation_dns_suffix,
    )
    return parse_certificate(build_certificate(template, issuer_cert, issuer_key))


def renew_decert(
    existing: ParsedCertificate,
    issuer_cert: ParsedCertificate,
    issuer_key: keys.PrivateKey,
    clock: Clock = system_clock,
    reuse_key: bool = True,
    new_public_key: Optional[keys.PublicKey] = None,
    validity: Optional[datetime.timedelta] = None,
    revoked: Sequence[int] = (),
    serial: Optional[int] = None,
) -> ParsedCertificate:
    """Re-issue ``existing`` with a fresh serial and validity window.

    With ``reuse_key`` the subject key is kept, so DeCerts the subject has
    already signed stay valid.  Otherwise ``new_public_key`` replaces it.
    """
    if not existing.is_decert:
        raise UnknownSubject("only DeCerts can be renewed")
    if existing.issuer_cn != issuer_cert.subject_cn or not verify_signature(
        existing, issuer_cert.public_key_bytes
    ):
        raise UnknownSubject(f"{existing.subject_cn} was not issued by {issuer_cert.subject_cn}")
    if existing.serial in revoked:
        raise RevokedSubject(f"serial {existing.serial:x} is revoked")

    if reuse_key:
        public_key = existing.public_key()
    elif new_public_key is None:
        raise ValueError("key rotation needs the new subject public key")
    else:
        public_key = new_public_key

    if validity is None:
        validity = existing.not_after - existing.not_before
    not_before, not_after = _window(clock, validity)
    template = CertificateTemplate(
        subject_cn=existing.subject_cn,
        public_key=public_key,
        not_before=not_before,
        not_after=not_after,
        san=sorted(existing.san_patterns, key=str),
        delegation_info=existing.delegation_info,
        key_usage=existing.key_usage,
        serial=serial if serial is not None else random_serial(),
        crl_url=existing.crl_url,
        revocation_dns_suffix=existing.revocation_dns_suffix,
    )
    return parse_certificate(build_certificate(template, issuer_cert, issuer_key))
