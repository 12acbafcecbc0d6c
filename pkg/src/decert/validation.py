"""Consumer-side validation of certificate chains that may contain DeCerts.

Reports are exhaustive: every check runs and every failure is recorded, so
a chain that is wrong for three reasons yields three violation codes.
"""

from __future__ import annotations

import datetime
import json
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Tuple

from .certs import ParsedCertificate, verify_signature
from .clock import as_utc
from .codes import Violation, ViolationCode as V
from .extension import DELEGATION_INFO_OID
from .names import (
    DomainName,
    DomainScope,
    excludes_within_include,
    exclude_intersects,
    matches,
    parse_name,
    scope_subset_of,
)
from .revocation import (
    CRLDocument,
    RevocationStatus,
    check_crl,
    check_dns,
    serial_hex,
)

__all__ = [
    "Mode",
    "Verdict",
    "ChainMalformed",
    "CertificateChain",
    "CRLPolicy",
    "DNSPolicy",
    "ValidationInput",
    "ValidationReport",
    "split_chain",
    "validate_link",
    "effective_scope",
    "validate_chain",
    "validate",
]

DEFAULT_MAX_DECERT_DEPTH = 4


class Mode(str, Enum):
    AWARE = "DeCertAware"
    STRICT = "Strict"

    @classmethod
    def parse(cls, text: str) -> "Mode":
        key = text.strip().lower()
        if key in ("aware", "decertaware", "decert-aware"):
            return cls.AWARE
        if key == "strict":
            return cls.STRICT
        raise ValueError(f"unknown mode {text!r}")


class Verdict(str, Enum):
    ACCEPT = "Accept"
    REJECT = "Reject"


class ChainMalformed(ValueError):
    pass


@dataclass(frozen=True)
class CertificateChain:
    decerts: Tuple[ParsedCertificate, ...]
    eec: ParsedCertificate
    cas: Tuple[ParsedCertificate, ...]

    @property
    def certs(self) -> List[ParsedCertificate]:
        return [*self.decerts, self.eec, *self.cas]

    @property
    def segment_lengths(self) -> Tuple[int, int, int]:
        return (len(self.decerts), 1, len(self.cas))


def split_chain(raw_chain: Sequence[ParsedCertificate]) -> CertificateChain:
    """Split a leaf-first chain into DeCerts, the owner's EEC and CA certs."""
    if not raw_chain:
        raise ChainMalformed("empty chain")
    n = 0
    while n < len(raw_chain) and raw_chain[n].is_decert:
        n += 1
    if n == len(raw_chain):
        raise ChainMalformed("chain has no end-entity certificate below its DeCerts")
    eec = raw_chain[n]
    if n and eec.is_ca:
        raise ChainMalformed("DeCert issued directly by a CA certificate")
    rest = tuple(raw_chain[n + 1 :])
    for i, cert in enumerate(rest, start=n + 1):
        if cert.is_decert:
            raise ChainMalformed(f"DeCert at position {i} sits above a non-DeCert")
    return CertificateChain(tuple(raw_chain[:n]), eec, rest)


@dataclass(frozen=True)
class CRLPolicy:
    crls: Sequence[CRLDocument] = ()
    fail_closed: bool = True


@dataclass(frozen=True)
class DNSPolicy:
    resolver: object
    fail_closed: bool = True


@dataclass
class ValidationInput:
    chain: Sequence[ParsedCertificate]
    trust_anchors: Sequence[ParsedCertificate]
    hostname: DomainName
    at: datetime.datetime
    revocation: Optional[object] = None
    mode: Mode = Mode.AWARE
    max_decert_depth: int = DEFAULT_MAX_DECERT_DEPTH


@dataclass(frozen=True)
class ValidationReport:
    violations: Tuple[Violation, ...] = ()

    @property
    def verdict(self) -> Verdict:
        return Verdict.REJECT if self.violations else Verdict.ACCEPT

    @property
    def accepted(self) -> bool:
        return not self.violations

    def codes(self, index: Optional[int] = None) -> frozenset:
        return frozenset(
            v.code for v in self.violations if index is None or v.index == index
        )

    def to_text(self) -> str:
        lines = [str(v) for v in self.violations]
        lines.append(f"verdict\t{self.verdict.value}")
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "violations": [
                {"index": v.index, "code": v.code.value, "detail": v.detail}
                for v in self.violations
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_text(cls, text: str) -> "ValidationReport":
        violations = []
        verdict = None
        for line in text.splitlines():
            if not line:
                continue
            parts = line.split("\t", 2)
            if parts[0] == "verdict":
                verdict = Verdict(parts[1])
                continue
            violations.append(Violation(int(parts[0]), V(parts[1]), parts[2] if len(parts) > 2 else ""))
        report = cls(tuple(sorted(violations)))
        if verdict is not None and verdict is not report.verdict:
            raise ValueError("verdict line disagrees with the violation list")
        return report


def _fmt(items) -> str:
    return ",".join(str(x) for x in items)


def validate_link(
    parent: ParsedCertificate,
    child: ParsedCertificate,
    index: int = 0,
    max_path_len: Optional[int] = None,
) -> List[Violation]:
    """Delegation checks for one DeCert against the certificate that issued it.

    ``parent`` is either a DeCert or the owner's end-entity certificate.  An
    owner certificate does not bound path length; ``max_path_len`` (the
    validator's depth limit) applies instead.
    """
    out = []
    parent_scope = parent.delegation_scope
    child_scope = child.scope

    subset = scope_subset_of(child_scope, parent_scope)
    if not subset.is_subset:
        out.append(
            Violation(
                index,
                V.INCLUDE_NOT_SUBSET,
                f"not covered by {parent.subject_cn}: {_fmt(subset.witnesses)}",
            )
        )

    within = excludes_within_include(child_scope.exclude, parent_scope.include)
    if not within.is_subset:
        out.append(
            Violation(
                index,
                V.EXCLUDE_NOT_SUBSET,
                f"excludes outside {parent.subject_cn} include: {_fmt(within.witnesses)}",
            )
        )

    if parent.key_usage is not None:
        if child.key_usage is None:
            out.append(
                Violation(index, V.KEY_USAGE_NOT_SUBSET, "child has unrestricted key usage")
            )
        elif not child.key_usage <= parent.key_usage:
            extra = sorted(child.key_usage.bits - parent.key_usage.bits)
            out.append(
                Violation(
                    index,
                    V.KEY_USAGE_NOT_SUBSET,
                    f"bits {_fmt(extra)} not in issuer key usage {{{parent.key_usage}}}",
                )
            )

    if parent.is_decert:
        if parent.path_len < 1:
            out.append(
                Violation(
                    index,
                    V.PATH_LEN_EXCEEDED,
                    f"issuer {parent.subject_cn} has pathLen 0 and admits no delegation",
                )
            )
        elif child.path_len > parent.path_len - 1:
            out.append(
                Violation(
                    index,
                    V.PATH_LEN_EXCEEDED,
                    f"pathLen {child.path_len} exceeds issuer pathLen {parent.path_len} - 1",
                )
            )
    elif max_path_len is not None and child.path_len > max_path_len:
        out.append(
            Violation(
                index,
                V.PATH_LEN_EXCEEDED,
                f"pathLen {child.path_len} exceeds validator maximum {max_path_len}",
            )
        )
    return out


def effective_scope(chain) -> DomainScope:
    """Names the chain may serve.

    The leaf scope plus every ancestor exclude that overlaps it.  For chains
    whose links are valid this is just the leaf scope.
    """
    if not isinstance(chain, CertificateChain):
        chain = split_chain(chain)
    if not chain.decerts:
        return DomainScope(chain.eec.san_patterns)
    leaf = chain.decerts[0]
    excludes = set(leaf.scope.exclude)
    for ancestor in chain.decerts[1:]:
        for e in ancestor.scope.exclude:
            if any(exclude_intersects(e, p) for p in leaf.san_patterns):
                excludes.add(e)
    return DomainScope(leaf.san_patterns, frozenset(excludes))


def _check_hostname(scope: DomainScope, hostname: DomainName) -> List[Violation]:
    if scope.contains(hostname):
        return []
    if scope.excluded(hostname) and any(
        matches(p, hostname) for p in scope.include
    ):
        return [Violation(0, V.HOSTNAME_EXCLUDED, f"{hostname} is excluded from the delegation")]
    return [Violation(0, V.HOSTNAME_NOT_IN_SCOPE, f"{hostname} not in {scope}")]


def _standard_checks(
    chain: Sequence[ParsedCertificate],
    anchors: Sequence[ParsedCertificate],
    at: datetime.datetime,
    owner_index: Optional[int],
) -> List[Violation]:
    """Signatures, validity windows, anchoring and CA constraints.

    Certificates below ``owner_index`` (DeCerts) and the owner EEC itself
    are allowed to act as issuers without the CA flag.
    """
    out = []
    for i, cert in enumerate(chain):
        if at < cert.not_before:
            out.append(Violation(i, V.NOT_YET_VALID, f"valid from {cert.not_before.isoformat()}"))
        elif at > cert.not_after:
            out.append(Violation(i, V.EXPIRED, f"expired {cert.not_after.isoformat()}"))

    for i in range(len(chain) - 1):
        child, issuer = chain[i], chain[i + 1]
        if child.issuer_cn != issuer.subject_cn:
            out.append(
                Violation(
                    i,
                    V.CHAIN_MALFORMED,
                    f"issuer {child.issuer_cn!r} does not name next certificate {issuer.subject_cn!r}",
                )
            )
        if not verify_signature(child, issuer.public_key_bytes):
            out.append(Violation(i, V.SIGNATURE_INVALID, f"not signed by {issuer.subject_cn}"))
        delegating = owner_index is not None and i + 1 <= owner_index
        if not delegating:
            out.extend(_ca_issuer_checks(issuer, i + 1))

    top_index = len(chain) - 1
    top = chain[top_index]
    if any(top.raw_der == a.raw_der for a in anchors):
        return out
    candidates = [a for a in anchors if a.subject_cn == top.issuer_cn]
    if not candidates:
        out.append(Violation(top_index, V.UNTRUSTED_ROOT, f"no trust anchor named {top.issuer_cn!r}"))
        return out
    anchor = next(
        (a for a in candidates if verify_signature(top, a.public_key_bytes)), None
    )
    if anchor is None:
        out.append(
            Violation(top_index, V.SIGNATURE_INVALID, f"not signed by trust anchor {top.issuer_cn}")
        )
        return out
    if not anchor.valid_at(at):
        code = V.EXPIRED if at > anchor.not_after else V.NOT_YET_VALID
        out.append(Violation(len(chain), code, f"trust anchor {anchor.subject_cn} not valid"))
    return out


def _ca_issuer_checks(issuer: ParsedCertificate, index: int) -> List[Violation]:
    if not issuer.is_ca:
        return [Violation(index, V.CA_FLAG_INVALID, "issuing certificate is not a CA")]
    if issuer.key_usage is not None and 5 not in issuer.key_usage.bits:
        return [Violation(index, V.CA_FLAG_INVALID, "CA key usage lacks keyCertSign")]
    return []


def _ca_path_len_checks(
    chain: Sequence[ParsedCertificate], first_ca: int
) -> List[Violation]:
    out = []
    for j in range(first_ca, len(chain)):
        cert = chain[j]
        if not cert.is_ca or cert.basic_path_len is None:
            continue
        # intermediates between the end-entity and this CA
        below = sum(
            1 for k in range(first_ca, j) if chain[k].subject_cn != chain[k].issuer_cn
        )
        if below > cert.basic_path_len:
            out.append(
                Violation(
                    j,
                    V.PATH_LEN_EXCEEDED,
                    f"{below} intermediates below CA with pathLenConstraint {cert.basic_path_len}",
                )
            )
    return out


def _revocation_checks(
    decerts: Sequence[ParsedCertificate],
    chain: Sequence[ParsedCertificate],
    policy,
    at: datetime.datetime,
) -> List[Violation]:
    out = []
    for i, cert in enumerate(decerts):
        issuer = chain[i + 1]
        serial = serial_hex(cert.serial)
        if isinstance(policy, CRLPolicy):
            crl = next(
                (c for c in policy.crls if c.issuer_cn == issuer.subject_cn and c.verify(issuer)),
                None,
            )
            if crl is None:
                if policy.fail_closed:
                    out.append(
                        Violation(i, V.REVOKED, f"revocation status unknown: no CRL from {issuer.subject_cn}")
                    )
                continue
            status = check_crl(cert, crl, at)
        elif isinstance(policy, DNSPolicy):
            status = check_dns(cert, policy.resolver)
        else:
            raise TypeError(f"unknown revocation policy {policy!r}")

        if status is RevocationStatus.REVOKED:
            out.append(Violation(i, V.REVOKED, f"serial {serial} revoked"))
        elif status is RevocationStatus.STALE_CRL and policy.fail_closed:
            out.append(Violation(i, V.REVOKED, "revocation status unknown: stale CRL"))
        elif status is RevocationStatus.LOOKUP_FAILED and policy.fail_closed:
            out.append(Violation(i, V.REVOKED, "revocation status unknown: DNS lookup failed"))
    return out


def _strict(inp: ValidationInput, chain, at) -> List[Violation]:
    # an unmodified client refuses the certificate outright
    unknown = [
        Violation(i, V.UNKNOWN_CRITICAL_EXTENSION, f"unhandled critical extension {_fmt(c.unknown_critical)}")
        for i, c in enumerate(chain)
        if c.unknown_critical
    ]
    if unknown:
        return unknown
    out = _standard_checks(chain, inp.trust_anchors, at, owner_index=None)
    out.extend(_ca_path_len_checks(chain, 1))
    out.extend(_check_hostname(DomainScope(chain[0].san_patterns), inp.hostname))
    return out


def _aware(inp: ValidationInput, chain, at) -> List[Violation]:
    out = []
    for i, cert in enumerate(chain):
        unknown = [oid for oid in cert.unknown_critical if oid != DELEGATION_INFO_OID]
        if unknown:
            out.append(Violation(i, V.UNKNOWN_CRITICAL_EXTENSION, f"unhandled critical extension {_fmt(unknown)}"))

    try:
        split = split_chain(chain)
    except ChainMalformed as exc:
        out.append(Violation(0, V.CHAIN_MALFORMED, str(exc)))
        out.extend(_standard_checks(chain, inp.trust_anchors, at, owner_index=None))
        return out

    n = len(split.decerts)
    out.extend(_standard_checks(chain, inp.trust_anchors, at, owner_index=n))
    out.extend(_ca_path_len_checks(chain, n + 1))

    if n > inp.max_decert_depth:
        out.append(
            Violation(0, V.PATH_LEN_EXCEEDED, f"{n} DeCerts exceed validator maximum {inp.max_decert_depth}")
        )

    for i, cert in enumerate(split.decerts):
        if cert.is_ca:
            out.append(Violation(i, V.CA_FLAG_INVALID, "DeCert must have cA=FALSE"))
        if not cert.san_patterns:
            out.append(Violation(i, V.SAN_MISSING, "DeCert has no dNSName SAN entries"))
        info = cert.delegation_info
        if not cert.delegation_critical:
            out.append(Violation(i, V.DELEGATION_INFO_MISMATCH, "DelegationInfo not marked critical"))
        if info.include_domains is not None and info.include_domains != cert.san_patterns:
            out.append(
                Violation(i, V.DELEGATION_INFO_MISMATCH, "include mirror differs from SAN")
            )
        out.extend(
            validate_link(chain[i + 1], cert, index=i, max_path_len=inp.max_decert_depth - 1)
        )

    out.extend(_check_hostname(effective_scope(split), inp.hostname))
    if inp.revocation is not None and n:
        out.extend(_revocation_checks(split.decerts, chain, inp.revocation, at))
    return out


def validate_chain(inp: ValidationInput) -> ValidationReport:
    chain = list(inp.chain)
    if not chain:
        return ValidationReport((Violation(0, V.CHAIN_MALFORMED, "empty chain"),))
    at = as_utc(inp.at)
    if inp.mode is Mode.STRICT:
        violations = _strict(inp, chain, at)
    else:
        violations = _aware(inp, chain, at)
    return ValidationReport(tuple(sorted(set(violations))))


def validate(
    chain: Sequence[ParsedCertificate],
    anchors: Sequence[ParsedCertificate],
    hostname,
    at: datetime.datetime,
    mode: Mode = Mode.AWARE,
    revocation=None,
    max_decert_depth: int = DEFAULT_MAX_DECERT_DEPTH,
) -> ValidationReport:
    if isinstance(hostname, str):
        hostname = parse_name(hostname)
    return validate_chain(
        ValidationInput(list(chain), list(anchors), hostname, at, revocation, mode, max_decert_depth)
    )
