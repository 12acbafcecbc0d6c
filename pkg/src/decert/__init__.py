"""Delegation certificates: scoped, owner-issued X.509 delegation for CDNs."""

from .certs import KeyUsageSet, ParsedCertificate, is_decert, load_certificates, parse_certificate
from .codes import Violation, ViolationCode
from .extension import DelegationInfo, decode_delegation_info, encode_delegation_info
from .names import DomainName, DomainPattern, DomainScope, parse_name, parse_pattern
from .validation import Mode, ValidationReport, Verdict, validate, validate_chain

__version__ = "0.1.0"
