from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class ViolationCode(str, Enum):
    UNKNOWN_CRITICAL_EXTENSION = "UnknownCriticalExtension"
    CHAIN_MALFORMED = "ChainMalformed"
    SIGNATURE_INVALID = "SignatureInvalid"
    EXPIRED = "Expired"
    NOT_YET_VALID = "NotYetValid"
    CA_FLAG_INVALID = "CAFlagInvalid"
    SAN_MISSING = "SANMissing"
    DELEGATION_INFO_MISMATCH = "DelegationInfoMismatch"
    INCLUDE_NOT_SUBSET = "IncludeNotSubset"
    EXCLUDE_NOT_SUBSET = "ExcludeNotSubset"
    PATH_LEN_EXCEEDED = "PathLenExceeded"
    KEY_USAGE_NOT_SUBSET = "KeyUsageNotSubset"
    HOSTNAME_NOT_IN_SCOPE = "HostnameNotInScope"
    HOSTNAME_EXCLUDED = "HostnameExcluded"
    REVOKED = "Revoked"
    UNTRUSTED_ROOT = "UntrustedRoot"
    # issuer-side policy only; never produced by chain validation
    PROOF_OF_POSSESSION_INVALID = "ProofOfPossessionInvalid"
    KEY_ALGORITHM_REJECTED = "KeyAlgorithmRejected"
    KEY_USAGE_NOT_ALLOWED = "KeyUsageNotAllowed"

    def __str__(self) -> str:
        return self.value


@dataclass(frozen=True, order=True)
class Violation:
    index: int
    code: ViolationCode
    detail: str = ""

    def __str__(self) -> str:
        return f"{self.index}\t{self.code.value}\t{self.detail}"
