"""Deterministic test PKI and the on-disk fixture corpus.

Every key, serial and timestamp derives from ``seed`` and ``at``, and
fixtures use Ed25519 (deterministic signatures), so two runs with the same
arguments write byte-identical files.
"""

from __future__ import annotations

import datetime
import json
import os
import random
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, List, Optional, Sequence

from . import keys
from .certs import (
    CertificateTemplate,
    KeyUsageSet,
    ParsedCertificate,
    build_certificate,
    chain_pem,
    parse_certificate,
)
from .clock import FixedClock, format_instant, parse_instant
from .extension import DelegationInfo
from .names import DomainPattern, parse_name, parse_pattern
from .revocation import RevocationStore, build_crl, export_zone, revoke

FIXTURE_EPOCH = datetime.datetime(2025, 1, 1, tzinfo=datetime.timezone.utc)
DEFAULT_SEED = 42
SKEW = datetime.timedelta(seconds=60)
DECERT_VALIDITY = datetime.timedelta(hours=6)
TLS_USAGE = KeyUsageSet.of(0)

MANIFEST = "manifest.tsv"
ANCHORS = "anchors.pem"
CORPUS_META = "corpus.json"


@dataclass
class Party:
    cert: ParsedCertificate
    key: keys.PrivateKey

    @property
    def name(self) -> str:
        return self.cert.subject_cn


class FixtureFactory:
    """Builds certificates directly, bypassing issuer policy where asked.

    Test corpora need deliberately broken DeCerts, which the issuance
    module would refuse to sign.
    """

    def __init__(self, seed: int = DEFAULT_SEED, at: datetime.datetime = FIXTURE_EPOCH, alg: str = "ed25519"):
        self.rng = random.Random(seed)
        self.at = at
        self.alg = alg

    def new_key(self) -> keys.PrivateKey:
        return keys.generate_key(self.alg, seed=self.rng.getrandbits(256).to_bytes(32, "big"))

    def serial(self) -> int:
        raw = bytearray(self.rng.getrandbits(128).to_bytes(16, "big"))
        raw[0] = (raw[0] & 0x7F) or 0x01
        return int.from_bytes(raw, "big")

    def _sign(self, template: CertificateTemplate, issuer: Optional[Party], key, enforce=True) -> ParsedCertificate:
        if issuer is None:
            der = build_certificate(template, None, key, enforce_policy=enforce)
        else:
            der = build_certificate(template, issuer.cert, issuer.key, enforce_policy=enforce)
        return parse_certificate(der, decert_context=False)

    def root(self, cn: str = "DeCert Fixture Root CA") -> Party:
        key = self.new_key()
        t = CertificateTemplate(
            subject_cn=cn,
            public_key=key.public_key(),
            not_before=self.at - datetime.timedelta(days=365),
            not_after=self.at + datetime.timedelta(days=3650),
            key_usage=KeyUsageSet.of(5, 6),
            is_ca=True,
            serial=self.serial(),
        )
        return Party(self._sign(t, None, key), key)

    def intermediate(self, parent: Party, cn: str = "DeCert Fixture Issuing CA", path_len: Optional[int] = 0) -> Party:
        key = self.new_key()
        t = CertificateTemplate(
            subject_cn=cn,
            public_key=key.public_key(),
            not_before=self.at - datetime.timedelta(days=180),
            not_after=self.at + datetime.timedelta(days=1825),
            key_usage=KeyUsageSet.of(5, 6),
            is_ca=True,
            basic_path_len=path_len,
            serial=self.serial(),
        )
        return Party(self._sign(t, parent, key), key)

    def eec(self, ca: Party, cn: str, san: Sequence[str] = (), key_usage: Optional[KeyUsageSet] = None) -> Party:
        key = self.new_key()
        t = CertificateTemplate(
            subject_cn=cn,
            public_key=key.public_key(),
            not_before=self.at - datetime.timedelta(days=30),
            not_after=self.at + datetime.timedelta(days=60),
            san=[parse_pattern(s) for s in (san or [cn])],
            key_usage=key_usage,
            serial=self.serial(),
        )
        return Party(self._sign(t, ca, key), key)

    def decert(
        self,
        issuer: Party,
        cn: str,
        include: Iterable[str],
        exclude: Iterable[str] = (),
        path_len: Optional[int] = 0,
        key_usage: Optional[KeyUsageSet] = TLS_USAGE,
        not_before: Optional[datetime.datetime] = None,
        validity: datetime.timedelta = DECERT_VALIDITY,
        key: Optional[keys.PrivateKey] = None,
        include_mirror: bool = False,
        is_ca: bool = False,
        critical: bool = True,
        revocation_dns_suffix: Optional[str] = None,
    ) -> Party:
        key = key or self.new_key()
        san = [parse_pattern(s) for s in include]
        nb = not_before if not_before is not None else self.at - SKEW
        t = CertificateTemplate(
            subject_cn=cn,
            public_key=key.public_key(),
            not_before=nb,
            not_after=nb + validity,
            san=san,
            delegation_info=DelegationInfo(
                frozenset(parse_name(e) for e in exclude),
                frozenset(san) if include_mirror else None,
                path_len,
            ),
            key_usage=key_usage,
            is_ca=is_ca,
            serial=self.serial(),
            delegation_critical=critical,
            revocation_dns_suffix=revocation_dns_suffix,
        )
        return Party(self._sign(t, issuer, key, enforce=False), key)


@dataclass
class Fixture:
    name: str
    chain: List[ParsedCertificate]
    key: keys.PrivateKey
    rows: List[tuple]  # (hostname, mode, verdict, codes)
    extra_files: dict


def _write(path: Path, data: bytes) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(data)


def build_corpus(seed: int = DEFAULT_SEED, at: datetime.datetime = FIXTURE_EPOCH):
    """Return (anchors, owners, fixtures) for the standard corpus."""
    f = FixtureFactory(seed, at)
    root = f.root()
    ca = f.intermediate(root)
    abc = f.eec(ca, "abc.com")
    localhost = f.eec(ca, "a.localhost")
    base = [abc.cert, ca.cert]
    strict_reject = ("Reject", "UnknownCriticalExtension")

    fixtures = []

    fig1 = f.decert(abc, "cdn.com", ["*.content.abc.com"])
    fixtures.append(
        Fixture(
            "fig1",
            [fig1.cert, *base],
            fig1.key,
            [
                ("x.content.abc.com", "DeCertAware", "Accept", ""),
                ("x.content.abc.com", "Strict", *strict_reject),
            ],
            {},
        )
    )

    cdn1 = f.decert(abc, "cdn1.com", ["*.pics.abc.com"], ["a.pics.abc.com"], path_len=0)
    cdn2 = f.decert(cdn1, "cdn2.com", ["*.vids.abc.com"], path_len=0)
    fixtures.append(
        Fixture(
            "fig2a",
            [cdn2.cert, cdn1.cert, *base],
            cdn2.key,
            [
                ("x.vids.abc.com", "DeCertAware", "Reject", "IncludeNotSubset,PathLenExceeded"),
                ("x.vids.abc.com", "Strict", *strict_reject),
            ],
            {},
        )
    )

    cdn1b = f.decert(
        abc, "cdn1.com", ["*.pics.abc.com"], ["a.pics.abc.com"], path_len=1,
        key_usage=KeyUsageSet.of(0, 1, 5, 6),
    )
    cdn2b = f.decert(
        cdn1b, "cdn2.com", ["*.pics.abc.com"], ["a.pics.abc.com", "a.vids.abc.com"], path_len=5,
        key_usage=KeyUsageSet.of(1, 3, 5, 6),
    )
    fixtures.append(
        Fixture(
            "fig2b",
            [cdn2b.cert, cdn1b.cert, *base],
            cdn2b.key,
            [
                ("x.pics.abc.com", "DeCertAware", "Reject", "ExcludeNotSubset,KeyUsageNotSubset,PathLenExceeded"),
                ("x.pics.abc.com", "Strict", *strict_reject),
            ],
            {},
        )
    )

    poc = f.decert(localhost, "cdn.com", ["*.a.localhost"], ["b.a.localhost"])
    rows = []
    for host, verdict, codes in (
        ("a.a.localhost", "Accept", ""),
        ("b.a.localhost", "Reject", "HostnameExcluded"),
        ("c.b.a.localhost", "Reject", "HostnameExcluded"),
    ):
        rows.append((host, "DeCertAware", verdict, codes))
        rows.append((host, "Strict", *strict_reject))
    fixtures.append(Fixture("poc", [poc.cert, localhost.cert, ca.cert], poc.key, rows, {}))

    expired = f.decert(
        abc, "cdn.com", ["*.content.abc.com"], not_before=at - datetime.timedelta(hours=7) - SKEW
    )
    fixtures.append(
        Fixture(
            "expired",
            [expired.cert, *base],
            expired.key,
            [("x.content.abc.com", "DeCertAware", "Reject", "Expired")],
            {},
        )
    )

    revoked = f.decert(abc, "cdn.com", ["*.content.abc.com"])
    store = RevocationStore()
    revoke(store, revoked.cert.serial, "keyCompromise", FixedClock(at - datetime.timedelta(minutes=5)))
    crl = build_crl(store, abc.cert, abc.key, FixedClock(at - datetime.timedelta(minutes=1)))
    zone = export_zone(store, "abc.com")
    fixtures.append(
        Fixture(
            "revoked",
            [revoked.cert, *base],
            revoked.key,
            [
                ("x.content.abc.com", "DeCertAware", "Accept", ""),
                ("x.content.abc.com", "DeCertAware+crl", "Reject", "Revoked"),
                ("x.content.abc.com", "DeCertAware+dns", "Reject", "Revoked"),
            ],
            {
                "crl.der": crl.der,
                "zone.txt": zone.to_text().encode("ascii"),
                "revocations.tsv": "".join(r.to_line() + "\n" for r in store.records()).encode("ascii"),
            },
        )
    )

    fixtures.append(
        Fixture(
            "plain",
            list(base),
            abc.key,
            [
                ("abc.com", "DeCertAware", "Accept", ""),
                ("abc.com", "Strict", "Accept", ""),
            ],
            {},
        )
    )

    owners = {"abc.com": abc, "a.localhost": localhost}
    return [root.cert], owners, fixtures, ca


def write_corpus(out_dir, seed: int = DEFAULT_SEED, at: datetime.datetime = FIXTURE_EPOCH) -> Path:
    out = Path(out_dir)
    anchors, owners, fixtures, ca = build_corpus(seed, at)
    _write(out / ANCHORS, chain_pem(anchors))
    for name, party in owners.items():
        _write(out / "owners" / name / "cert.pem", chain_pem([party.cert, ca.cert]))
        _write(out / "owners" / name / "key.pem", keys.private_key_pem(party.key))
    lines = []
    for fx in fixtures:
        _write(out / fx.name / "chain.pem", chain_pem(fx.chain))
        _write(out / fx.name / "key.pem", keys.private_key_pem(fx.key))
        for fname, data in fx.extra_files.items():
            _write(out / fx.name / fname, data)
        for host, mode, verdict, codes in fx.rows:
            lines.append(f"{fx.name}\t{host}\t{mode}\t{verdict}\t{codes}\n")
    _write(out / MANIFEST, "".join(lines).encode("ascii"))
    meta = {"seed": seed, "at": format_instant(at)}
    _write(out / CORPUS_META, (json.dumps(meta, sort_keys=True) + "\n").encode("ascii"))
    return out


def corpus_instant(corpus_dir) -> datetime.datetime:
    meta_path = Path(corpus_dir) / CORPUS_META
    if not meta_path.exists():
        return FIXTURE_EPOCH
    return parse_instant(json.loads(meta_path.read_text())["at"])
