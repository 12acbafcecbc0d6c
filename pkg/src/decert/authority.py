"""The domain owner's delegation authority as a small HTTP service.

Endpoints::

    POST /v1/delegations        PKCS#10 DER body -> PEM chain [DeCert, issuer chain]
    GET  /v1/nonce?key=<hex>    one-time renewal nonce bound to a subject key hash
    POST /v1/renewals           JSON {serial, nonce, signature} -> renewed PEM chain
    GET  /v1/crl.der            current owner-signed CRL
    GET  /v1/revocations.zone   revocation TXT records in master-file syntax
    GET  /v1/healthz
"""

from __future__ import annotations

import base64
import datetime
import http.server
import json
import logging
import os
import secrets
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Optional, Tuple
from urllib.parse import parse_qs, urlsplit

from . import keys
from .certs import ParsedCertificate, PolicyViolation, chain_pem, load_certificates, parse_certificate
from .clock import Clock, parse_duration, system_clock
from .issuance import (
    DelegationRequest,
    IssuerPolicy,
    MalformedRequest,
    RevokedSubject,
    UnknownSubject,
    check_against_issuer,
    issue_decert,
    renew_decert,
)
from .revocation import (
    DEFAULT_CRL_LIFETIME,
    RevocationStore,
    build_crl,
    export_zone,
    revoke,
    serial_hex,
)

log = logging.getLogger(__name__)

CT_PKCS10 = "application/pkcs10"
CT_PEM_CHAIN = "application/pem-certificate-chain"
CT_CRL = "application/pkix-crl"
CT_ZONE = "text/dns"
CT_JSON = "application/json"
CT_TEXT = "text/plain; charset=utf-8"

DEFAULT_NONCE_LIFETIME = datetime.timedelta(seconds=120)
RENEWALS_PER_HOUR = 10


class StaleNonce(PermissionError):
    pass


def renewal_message(serial: int, nonce: bytes) -> bytes:
    """Bytes the subject key signs to authorize a renewal."""
    return f"decert-renew:{serial_hex(serial)}:{nonce.hex()}".encode("ascii")


def renewal_body(cert: ParsedCertificate, key: keys.PrivateKey, nonce: bytes) -> bytes:
    sig = keys.sign(key, renewal_message(cert.serial, nonce))
    return json.dumps(
        {
            "serial": serial_hex(cert.serial),
            "nonce": nonce.hex(),
            "signature": base64.b64encode(sig).decode("ascii"),
        }
    ).encode("utf-8")


@dataclass
class AuthorityConfig:
    issuer_cert_path: str
    issuer_key_path: str
    store_dir: str
    listen: Tuple[str, int] = ("127.0.0.1", 0)
    policy: IssuerPolicy = field(default_factory=IssuerPolicy)
    nonce_lifetime: datetime.timedelta = DEFAULT_NONCE_LIFETIME
    crl_lifetime: datetime.timedelta = DEFAULT_CRL_LIFETIME
    revocation_domain: Optional[str] = None
    crl_url: Optional[str] = None
    renewals_per_hour: int = RENEWALS_PER_HOUR

    @classmethod
    def from_json(cls, path) -> "AuthorityConfig":
        base = Path(path).parent
        raw = json.loads(Path(path).read_text())

        def rel(p):
            return str(base / p) if not os.path.isabs(p) else p

        policy_raw = raw.get("policy", {})
        policy = IssuerPolicy(
            **{
                k: (parse_duration(v) if k.endswith("validity") else v)
                for k, v in policy_raw.items()
                if k != "allowed_key_algorithms"
            },
            **(
                {"allowed_key_algorithms": frozenset(policy_raw["allowed_key_algorithms"])}
                if "allowed_key_algorithms" in policy_raw
                else {}
            ),
        )
        host, _, port = raw.get("listen", "127.0.0.1:0").rpartition(":")
        return cls(
            issuer_cert_path=rel(raw["issuer_cert"]),
            issuer_key_path=rel(raw["issuer_key"]),
            store_dir=rel(raw["store_dir"]),
            listen=(host or "127.0.0.1", int(port)),
            policy=policy,
            nonce_lifetime=parse_duration(raw.get("nonce_lifetime", "120s")),
            crl_lifetime=parse_duration(raw.get("crl_lifetime", "1h")),
            revocation_domain=raw.get("revocation_domain"),
            crl_url=raw.get("crl_url"),
            renewals_per_hour=int(raw.get("renewals_per_hour", RENEWALS_PER_HOUR)),
        )


@dataclass(frozen=True)
class NonceChallenge:
    nonce: bytes
    issued_at: datetime.datetime
    bound_subject_key_hash: str


class NonceTable:
    def __init__(self, lifetime: datetime.timedelta, clock: Clock):
        self.lifetime = lifetime
        self.clock = clock
        self._lock = threading.Lock()
        self._live: Dict[bytes, NonceChallenge] = {}

    def issue(self, subject_key_hash: str) -> NonceChallenge:
        ch = NonceChallenge(secrets.token_bytes(32), self.clock(), subject_key_hash.lower())
        with self._lock:
            self._live[ch.nonce] = ch
        return ch

    def consume(self, nonce: bytes, subject_key_hash: str) -> None:
        """Atomically check and burn a nonce."""
        with self._lock:
            ch = self._live.pop(nonce, None)
            now = self.clock()
            for n, c in list(self._live.items()):
                if now - c.issued_at > self.lifetime:
                    del self._live[n]
        if ch is None:
            raise StaleNonce("unknown or already used nonce")
        if self.clock() - ch.issued_at > self.lifetime:
            raise StaleNonce("nonce expired")
        if ch.bound_subject_key_hash != subject_key_hash.lower():
            raise StaleNonce("nonce bound to a different key")


class TokenBucket:
    """Per-key bucket: ``capacity`` tokens refilled evenly over an hour."""

    def __init__(self, capacity: int, clock: Clock):
        self.capacity = capacity
        self.clock = clock
        self._lock = threading.Lock()
        self._state: Dict[str, Tuple[float, float]] = {}

    def take(self, key: str) -> bool:
        now = self.clock().timestamp()
        rate = self.capacity / 3600.0
        with self._lock:
            tokens, last = self._state.get(key, (float(self.capacity), now))
            tokens = min(self.capacity, tokens + (now - last) * rate)
            if tokens < 1:
                self._state[key] = (tokens, now)
                return False
            self._state[key] = (tokens - 1, now)
            return True


class IssuedStore:
    """Issued DeCerts as ``<serial-hex>.pem`` files; restart-safe."""

    def __init__(self, directory):
        self.dir = Path(directory)
        self.dir.mkdir(parents=True, exist_ok=True)
        self._lock = threading.Lock()
        self._certs: Dict[int, ParsedCertificate] = {}
        for p in sorted(self.dir.glob("*.pem")):
            cert = parse_certificate(p.read_bytes())
            self._certs[cert.serial] = cert

    def add(self, cert: ParsedCertificate) -> None:
        with self._lock:
            (self.dir / f"{serial_hex(cert.serial)}.pem").write_bytes(cert.pem())
            self._certs[cert.serial] = cert

    def get(self, serial: int) -> Optional[ParsedCertificate]:
        return self._certs.get(serial)

    def __len__(self) -> int:
        return len(self._certs)


@dataclass
class Response:
    status: int
    content_type: str
    body: bytes


def _error(status: int, name: str, detail: str, **extra) -> Response:
    payload = {"error": name, "detail": detail, **extra}
    return Response(status, CT_JSON, json.dumps(payload, sort_keys=True).encode("utf-8"))


class Authority:
    """Request handling independent of the HTTP transport."""

    def __init__(self, config: AuthorityConfig, clock: Clock = system_clock):
        self.config = config
        self.clock = clock
        bundle = load_certificates(Path(config.issuer_cert_path).read_bytes(), decert_context=False)
        self.issuer_cert = bundle[0]
        self.issuer_chain = bundle
        self.issuer_key = keys.load_private_key_file(config.issuer_key_path)
        if not keys.keys_match(self.issuer_key, self.issuer_cert.public_key()):
            raise ValueError("issuer key does not match issuer certificate")
        store = Path(config.store_dir)
        store.mkdir(parents=True, exist_ok=True)
        self.revocations = RevocationStore(store / "revocations.tsv")
        self.issued = IssuedStore(store / "issued")
        self.nonces = NonceTable(config.nonce_lifetime, clock)
        self.bucket = TokenBucket(config.renewals_per_hour, clock)
        self._write_lock = threading.Lock()
        self._crl_cache: Optional[Tuple[int, bytes]] = None
        self._crl_lock = threading.Lock()

    @property
    def revocation_domain(self) -> str:
        return self.config.revocation_domain or self.issuer_cert.subject_cn

    def _chain_response(self, cert: ParsedCertificate, status: int) -> Response:
        return Response(status, CT_PEM_CHAIN, chain_pem([cert, *self.issuer_chain]))

    def handle_issue(self, body: bytes) -> Response:
        try:
            req = DelegationRequest.from_der(body)
        except MalformedRequest as exc:
            return _error(400, "MalformedRequest", str(exc))
        violations = check_against_issuer(req, self.issuer_cert, self.config.policy)
        if violations:
            return _error(
                422,
                "PolicyViolation",
                "request refused",
                violations=[{"code": v.code.value, "detail": v.detail} for v in violations],
            )
        with self._write_lock:
            try:
                cert = issue_decert(
                    req,
                    self.issuer_cert,
                    self.issuer_key,
                    self.clock,
                    policy=self.config.policy,
                    crl_url=self.config.crl_url,
                    revocation_dns_suffix=self.config.revocation_domain,
                )
            except PolicyViolation as exc:
                return _error(422, "PolicyViolation", str(exc))
            self.issued.add(cert)
        return self._chain_response(cert, 201)

    def issue_nonce(self, subject_key_hash: str) -> NonceChallenge:
        return self.nonces.issue(subject_key_hash)

    def handle_renew(self, body: bytes) -> Response:
        try:
            msg = json.loads(body)
            serial = int(msg["serial"], 16)
            nonce = bytes.fromhex(msg["nonce"])
            signature = base64.b64decode(msg["signature"], validate=True)
        except (ValueError, KeyError, TypeError) as exc:
            return _error(400, "MalformedRequest", f"bad renewal body: {exc}")

        existing = self.issued.get(serial)
        if existing is None:
            return _error(404, "UnknownSerial", f"no DeCert with serial {msg['serial']}")
        key_hash = keys.spki_hash(existing.public_key_bytes)
        try:
            self.nonces.consume(nonce, key_hash)
        except StaleNonce as exc:
            return _error(409, "StaleNonce", str(exc))
        if not keys.verify(existing.public_key(), signature, renewal_message(serial, nonce)):
            return _error(403, "BadSignature", "renewal not signed by the subject key")
        if serial in self.revocations:
            return _error(410, "RevokedSubject", f"serial {serial_hex(serial)} is revoked")
        if not self.bucket.take(key_hash):
            return _error(429, "RateLimited", "too many renewals for this key")

        with self._write_lock:
            try:
                cert = renew_decert(
                    existing,
                    self.issuer_cert,
                    self.issuer_key,
                    self.clock,
                    reuse_key=True,
                    revoked=self.revocations,
                )
            except RevokedSubject as exc:
                return _error(410, "RevokedSubject", str(exc))
            except UnknownSubject as exc:
                return _error(404, "UnknownSerial", str(exc))
            self.issued.add(cert)
        return self._chain_response(cert, 201)

    def revoke(self, serial: int, reason: str = "unspecified"):
        return revoke(self.revocations, serial, reason, self.clock)

    def serve_crl(self) -> bytes:
        with self._crl_lock:
            gen = self.revocations.generation
            if self._crl_cache is None or self._crl_cache[0] != gen:
                crl = build_crl(
                    self.revocations, self.issuer_cert, self.issuer_key, self.clock,
                    self.config.crl_lifetime,
                )
                self._crl_cache = (gen, crl.der)
            return self._crl_cache[1]

    def serve_zone(self) -> str:
        return export_zone(self.revocations, self.revocation_domain).to_text()


class _Handler(http.server.BaseHTTPRequestHandler):
    server_version = "decert-authority/0.1"

    @property
    def authority(self) -> Authority:
        return self.server.authority

    def _send(self, resp: Response) -> None:
        self.send_response(resp.status)
        self.send_header("Content-Type", resp.content_type)
        self.send_header("Content-Length", str(len(resp.body)))
        self.end_headers()
        self.wfile.write(resp.body)

    def _body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        return self.rfile.read(length) if length else b""

    def do_GET(self):
        url = urlsplit(self.path)
        a = self.authority
        if url.path == "/v1/healthz":
            self._send(Response(200, CT_TEXT, b"ok\n"))
        elif url.path == "/v1/crl.der":
            self._send(Response(200, CT_CRL, a.serve_crl()))
        elif url.path == "/v1/revocations.zone":
            self._send(Response(200, CT_ZONE, a.serve_zone().encode("ascii")))
        elif url.path == "/v1/nonce":
            key = parse_qs(url.query).get("key", [""])[0]
            if len(key) != 64 or any(c not in "0123456789abcdefABCDEF" for c in key):
                self._send(_error(400, "MalformedRequest", "key must be a SHA-256 hex digest"))
                return
            ch = a.issue_nonce(key)
            payload = {
                "nonce": ch.nonce.hex(),
                "issued_at": int(ch.issued_at.timestamp()),
                "expires_in": int(a.config.nonce_lifetime.total_seconds()),
            }
            self._send(Response(200, CT_JSON, json.dumps(payload).encode("utf-8")))
        else:
            self._send(_error(404, "NotFound", url.path))

    def do_POST(self):
        url = urlsplit(self.path)
        body = self._body()
        if url.path == "/v1/delegations":
            self._send(self.authority.handle_issue(body))
        elif url.path == "/v1/renewals":
            self._send(self.authority.handle_renew(body))
        else:
            self._send(_error(404, "NotFound", url.path))

    def log_message(self, format, *args):
        log.info("authority: " + format, *args)


class AuthorityServer:
    def __init__(self, authority: Authority, address: Optional[Tuple[str, int]] = None):
        self.authority = authority
        self._httpd = http.server.ThreadingHTTPServer(
            address or authority.config.listen, _Handler
        )
        self._httpd.daemon_threads = True
        self._httpd.authority = authority
        self._thread: Optional[threading.Thread] = None

    @property
    def url(self) -> str:
        host, port = self._httpd.server_address[:2]
        return f"http://{host}:{port}"

    def start(self) -> "AuthorityServer":
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True
        )
        self._thread.start()
        return self

    def serve_forever(self) -> None:
        self._httpd.serve_forever()

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)

    def __enter__(self) -> "AuthorityServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
