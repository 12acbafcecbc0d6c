"""Loopback TLS server and a probing client that validates with our engine.

The client hands every peer chain to :func:`decert.validation.validate` from
inside the OpenSSL verify callback.  A rejection fails that callback, so
the handshake is aborted with a certificate alert before any application
data flows.  Hostnames never touch system DNS: the probe dials the given
address and sends the hostname only as SNI and Host header.
"""

from __future__ import annotations

import datetime
import http.server
import logging
import socket
import ssl
import struct
import tempfile
import threading
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple

from OpenSSL import SSL

from . import keys
from .certs import MalformedCertificate, ParsedCertificate, load_certificates, parse_certificate
from .clock import system_clock
from .codes import Violation, ViolationCode
from .fixtures import ANCHORS, MANIFEST, corpus_instant
from .names import parse_name
from .revocation import CRLDocument, ZoneResolver, parse_zone
from .validation import CRLPolicy, DNSPolicy, Mode, ValidationReport, validate

log = logging.getLogger(__name__)

PAGE = b"<!doctype html><title>decert</title><p>delegated content</p>\n"

Address = Tuple[str, int]


class BindFailure(OSError):
    pass


class KeyMismatch(ValueError):
    pass


class NetworkError(OSError):
    pass


class CorpusMismatch(AssertionError):
    def __init__(self, cells):
        self.cells = cells
        lines = [
            f"{fx}\t{host}\t{mode}: expected {exp}, got {got}"
            for (fx, host, mode), (exp, got) in sorted(cells.items())
        ]
        super().__init__("corpus mismatch:\n" + "\n".join(lines))


@dataclass
class HandshakeOutcome:
    connected: bool
    alert_or_error: Optional[str] = None
    report: Optional[ValidationReport] = None
    page_body: Optional[bytes] = None
    peer_chain: List[ParsedCertificate] = field(default_factory=list, repr=False)


class _PageHandler(http.server.BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.0"

    def do_GET(self):
        self.send_response(200)
        self.send_header("Content-Type", "text/html")
        self.send_header("Content-Length", str(len(PAGE)))
        self.end_headers()
        self.wfile.write(PAGE)

    def log_message(self, format, *args):
        log.debug("tls-server: " + format, *args)


class _TLSHTTPServer(http.server.ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, address, context: ssl.SSLContext):
        self.context = context
        super().__init__(address, _PageHandler)

    def finish_request(self, request, client_address):
        # handshake per connection thread, so a stalled client cannot block accept()
        try:
            request.settimeout(10)
            tls = self.context.wrap_socket(request, server_side=True)
        except (ssl.SSLError, OSError) as exc:
            log.debug("handshake with %s failed: %s", client_address, exc)
            return
        try:
            self.RequestHandlerClass(tls, client_address, self)
        finally:
            try:
                tls.close()
            except OSError:
                pass

    def handle_error(self, request, client_address):
        log.debug("error serving %s", client_address, exc_info=True)


class TLSServer:
    """Serves a fixed page over TLS 1.3 presenting the full chain, leaf first."""

    def __init__(self, chain_pem: bytes, key_pem: bytes, address: Address = ("127.0.0.1", 0)):
        chain = load_certificates(chain_pem, decert_context=False)
        if not chain:
            raise ValueError("empty certificate chain")
        key = keys.load_private_key(key_pem)
        if not keys.keys_match(key, chain[0].public_key()):
            raise KeyMismatch("private key does not match the leaf certificate")

        self._tmp = tempfile.TemporaryDirectory(prefix="decert-tls-")
        chain_path = Path(self._tmp.name) / "chain.pem"
        key_path = Path(self._tmp.name) / "key.pem"
        chain_path.write_bytes(chain_pem)
        key_path.write_bytes(key_pem)
        ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
        ctx.minimum_version = ssl.TLSVersion.TLSv1_3
        ctx.load_cert_chain(str(chain_path), str(key_path))

        try:
            self._httpd = _TLSHTTPServer(address, ctx)
        except OSError as exc:
            self._tmp.cleanup()
            raise BindFailure(f"cannot bind {address}: {exc}") from exc
        self._thread: Optional[threading.Thread] = None

    @property
    def address(self) -> Address:
        host, port = self._httpd.server_address[:2]
        return host, port

    def start(self) -> "TLSServer":
        self._thread = threading.Thread(
            target=self._httpd.serve_forever, kwargs={"poll_interval": 0.05}, daemon=True
        )
        self._thread.start()
        return self

    def close(self) -> None:
        self._httpd.shutdown()
        self._httpd.server_close()
        if self._thread is not None:
            self._thread.join(timeout=5)
        self._tmp.cleanup()

    def __enter__(self) -> "TLSServer":
        return self

    def __exit__(self, *exc) -> None:
        self.close()


def run_server(chain_pem: bytes, key_pem: bytes, address: Address = ("127.0.0.1", 0)) -> TLSServer:
    return TLSServer(chain_pem, key_pem, address).start()


def _set_timeouts(sock: socket.socket, seconds: float) -> None:
    # keep the socket blocking for OpenSSL but bound every read and write
    tv = struct.pack("ll", int(seconds), int((seconds % 1) * 1e6))
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_RCVTIMEO, tv)
    sock.setsockopt(socket.SOL_SOCKET, socket.SO_SNDTIMEO, tv)


def probe(
    hostname: str,
    address: Address,
    trust_anchors: Sequence[ParsedCertificate],
    mode: Mode = Mode.AWARE,
    revocation=None,
    at: Optional[datetime.datetime] = None,
    timeout: float = 5.0,
) -> HandshakeOutcome:
    """Connect to ``address`` as ``hostname`` and report what happened."""
    at = at or system_clock()
    host = parse_name(hostname)
    state: Dict[str, object] = {}

    def verify(conn, _x509, _errno, _depth, _ok):
        if "report" not in state:
            try:
                peer = conn.get_peer_cert_chain(as_cryptography=True) or []
                chain = [parse_certificate(c, decert_context=False) for c in peer]
                state["chain"] = chain
                state["report"] = validate(chain, trust_anchors, host, at, mode, revocation)
            except MalformedCertificate as exc:
                state["report"] = ValidationReport(
                    (Violation(0, ViolationCode.CHAIN_MALFORMED, str(exc)),)
                )
            except Exception as exc:  # noqa: BLE001 - never let OpenSSL see a raise
                state["error"] = exc
                return False
        return state["report"].accepted

    ctx = SSL.Context(SSL.TLS_CLIENT_METHOD)
    ctx.set_min_proto_version(SSL.TLS1_3_VERSION)
    ctx.set_verify(SSL.VERIFY_PEER, verify)

    try:
        sock = socket.create_connection(address, timeout=timeout)
    except OSError as exc:
        raise NetworkError(f"cannot connect to {address}: {exc}") from exc
    sock.settimeout(None)
    _set_timeouts(sock, timeout)

    conn = SSL.Connection(ctx, sock)
    conn.set_tlsext_host_name(str(host).encode("ascii"))
    conn.set_connect_state()
    try:
        try:
            conn.do_handshake()
        except SSL.Error as exc:
            report = state.get("report")
            if isinstance(report, ValidationReport) and not report.accepted:
                return HandshakeOutcome(
                    False, f"certificate rejected: {exc}", report, None, state.get("chain", [])
                )
            if "error" in state:
                raise NetworkError(f"validation crashed: {state['error']!r}") from exc
            raise NetworkError(f"TLS handshake failed: {exc}") from exc

        request = f"GET / HTTP/1.0\r\nHost: {host}\r\n\r\n".encode("ascii")
        try:
            conn.sendall(request)
            body = _read_all(conn)
        except SSL.Error as exc:
            raise NetworkError(f"connection failed after handshake: {exc}") from exc
        _, _, page = body.partition(b"\r\n\r\n")
        return HandshakeOutcome(True, None, state.get("report"), page, state.get("chain", []))
    finally:
        try:
            conn.close()
        except Exception:  # noqa: BLE001
            pass
        sock.close()


def _read_all(conn) -> bytes:
    chunks = []
    while True:
        try:
            data = conn.recv(65536)
        except SSL.ZeroReturnError:
            break
        except SSL.SysCallError as exc:
            if exc.args and exc.args[0] in (-1, 0):  # unexpected EOF after body
                break
            raise
        if not data:
            break
        chunks.append(data)
    return b"".join(chunks)


# -- corpus runner -------------------------------------------------------------


@dataclass(frozen=True)
class ManifestRow:
    fixture: str
    hostname: str
    mode: str
    verdict: str
    codes: frozenset

    @classmethod
    def parse(cls, line: str) -> "ManifestRow":
        parts = line.rstrip("\n").split("\t")
        if len(parts) == 4:
            parts.append("")
        fixture, host, mode, verdict, codes = parts
        return cls(fixture, host, mode, verdict, frozenset(c for c in codes.split(",") if c))

    @property
    def key(self):
        return (self.fixture, self.hostname, self.mode)


def read_manifest(corpus_dir) -> List[ManifestRow]:
    path = Path(corpus_dir) / MANIFEST
    if not path.exists():
        return []
    return [
        ManifestRow.parse(line)
        for line in path.read_text().splitlines()
        if line.strip() and not line.startswith("#")
    ]


def revocation_for(mode: str, fixture_dir: Path):
    """``DeCertAware+crl`` / ``DeCertAware+dns`` read the fixture's files."""
    base, _, rev = mode.partition("+")
    policy = None
    if rev == "crl":
        policy = CRLPolicy([CRLDocument.from_der((fixture_dir / "crl.der").read_bytes())])
    elif rev == "dns":
        policy = DNSPolicy(ZoneResolver(parse_zone((fixture_dir / "zone.txt").read_text())))
    elif rev:
        raise ValueError(f"unknown revocation suffix in mode {mode!r}")
    return Mode.parse(base), policy


def _cell(outcome: HandshakeOutcome) -> Tuple[str, frozenset]:
    report = outcome.report
    verdict = "Accept" if outcome.connected else "Reject"
    codes = frozenset(c.value for c in report.codes()) if report else frozenset()
    return verdict, codes


def run_corpus(
    corpus_dir,
    address_pool: Iterable[Address] = (("127.0.0.1", 0),),
    at: Optional[datetime.datetime] = None,
):
    """Serve every fixture, probe every manifest cell, compare with the manifest.

    Returns ``{(fixture, hostname, mode): HandshakeOutcome}``; raises
    :class:`CorpusMismatch` naming every cell that deviates.
    """
    corpus = Path(corpus_dir)
    rows = read_manifest(corpus)
    if not rows:
        return {}
    at = at or corpus_instant(corpus)
    anchors = load_certificates((corpus / ANCHORS).read_bytes(), decert_context=False)
    pool = list(address_pool)
    results = {}
    mismatches = {}
    fixtures = sorted({r.fixture for r in rows})
    for n, name in enumerate(fixtures):
        fdir = corpus / name
        addr = pool[n % len(pool)]
        with run_server((fdir / "chain.pem").read_bytes(), (fdir / "key.pem").read_bytes(), addr) as srv:
            for row in (r for r in rows if r.fixture == name):
                mode, policy = revocation_for(row.mode, fdir)
                outcome = probe(row.hostname, srv.address, anchors, mode, policy, at)
                results[row.key] = outcome
                got = _cell(outcome)
                if got != (row.verdict, row.codes):
                    mismatches[row.key] = (
                        (row.verdict, ",".join(sorted(row.codes))),
                        (got[0], ",".join(sorted(got[1]))),
                    )
    if mismatches:
        raise CorpusMismatch(mismatches)
    return results
