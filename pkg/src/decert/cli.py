"""``decert`` command line.

Every subcommand parses its flags, loads files and hands off to the library;
no decisions are made here.  Exit status: 0 success/Accept, 1 Reject or
policy refusal, 2 usage error, 3 I/O or network error.
"""

from __future__ import annotations

import argparse
import datetime
import json
import logging
import os
import sys
from pathlib import Path
from typing import List, Optional, Sequence

from . import keys
from .authority import Authority, AuthorityConfig, AuthorityServer
from .certs import (
    KeyUsageSet,
    MalformedCertificate,
    PolicyViolation,
    chain_pem,
    load_certificates,
)
from .clock import FixedClock, parse_duration, parse_instant, system_clock
from .extension import MalformedExtension
from .fixtures import DEFAULT_SEED, FIXTURE_EPOCH, write_corpus
from .harness import BindFailure, KeyMismatch, NetworkError, TLSServer, probe
from .issuance import (
    DelegationRequest,
    IssuerPolicy,
    MalformedRequest,
    RevokedSubject,
    UnknownSubject,
    check_against_issuer,
    create_request,
    issue_decert,
    renew_decert,
)
from .names import DomainScope, MalformedName, parse_name, parse_pattern
from .revocation import (
    AlreadyRevoked,
    CRLDocument,
    RevocationStore,
    ZoneResolver,
    build_crl,
    export_zone,
    parse_zone,
    revoke,
)
from .validation import CRLPolicy, DNSPolicy, Mode, validate

EXIT_OK = 0
EXIT_REJECT = 1
EXIT_USAGE = 2
EXIT_IO = 3

STORE_ENV = "DECERT_STORE_DIR"
REVOCATIONS_FILE = "revocations.tsv"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # one-line reason instead of argparse's usage dump
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# -- helpers -------------------------------------------------------------------


def _read(path: str) -> bytes:
    if path == "-":
        return sys.stdin.buffer.read()
    return Path(path).read_bytes()


def _emit(data: bytes, out: Optional[str]) -> None:
    if out is None or out == "-":
        sys.stdout.buffer.write(data)
        sys.stdout.flush()
    else:
        Path(out).parent.mkdir(parents=True, exist_ok=True)
        Path(out).write_bytes(data)


def _certs(path: str):
    certs = load_certificates(_read(path), decert_context=False)
    if not certs:
        raise MalformedCertificate(f"{path}: no certificates")
    return certs


def _clock(at: Optional[str]):
    if at is None or at == "now":
        return system_clock
    return FixedClock(_instant(at))


def _instant(text: str) -> datetime.datetime:
    try:
        return parse_instant(text)
    except ValueError as exc:
        raise UsageError(f"bad instant {text!r}: {exc}") from exc


def _duration(text: str) -> datetime.timedelta:
    try:
        return parse_duration(text)
    except ValueError as exc:
        raise UsageError(f"bad duration {text!r}") from exc


def _address(text: str):
    host, sep, port = text.rpartition(":")
    if not sep or not port.isdigit():
        raise UsageError(f"address must be HOST:PORT, got {text!r}")
    return host or "127.0.0.1", int(port)


def _store_dir(value: Optional[str]) -> Path:
    value = value or os.environ.get(STORE_ENV)
    if not value:
        raise UsageError(f"no store directory: pass --store or set {STORE_ENV}")
    path = Path(value)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _store(value: Optional[str]) -> RevocationStore:
    return RevocationStore(_store_dir(value) / REVOCATIONS_FILE)


def _serial(text: str) -> int:
    try:
        return int(text.removeprefix("0x"), 16)
    except ValueError as exc:
        raise UsageError(f"serial must be hex, got {text!r}") from exc


def _revocation_policy(spec: str):
    if spec in ("none", ""):
        return None
    kind, sep, path = spec.partition(":")
    if not sep or not path:
        raise UsageError(f"--revocation must be none, crl:PATH or dns:ZONEPATH, got {spec!r}")
    if kind == "crl":
        return CRLPolicy([CRLDocument.from_der(_read(path))])
    if kind == "dns":
        return DNSPolicy(ZoneResolver(parse_zone(_read(path).decode("ascii"))))
    raise UsageError(f"unknown revocation source {kind!r}")


def _mode(text: str) -> Mode:
    try:
        return Mode.parse(text)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _key_usage(text: Optional[str]) -> Optional[KeyUsageSet]:
    if text is None:
        return None
    try:
        return KeyUsageSet.parse(text)
    except ValueError as exc:
        raise UsageError(f"bad key usage {text!r}: {exc}") from exc


def _print_violations(violations) -> None:
    for v in violations:
        print(str(v))


# -- subcommands ---------------------------------------------------------------


def cmd_keygen(args) -> int:
    try:
        key = keys.generate_key(args.alg)
    except keys.UnsupportedAlgorithm as exc:
        raise UsageError(str(exc)) from exc
    _emit(keys.private_key_pem(key), args.out)
    if args.out not in (None, "-"):
        _emit(keys.public_key_pem(key.public_key()), args.out + ".pub")
    return EXIT_OK


def cmd_csr(args) -> int:
    key = keys.load_private_key(_read(args.key))
    scope = DomainScope(
        frozenset(parse_pattern(p) for p in args.include),
        frozenset(parse_name(e) for e in args.exclude),
    )
    req = create_request(args.subject, key, scope, _key_usage(args.key_usage), args.path_len)
    _emit(req.pem() if args.pem else req.der, args.out)
    return EXIT_OK


def _load_request(data: bytes) -> DelegationRequest:
    if data.lstrip().startswith(b"-----"):
        return DelegationRequest.from_pem(data)
    return DelegationRequest.from_der(data)


def _policy(args) -> IssuerPolicy:
    kwargs = {}
    if args.min_validity is not None:
        kwargs["min_validity"] = _duration(args.min_validity)
    if args.max_path_len is not None:
        kwargs["max_path_len"] = args.max_path_len
    try:
        return IssuerPolicy(**kwargs)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_issue(args) -> int:
    req = _load_request(_read(args.csr))
    issuer_chain = _certs(args.issuer_cert)
    issuer_key = keys.load_private_key(_read(args.issuer_key))
    policy = _policy(args)
    violations = check_against_issuer(req, issuer_chain[0], policy)
    if violations:
        _print_violations(violations)
        return EXIT_REJECT
    validity = _duration(args.validity) if args.validity else None
    try:
        cert = issue_decert(
            req,
            issuer_chain[0],
            issuer_key,
            _clock(args.at),
            validity=validity,
            policy=policy,
            crl_url=args.crl_url,
            revocation_dns_suffix=args.revocation_domain,
        )
    except PolicyViolation as exc:
        print(f"0\tPolicyViolation\t{exc}")
        return EXIT_REJECT
    _emit(chain_pem([cert, *issuer_chain]), args.out)
    return EXIT_OK


def cmd_renew(args) -> int:
    existing = _certs(args.cert)[0]
    issuer_chain = _certs(args.issuer_cert)
    issuer_key = keys.load_private_key(_read(args.issuer_key))
    revoked: Sequence[int] = ()
    if args.store or os.environ.get(STORE_ENV):
        revoked = _store(args.store)
    new_public = None
    if args.rotate_key:
        if args.new_key:
            new_public = keys.load_private_key(_read(args.new_key)).public_key()
        else:
            new_key = keys.generate_key(keys.key_algorithm(existing.public_key()))
            new_public = new_key.public_key()
            if not args.key_out:
                raise UsageError("--rotate-key without --new-key needs --key-out")
            _emit(keys.private_key_pem(new_key), args.key_out)
    validity = _duration(args.validity) if args.validity else None
    try:
        cert = renew_decert(
            existing,
            issuer_chain[0],
            issuer_key,
            _clock(args.at),
            reuse_key=not args.rotate_key,
            new_public_key=new_public,
            validity=validity,
            revoked=revoked,
        )
    except (RevokedSubject, UnknownSubject) as exc:
        print(f"0\t{type(exc).__name__}\t{exc}")
        return EXIT_REJECT
    _emit(chain_pem([cert, *issuer_chain]), args.out)
    return EXIT_OK


def cmd_revoke(args) -> int:
    store = _store(args.store)
    try:
        rec = revoke(store, _serial(args.serial), args.reason, _clock(args.at))
    except AlreadyRevoked:
        print(f"serial {args.serial} already revoked", file=sys.stderr)
        return EXIT_REJECT
    print(rec.to_line())
    return EXIT_OK


def cmd_crl(args) -> int:
    store = _store(args.store)
    issuer = _certs(args.issuer_cert)[0]
    key = keys.load_private_key(_read(args.issuer_key))
    crl = build_crl(store, issuer, key, _clock(args.at), _duration(args.lifetime))
    _emit(crl.der, args.out)
    return EXIT_OK


def cmd_zone(args) -> int:
    store = _store(args.store)
    try:
        domain = str(parse_name(args.domain))
    except MalformedName as exc:
        raise UsageError(str(exc)) from exc
    _emit(export_zone(store, domain).to_text().encode("ascii"), args.out)
    return EXIT_OK


def cmd_validate(args) -> int:
    chain = _certs(args.chain)
    anchors = _certs(args.anchors)
    try:
        hostname = parse_name(args.hostname)
    except MalformedName as exc:
        raise UsageError(str(exc)) from exc
    report = validate(
        chain,
        anchors,
        hostname,
        _instant(args.at),
        _mode(args.mode),
        _revocation_policy(args.revocation),
        args.max_depth,
    )
    sys.stdout.write(report.to_json() + "\n" if args.json else report.to_text())
    return EXIT_OK if report.accepted else EXIT_REJECT


def cmd_fixtures(args) -> int:
    at = _instant(args.at) if args.at else FIXTURE_EPOCH
    out = write_corpus(args.out, args.seed, at)
    print(out)
    return EXIT_OK


def cmd_serve(args) -> int:
    server = TLSServer(_read(args.chain), _read(args.key), _address(args.listen)).start()
    host, port = server.address
    print(f"serving on {host}:{port}", flush=True)
    try:
        server._thread.join()
    except KeyboardInterrupt:
        pass
    finally:
        server.close()
    return EXIT_OK


def cmd_probe(args) -> int:
    anchors = _certs(args.anchors)
    outcome = probe(
        args.hostname,
        _address(args.address),
        anchors,
        _mode(args.mode),
        _revocation_policy(args.revocation),
        _instant(args.at) if args.at else None,
        args.timeout,
    )
    if outcome.report is not None:
        sys.stdout.write(outcome.report.to_text())
    print(f"connected\t{'true' if outcome.connected else 'false'}")
    if outcome.alert_or_error:
        print(f"alert\t{outcome.alert_or_error}")
    return EXIT_OK if outcome.connected else EXIT_REJECT


def cmd_authority(args) -> int:
    config = AuthorityConfig.from_json(args.config)
    if args.listen:
        config.listen = _address(args.listen)
    server = AuthorityServer(Authority(config))
    print(f"authority on {server.url}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    return EXIT_OK


# -- parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="decert", description="Delegation certificate toolkit")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("keygen", help="generate a key pair")
    s.add_argument("--alg", choices=keys.ALGORITHMS, default="ecdsa-p256")
    s.add_argument("--out", help="private key path; the public key goes to OUT.pub")
    s.set_defaults(func=cmd_keygen)

    s = sub.add_parser("csr", help="build a delegation request")
    s.add_argument("--subject", required=True)
    s.add_argument("--include", action="append", required=True, help="SAN pattern, repeatable")
    s.add_argument("--exclude", action="append", default=[], help="excluded subtree, repeatable")
    s.add_argument("--key-usage", help="comma-separated KeyUsage bit numbers, e.g. 0")
    s.add_argument("--path-len", type=int, default=0)
    s.add_argument("--key", required=True)
    s.add_argument("--pem", action="store_true", help="write PEM instead of DER")
    s.add_argument("--out")
    s.set_defaults(func=cmd_csr)

    def issuer_flags(s):
        s.add_argument("--issuer-cert", required=True, help="issuer certificate followed by its chain")
        s.add_argument("--issuer-key", required=True)
        s.add_argument("--validity", help="e.g. 6h, 1m, 30d")
        s.add_argument("--at", help="issuance instant (RFC 3339 or now)")
        s.add_argument("--out")

    s = sub.add_parser("issue", help="issue a DeCert from a request")
    s.add_argument("--csr", required=True)
    issuer_flags(s)
    s.add_argument("--min-validity", help="override the policy's minimum validity")
    s.add_argument("--max-path-len", type=int)
    s.add_argument("--crl-url")
    s.add_argument("--revocation-domain")
    s.set_defaults(func=cmd_issue)

    s = sub.add_parser("renew", help="re-issue an existing DeCert")
    s.add_argument("--cert", required=True)
    issuer_flags(s)
    s.add_argument("--rotate-key", action="store_true")
    s.add_argument("--new-key", help="private key to rotate to")
    s.add_argument("--key-out", help="where to write a freshly generated rotated key")
    s.add_argument("--store")
    s.set_defaults(func=cmd_renew)

    s = sub.add_parser("revoke", help="record a revoked serial")
    s.add_argument("--serial", required=True, help="hex serial")
    s.add_argument("--reason", default="unspecified")
    s.add_argument("--store")
    s.add_argument("--at")
    s.set_defaults(func=cmd_revoke)

    s = sub.add_parser("crl", help="publish a signed CRL")
    s.add_argument("--store")
    s.add_argument("--issuer-cert", required=True)
    s.add_argument("--issuer-key", required=True)
    s.add_argument("--lifetime", default="1h")
    s.add_argument("--at")
    s.add_argument("--out")
    s.set_defaults(func=cmd_crl)

    s = sub.add_parser("zone", help="publish revocation TXT records")
    s.add_argument("--store")
    s.add_argument("--domain", required=True)
    s.add_argument("--out")
    s.set_defaults(func=cmd_zone)

    s = sub.add_parser("validate", help="validate a presented chain")
    s.add_argument("--chain", required=True)
    s.add_argument("--anchors", required=True)
    s.add_argument("--hostname", required=True)
    s.add_argument("--at", default="now")
    s.add_argument("--mode", default="DeCertAware")
    s.add_argument("--revocation", default="none")
    s.add_argument("--max-depth", type=int, default=4)
    s.add_argument("--json", action="store_true")
    s.set_defaults(func=cmd_validate)

    s = sub.add_parser("fixtures", help="write the deterministic fixture corpus")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=DEFAULT_SEED)
    s.add_argument("--at", help="corpus reference instant (default 2025-01-01T00:00:00Z)")
    s.set_defaults(func=cmd_fixtures)

    s = sub.add_parser("serve", help="serve a chain over loopback TLS")
    s.add_argument("--chain", required=True)
    s.add_argument("--key", required=True)
    s.add_argument("--listen", default="127.0.0.1:8443")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("probe", help="TLS handshake validated by this library")
    s.add_argument("--hostname", required=True)
    s.add_argument("--address", required=True, help="HOST:PORT to dial")
    s.add_argument("--anchors", required=True)
    s.add_argument("--mode", default="DeCertAware")
    s.add_argument("--revocation", default="none")
    s.add_argument("--at")
    s.add_argument("--timeout", type=float, default=5.0)
    s.set_defaults(func=cmd_probe)

    s = sub.add_parser("authority", help="run the delegation authority service")
    s.add_argument("--config", required=True)
    s.add_argument("--listen", help="override the configured HOST:PORT")
    s.set_defaults(func=cmd_authority)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"decert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (MalformedName, keys.UnsupportedAlgorithm) as exc:
        print(f"decert {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (
        OSError,
        NetworkError,
        BindFailure,
        KeyMismatch,
        MalformedCertificate,
        MalformedRequest,
        MalformedExtension,
        ValueError,
        json.JSONDecodeError,
    ) as exc:
        print(f"decert {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
