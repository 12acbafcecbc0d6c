import base64
import datetime
import json
import threading
import urllib.error
import urllib.request

import pytest

from conftest import AT
from decert import keys
from decert.authority import (
    CT_CRL,
    CT_JSON,
    CT_PEM_CHAIN,
    CT_ZONE,
    Authority,
    AuthorityConfig,
    AuthorityServer,
    renewal_body,
    renewal_message,
)
from decert.certs import chain_pem, load_certificates
from decert.clock import FixedClock
from decert.fixtures import TLS_USAGE
from decert.issuance import create_request
from decert.names import DomainScope
from decert.revocation import CRLDocument, parse_zone, serial_hex
from decert.validation import validate


def make_config(tmp_path, issuer, chain_rest, **over):
    (tmp_path / "issuer.pem").write_bytes(chain_pem([issuer.cert, *chain_rest]))
    (tmp_path / "issuer.key").write_bytes(keys.private_key_pem(issuer.key))
    return AuthorityConfig(str(tmp_path / "issuer.pem"), str(tmp_path / "issuer.key"), str(tmp_path / "store"), **over)


@pytest.fixture
def owner_authority(pki, tmp_path):
    f, root, ca, owner = pki
    clock = FixedClock(AT)
    auth = Authority(make_config(tmp_path, owner, [ca.cert]), clock)
    return auth, clock, root


def fig1_csr(key=None):
    key = key or keys.generate_key()
    return create_request("cdn.com", key, DomainScope.of(["*.content.abc.com"]), TLS_USAGE), key


def issue(auth):
    req, key = fig1_csr()
    resp = auth.handle_issue(req.der)
    assert resp.status == 201, resp.body
    return load_certificates(resp.body), key


def nonce_for(auth, cert):
    return auth.issue_nonce(keys.spki_hash(cert.public_key_bytes)).nonce


class TestIssue:
    def test_fig1(self, owner_authority):
        auth, _, root = owner_authority
        req, _ = fig1_csr()
        resp = auth.handle_issue(req.der)
        assert resp.status == 201 and resp.content_type == CT_PEM_CHAIN
        chain = load_certificates(resp.body)
        assert [c.subject_cn for c in chain[:2]] == ["cdn.com", "abc.com"]
        assert validate(chain, [root.cert], "x.content.abc.com", AT).accepted
        assert auth.issued.get(chain[0].serial) == chain[0]

    def test_fig2a_shaped(self, pki, tmp_path):
        f, root, ca, owner = pki
        cdn1 = f.decert(owner, "cdn1.com", ["*.pics.abc.com"], ["a.pics.abc.com"], path_len=0)
        auth = Authority(make_config(tmp_path, cdn1, [owner.cert, ca.cert]), FixedClock(AT))
        req = create_request("cdn2.com", keys.generate_key(), DomainScope.of(["*.vids.abc.com"]), TLS_USAGE)
        resp = auth.handle_issue(req.der)
        assert resp.status == 422 and resp.content_type == CT_JSON
        body = json.loads(resp.body)
        assert {v["code"] for v in body["violations"]} == {"PathLenExceeded", "IncludeNotSubset"}
        assert len(auth.issued) == 0

    def test_garbage(self, owner_authority):
        auth, _, _ = owner_authority
        resp = auth.handle_issue(b"garbage")
        assert resp.status == 400 and json.loads(resp.body)["error"] == "MalformedRequest"

    def test_key_must_match(self, pki, tmp_path):
        _, _, ca, owner = pki
        cfg = make_config(tmp_path, owner, [ca.cert])
        (tmp_path / "issuer.key").write_bytes(keys.private_key_pem(keys.generate_key()))
        with pytest.raises(ValueError):
            Authority(cfg)

    def test_concurrent_issuance(self, owner_authority):
        auth, _, _ = owner_authority
        reqs = [fig1_csr()[0] for _ in range(12)]
        results = []
        threads = [threading.Thread(target=lambda r=r: results.append(auth.handle_issue(r.der))) for r in reqs]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert all(r.status == 201 for r in results)
        assert len({load_certificates(r.body)[0].serial for r in results}) == 12
        assert len(auth.issued) == 12


class TestRenew:
    def test_valid(self, owner_authority):
        auth, clock, root = owner_authority
        (cert, *_), key = issue(auth)
        clock.advance(datetime.timedelta(hours=5))
        resp = auth.handle_renew(renewal_body(cert, key, nonce_for(auth, cert)))
        assert resp.status == 201 and resp.content_type == CT_PEM_CHAIN
        renewed = load_certificates(resp.body)
        assert renewed[0].serial != cert.serial
        assert renewed[0].public_key_bytes == cert.public_key_bytes
        assert validate(renewed, [root.cert], "x.content.abc.com", clock()).accepted

    def test_replay(self, owner_authority):
        auth, _, _ = owner_authority
        (cert, *_), key = issue(auth)
        body = renewal_body(cert, key, nonce_for(auth, cert))
        assert auth.handle_renew(body).status == 201
        resp = auth.handle_renew(body)
        assert resp.status == 409 and json.loads(resp.body)["error"] == "StaleNonce"

    def test_expired_nonce(self, owner_authority):
        auth, clock, _ = owner_authority
        (cert, *_), key = issue(auth)
        nonce = nonce_for(auth, cert)
        clock.advance(datetime.timedelta(seconds=121))
        assert json.loads(auth.handle_renew(renewal_body(cert, key, nonce)).body)["error"] == "StaleNonce"

    def test_nonce_bound_to_key(self, owner_authority):
        auth, _, _ = owner_authority
        (cert, *_), key = issue(auth)
        nonce = auth.issue_nonce("00" * 32).nonce
        assert json.loads(auth.handle_renew(renewal_body(cert, key, nonce)).body)["error"] == "StaleNonce"

    def test_after_revoke(self, owner_authority):
        auth, _, _ = owner_authority
        (cert, *_), key = issue(auth)
        auth.revoke(cert.serial)
        resp = auth.handle_renew(renewal_body(cert, key, nonce_for(auth, cert)))
        assert resp.status == 410 and json.loads(resp.body)["error"] == "RevokedSubject"

    def test_bad_signature(self, owner_authority):
        auth, _, _ = owner_authority
        (cert, *_), _ = issue(auth)
        resp = auth.handle_renew(renewal_body(cert, keys.generate_key(), nonce_for(auth, cert)))
        assert resp.status == 403 and json.loads(resp.body)["error"] == "BadSignature"

    def test_unknown_serial(self, owner_authority, corpus):
        auth, _, _ = owner_authority
        foreign = corpus["fixtures"]["fig1"]
        resp = auth.handle_renew(renewal_body(foreign.chain[0], foreign.key, b"\x00" * 32))
        assert resp.status == 404 and json.loads(resp.body)["error"] == "UnknownSerial"

    def test_malformed_body(self, owner_authority):
        auth, _, _ = owner_authority
        assert auth.handle_renew(b"{").status == 400
        assert auth.handle_renew(json.dumps({"serial": "zz"}).encode()).status == 400

    def test_rate_limit(self, pki, tmp_path):
        _, _, ca, owner = pki
        clock = FixedClock(AT)
        auth = Authority(make_config(tmp_path, owner, [ca.cert], renewals_per_hour=2), clock)
        (cert, *_), key = issue(auth)
        statuses = []
        for _ in range(3):
            resp = auth.handle_renew(renewal_body(cert, key, nonce_for(auth, cert)))
            statuses.append(resp.status)
            if resp.status == 201:
                cert = load_certificates(resp.body)[0]
        assert statuses == [201, 201, 429]
        clock.advance(datetime.timedelta(minutes=30))
        assert auth.handle_renew(renewal_body(cert, key, nonce_for(auth, cert))).status == 201

    def test_message_format(self):
        assert renewal_message(0x0A1B, b"\x01\x02") == b"decert-renew:0a1b:0102"


class TestPublication:
    def test_crl_flip(self, owner_authority):
        auth, _, _ = owner_authority
        (cert, *_), _ = issue(auth)
        empty = CRLDocument.from_der(auth.serve_crl())
        assert empty.entries == ()
        assert auth.serve_crl() == empty.der  # cached while nothing changes
        auth.revoke(cert.serial)
        after = CRLDocument.from_der(auth.serve_crl())
        assert after.serials == {cert.serial}
        assert after.verify(auth.issuer_cert)

    def test_zone(self, owner_authority):
        auth, _, _ = owner_authority
        assert auth.serve_zone() == ""
        auth.revoke(0x0A1B)
        assert parse_zone(auth.serve_zone()) == {"0a1b._decert-revoked.abc.com": f"revoked=1;t={int(AT.timestamp())}"}

    def test_distinct_nonces(self, owner_authority):
        auth, _, _ = owner_authority
        a, b = auth.issue_nonce("ab" * 32), auth.issue_nonce("ab" * 32)
        assert a.nonce != b.nonce and len(a.nonce) == 32


def test_restart_preserves_store(pki, tmp_path):
    _, _, ca, owner = pki
    cfg = make_config(tmp_path, owner, [ca.cert])
    auth = Authority(cfg, FixedClock(AT))
    (cert, *_), key = issue(auth)
    auth.revoke(cert.serial, "keyCompromise")
    again = Authority(cfg, FixedClock(AT))
    assert again.issued.get(cert.serial) == cert
    assert cert.serial in again.revocations
    assert again.revocations.get(cert.serial).reason == "keyCompromise"


def test_config_from_json(pki, tmp_path):
    _, _, ca, owner = pki
    make_config(tmp_path, owner, [ca.cert])
    (tmp_path / "authority.json").write_text(json.dumps({
        "listen": "127.0.0.1:0",
        "issuer_cert": "issuer.pem",
        "issuer_key": "issuer.key",
        "store_dir": "store",
        "nonce_lifetime": "60s",
        "policy": {"max_path_len": 2, "default_validity": "1h", "allowed_key_algorithms": ["ed25519"]},
    }))
    cfg = AuthorityConfig.from_json(tmp_path / "authority.json")
    assert cfg.issuer_cert_path == str(tmp_path / "issuer.pem")
    assert cfg.nonce_lifetime == datetime.timedelta(seconds=60)
    assert cfg.policy.max_path_len == 2
    assert cfg.policy.default_validity == datetime.timedelta(hours=1)
    assert cfg.policy.allowed_key_algorithms == {"ed25519"}
    assert cfg.listen == ("127.0.0.1", 0)


def _http(url, data=None, content_type=None):
    req = urllib.request.Request(url, data=data, method="POST" if data is not None else "GET")
    if content_type:
        req.add_header("Content-Type", content_type)
    try:
        with urllib.request.urlopen(req, timeout=5) as resp:
            return resp.status, resp.headers["Content-Type"], resp.read()
    except urllib.error.HTTPError as err:
        return err.code, err.headers["Content-Type"], err.read()


def test_http_endpoints(owner_authority):
    auth, _, root = owner_authority
    with AuthorityServer(auth, ("127.0.0.1", 0)).start() as srv:
        assert _http(srv.url + "/v1/healthz")[0] == 200

        req, key = fig1_csr()
        status, ctype, body = _http(srv.url + "/v1/delegations", req.der, "application/pkcs10")
        assert (status, ctype) == (201, CT_PEM_CHAIN)
        cert = load_certificates(body)[0]

        status, ctype, body = _http(srv.url + "/v1/nonce?key=" + keys.spki_hash(cert.public_key_bytes))
        assert (status, ctype) == (200, CT_JSON)
        nonce = bytes.fromhex(json.loads(body)["nonce"])

        sig = keys.sign(key, renewal_message(cert.serial, nonce))
        payload = {"serial": serial_hex(cert.serial), "nonce": nonce.hex(), "signature": base64.b64encode(sig).decode()}
        status, ctype, body = _http(srv.url + "/v1/renewals", json.dumps(payload).encode(), CT_JSON)
        assert (status, ctype) == (201, CT_PEM_CHAIN)
        assert load_certificates(body)[0].public_key_bytes == cert.public_key_bytes

        auth.revoke(cert.serial)
        status, ctype, body = _http(srv.url + "/v1/crl.der")
        assert (status, ctype) == (200, CT_CRL)
        assert CRLDocument.from_der(body).serials == {cert.serial}

        status, ctype, body = _http(srv.url + "/v1/revocations.zone")
        assert (status, ctype) == (200, CT_ZONE)
        assert len(parse_zone(body.decode())) == 1

        assert _http(srv.url + "/v1/nonce?key=xyz")[0] == 400
        assert _http(srv.url + "/v1/nope")[0] == 404
        assert _http(srv.url + "/v1/delegations", b"junk")[0] == 400
