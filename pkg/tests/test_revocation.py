import datetime

import pytest

from conftest import AT
from decert.certs import SigningFailure
from decert.clock import FixedClock
from decert.codes import ViolationCode as V
from decert.revocation import (
    AlreadyRevoked,
    CRLDocument,
    CountingResolver,
    LookupFailed,
    RevocationRecord,
    RevocationStatus,
    RevocationStore,
    ZoneResolver,
    build_crl,
    check_crl,
    check_dns,
    dns_record_name,
    export_zone,
    parse_zone,
    revoke,
    serial_hex,
)
from decert.validation import CRLPolicy, DNSPolicy, validate

CLOCK = FixedClock(AT)


@pytest.fixture
def chain(pki):
    f, root, ca, owner = pki
    d = f.decert(owner, "cdn.com", ["*.content.abc.com"])
    return f, root, ca, owner, d


class TestStore:
    def test_revoke(self):
        store = RevocationStore()
        rec = revoke(store, 0x1234, "keyCompromise", CLOCK)
        assert rec == RevocationRecord(0x1234, AT, "keyCompromise")
        assert 0x1234 in store and store.get(0x1234) == rec

    def test_twice(self):
        store = RevocationStore()
        revoke(store, 7, clock=CLOCK)
        with pytest.raises(AlreadyRevoked):
            revoke(store, 7, clock=CLOCK)
        assert len(store) == 1

    def test_hundred(self):
        store = RevocationStore()
        for s in range(1, 101):
            revoke(store, s << 64, clock=CLOCK)
        assert len(store) == 100
        assert len(export_zone(store, "abc.com")) == 100
        assert store.generation == 100

    def test_persisted_append_only(self, tmp_path):
        path = tmp_path / "revocations.tsv"
        store = RevocationStore(path)
        revoke(store, 0x0A1B, "superseded", CLOCK)
        revoke(store, 0xFF, clock=CLOCK)
        assert path.read_text() == f"0a1b\t{int(AT.timestamp())}\tsuperseded\nff\t{int(AT.timestamp())}\tunspecified\n"
        again = RevocationStore(path)
        assert again.records() == store.records()


class TestCRL:
    def test_empty(self, chain):
        _, _, _, owner, _ = chain
        crl = build_crl(RevocationStore(), owner.cert, owner.key, CLOCK)
        assert crl.entries == () and crl.verify(owner.cert)
        assert crl.next_update - crl.this_update == datetime.timedelta(hours=1)
        assert crl.issuer_cn == "abc.com"

    def test_flip(self, chain):
        _, _, _, owner, d = chain
        store = RevocationStore()
        before = build_crl(store, owner.cert, owner.key, CLOCK)
        assert check_crl(d.cert, before, AT) is RevocationStatus.NOT_REVOKED
        revoke(store, d.cert.serial, clock=CLOCK)
        after = build_crl(store, owner.cert, owner.key, CLOCK)
        assert check_crl(d.cert, after, AT) is RevocationStatus.REVOKED
        assert len(after.entries) == len(store)

    def test_stale(self, chain):
        _, _, _, owner, d = chain
        store = RevocationStore()
        revoke(store, d.cert.serial, clock=CLOCK)
        crl = build_crl(store, owner.cert, owner.key, CLOCK)
        late = AT + datetime.timedelta(hours=1, seconds=1)
        assert check_crl(d.cert, crl, late) is RevocationStatus.STALE_CRL
        assert check_crl(d.cert, crl, AT + datetime.timedelta(hours=1)) is RevocationStatus.REVOKED

    def test_tamper(self, chain):
        _, _, _, owner, d = chain
        store = RevocationStore()
        revoke(store, d.cert.serial, clock=CLOCK)
        crl = build_crl(store, owner.cert, owner.key, CLOCK)
        serial_bytes = d.cert.serial.to_bytes(16, "big")
        at = crl.der.index(serial_bytes)
        der = bytearray(crl.der)
        der[at + 15] ^= 0x01
        tampered = CRLDocument.from_der(bytes(der))
        assert d.cert.serial not in tampered.serials
        assert not tampered.verify(owner.cert)

    def test_wrong_key(self, chain):
        _, _, ca, owner, _ = chain
        with pytest.raises(SigningFailure):
            build_crl(RevocationStore(), owner.cert, ca.key, CLOCK)

    def test_not_verified_by_other_issuer(self, chain):
        f, _, ca, owner, _ = chain
        crl = build_crl(RevocationStore(), owner.cert, owner.key, CLOCK)
        impostor = f.eec(ca, "abc.com")
        assert not crl.verify(impostor.cert)


class TestDNS:
    def test_record_names(self):
        assert str(dns_record_name(0x0A1B, "abc.com")) == "0a1b._decert-revoked.abc.com"
        assert str(dns_record_name(0x00, "a.b")) == "00._decert-revoked.a.b"

    def test_full_width_serial(self, chain):
        serial = chain[4].cert.serial
        label = dns_record_name(serial, "abc.com").labels[0]
        assert len(label) == 32 and label == serial_hex(serial)
        assert serial_hex(0x00FF) == "ff" and serial_hex(0x0100) == "0100"

    def test_flip(self, chain):
        _, _, _, _, d = chain
        store = RevocationStore()
        assert check_dns(d.cert, ZoneResolver(export_zone(store, "abc.com"))) is RevocationStatus.NOT_REVOKED
        revoke(store, d.cert.serial, clock=CLOCK)
        zone = export_zone(store, "abc.com")
        assert zone[str(dns_record_name(d.cert.serial, "abc.com"))] == f"revoked=1;t={int(AT.timestamp())}"
        assert check_dns(d.cert, ZoneResolver(zone)) is RevocationStatus.REVOKED

    def test_other_value_not_revoked(self, chain):
        d = chain[4]
        zone = {str(dns_record_name(d.cert.serial, "abc.com")): "revoked=0"}
        assert check_dns(d.cert, ZoneResolver(zone)) is RevocationStatus.NOT_REVOKED

    def test_one_query(self, chain):
        d = chain[4]
        r = CountingResolver(ZoneResolver({}))
        check_dns(d.cert, r)
        assert r.queries == [str(dns_record_name(d.cert.serial, "abc.com"))]

    def test_lookup_failure(self, chain):
        class Broken:
            def resolve_txt(self, name):
                raise LookupFailed("SERVFAIL")

        assert check_dns(chain[4].cert, Broken()) is RevocationStatus.LOOKUP_FAILED

    def test_zone_text_round_trip(self):
        store = RevocationStore()
        for s in (0x0A1B, 0xFFEE, 0x01):
            revoke(store, s, clock=CLOCK)
        zone = export_zone(store, "abc.com")
        text = zone.to_text()
        assert text.splitlines()[0] == f'01._decert-revoked.abc.com. 300 IN TXT "revoked=1;t={int(AT.timestamp())}"'
        assert parse_zone(text) == zone
        assert parse_zone("; comment\n\n" + text) == zone

    def test_empty_zone(self):
        assert export_zone(RevocationStore(), "abc.com").to_text() == ""


class TestPolicies:
    def test_fail_closed_dns(self, chain):
        _, root, ca, owner, d = chain

        class Timeout:
            def resolve_txt(self, name):
                raise TimeoutError()

        full = [d.cert, owner.cert, ca.cert]
        r = validate(full, [root.cert], "x.content.abc.com", AT, revocation=DNSPolicy(Timeout()))
        assert r.codes() == {V.REVOKED}
        assert "revocation status unknown" in r.violations[0].detail
        assert validate(full, [root.cert], "x.content.abc.com", AT, revocation=DNSPolicy(Timeout(), fail_closed=False)).accepted

    def test_missing_crl_fail_closed(self, chain):
        _, root, ca, owner, d = chain
        full = [d.cert, owner.cert, ca.cert]
        assert validate(full, [root.cert], "x.content.abc.com", AT, revocation=CRLPolicy([])).codes() == {V.REVOKED}
        assert validate(full, [root.cert], "x.content.abc.com", AT, revocation=CRLPolicy([], fail_closed=False)).accepted

    def test_stale_crl_in_validation(self, chain):
        _, root, ca, owner, d = chain
        crl = build_crl(RevocationStore(), owner.cert, owner.key, FixedClock(AT - datetime.timedelta(hours=2)))
        full = [d.cert, owner.cert, ca.cert]
        r = validate(full, [root.cert], "x.content.abc.com", AT, revocation=CRLPolicy([crl]))
        assert r.codes() == {V.REVOKED}

    def test_each_decert_checked_against_its_issuer(self, pki):
        f, root, ca, owner = pki
        cdn1 = f.decert(owner, "cdn1.com", ["*.pics.abc.com"], path_len=1)
        cdn2 = f.decert(cdn1, "cdn2.com", ["*.x.pics.abc.com"])
        full = [cdn2.cert, cdn1.cert, owner.cert, ca.cert]
        owner_store, cdn1_store = RevocationStore(), RevocationStore()
        revoke(cdn1_store, cdn2.cert.serial, clock=CLOCK)
        crls = [build_crl(owner_store, owner.cert, owner.key, CLOCK), build_crl(cdn1_store, cdn1.cert, cdn1.key, CLOCK)]
        r = validate(full, [root.cert], "y.x.pics.abc.com", AT, revocation=CRLPolicy(crls))
        assert [(v.index, v.code) for v in r.violations] == [(0, V.REVOKED)]

        counting = CountingResolver(ZoneResolver(export_zone(cdn1_store, "cdn1.com")))
        r = validate(full, [root.cert], "y.x.pics.abc.com", AT, revocation=DNSPolicy(counting))
        assert r.codes() == {V.REVOKED}
        assert len(counting.queries) == 2
