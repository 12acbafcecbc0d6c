import datetime

import pytest
from cryptography import x509

from conftest import AT
from decert import keys
from decert.certs import (
    CertificateTemplate,
    KeyUsageSet,
    MalformedCertificate,
    PolicyViolation,
    SigningFailure,
    build_certificate,
    chain_pem,
    is_decert,
    load_certificates,
    parse_certificate,
    verify_signature,
)
from decert.extension import DELEGATION_INFO_OID, DelegationInfo
from decert.names import DomainScope, parse_name as N, parse_pattern as P


def fig1_template(key, **over):
    t = dict(
        subject_cn="cdn.com",
        public_key=key.public_key(),
        not_before=AT - datetime.timedelta(seconds=60),
        not_after=AT + datetime.timedelta(hours=6),
        san=[P("*.content.abc.com")],
        delegation_info=DelegationInfo(frozenset(), None, 0),
        key_usage=KeyUsageSet.of(0),
        serial=0x0A1B,
    )
    t.update(over)
    return CertificateTemplate(**t)


def test_fig1_build_parse(pki):
    f, _, _, owner = pki
    key = keys.generate_key("ecdsa-p256")
    cert = parse_certificate(build_certificate(fig1_template(key), owner.cert, owner.key))
    assert cert.subject_cn == "cdn.com"
    assert cert.issuer_cn == "abc.com"
    assert cert.san_patterns == frozenset({P("*.content.abc.com")})
    assert cert.delegation_info == DelegationInfo(frozenset(), None, 0)
    assert cert.key_usage == KeyUsageSet.of(0)
    assert not cert.is_ca
    assert cert.serial == 0x0A1B
    assert cert.not_before == AT - datetime.timedelta(seconds=60)
    assert cert.not_after == AT + datetime.timedelta(hours=6)
    assert cert.public_key_bytes == keys.spki_bytes(key.public_key())
    assert cert.unknown_critical == (DELEGATION_INFO_OID,)
    assert is_decert(cert)
    assert verify_signature(cert, owner.cert.public_key_bytes)
    assert not verify_signature(cert, keys.spki_bytes(keys.generate_key().public_key()))


def test_extension_is_critical_and_ca_false(pki):
    _, _, _, owner = pki
    key = keys.generate_key("ed25519")
    der = build_certificate(fig1_template(key), owner.cert, owner.key)
    raw = x509.load_der_x509_certificate(der)
    ext = raw.extensions.get_extension_for_oid(x509.ObjectIdentifier(DELEGATION_INFO_OID))
    assert ext.critical
    assert raw.extensions.get_extension_for_class(x509.BasicConstraints).value.ca is False
    assert raw.version == x509.Version.v3


def test_round_trip_all_fields(pki):
    _, _, _, owner = pki
    key = keys.generate_key("ecdsa-p256")
    t = fig1_template(
        key,
        san=[P("*.pics.abc.com"), P("pics.abc.com")],
        delegation_info=DelegationInfo(frozenset({N("a.pics.abc.com")}), frozenset({P("*.pics.abc.com"), P("pics.abc.com")}), 3),
        key_usage=KeyUsageSet.of(0, 2),
        crl_url="http://abc.com/crl.der",
        revocation_dns_suffix="abc.com",
    )
    cert = parse_certificate(build_certificate(t, owner.cert, owner.key))
    assert cert.san_patterns == frozenset(t.san)
    assert cert.delegation_info == t.delegation_info
    assert cert.key_usage == t.key_usage
    assert cert.crl_url == t.crl_url
    assert cert.revocation_dns_suffix == "abc.com"
    assert cert.path_len == 3
    assert cert.scope == DomainScope.of(["*.pics.abc.com", "pics.abc.com"], ["a.pics.abc.com"])
    assert parse_certificate(cert.pem()) == cert
    assert parse_certificate(cert.pem().decode()) == cert


def test_ca_flag_with_delegation_info_refused(pki):
    _, _, _, owner = pki
    key = keys.generate_key()
    with pytest.raises(PolicyViolation):
        build_certificate(fig1_template(key, is_ca=True), owner.cert, owner.key)


def test_san_required(pki):
    _, _, _, owner = pki
    with pytest.raises(PolicyViolation):
        build_certificate(fig1_template(keys.generate_key(), san=[]), owner.cert, owner.key)


def test_empty_window_refused(pki):
    _, _, _, owner = pki
    with pytest.raises(ValueError):
        build_certificate(fig1_template(keys.generate_key(), not_after=AT - datetime.timedelta(hours=1)), owner.cert, owner.key)


def test_wrong_issuer_key(pki):
    _, _, ca, owner = pki
    with pytest.raises(SigningFailure):
        build_certificate(fig1_template(keys.generate_key()), owner.cert, ca.key)


def test_noncritical_rejected_in_decert_context(pki):
    _, _, _, owner = pki
    der = build_certificate(fig1_template(keys.generate_key(), delegation_critical=False), owner.cert, owner.key)
    with pytest.raises(MalformedCertificate):
        parse_certificate(der)
    lax = parse_certificate(der, decert_context=False)
    assert not lax.delegation_critical
    assert lax.unknown_critical == ()


def test_ca_flag_rejected_when_parsing(pki):
    _, _, _, owner = pki
    der = build_certificate(fig1_template(keys.generate_key(), is_ca=True), owner.cert, owner.key, enforce_policy=False)
    with pytest.raises(MalformedCertificate):
        parse_certificate(der)
    assert parse_certificate(der, decert_context=False).is_ca


def test_plain_leaf_and_root_are_not_decerts(pki):
    _, root, ca, owner = pki
    assert not owner.cert.is_decert and owner.cert.delegation_info is None
    assert not root.cert.is_decert
    assert root.cert.is_ca and ca.cert.basic_path_len == 0
    assert owner.cert.unknown_critical == ()


def test_garbage():
    with pytest.raises(MalformedCertificate):
        parse_certificate(b"\x30\x03\x02\x01\x00")


def test_bundle_order(pki):
    _, root, ca, owner = pki
    certs = load_certificates(chain_pem([owner.cert, ca.cert, root.cert]))
    assert [c.subject_cn for c in certs] == ["abc.com", ca.cert.subject_cn, root.cert.subject_cn]


def test_key_usage_set():
    ku = KeyUsageSet.parse("1,3,5,6")
    assert ku == KeyUsageSet.of(1, 3, 5, 6)
    assert not ku <= KeyUsageSet.of(0, 1, 5, 6)
    assert KeyUsageSet.of(1, 5) <= ku
    assert KeyUsageSet.from_x509(ku.to_x509()) == ku
    with pytest.raises(ValueError):
        KeyUsageSet.of(9)


def test_serials_are_16_octets():
    from decert.certs import random_serial

    for _ in range(50):
        s = random_serial()
        assert len(s.to_bytes(16, "big").hex()) == 32 and s >> 120 != 0 and s > 0
