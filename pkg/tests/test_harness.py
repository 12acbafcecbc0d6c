import shutil
import socket

import pytest

from conftest import AT
from decert import keys
from decert.certs import chain_pem, load_certificates
from decert.codes import ViolationCode as V
from decert.fixtures import ANCHORS, MANIFEST
from decert.harness import (
    PAGE,
    BindFailure,
    CorpusMismatch,
    KeyMismatch,
    NetworkError,
    TLSServer,
    probe,
    run_corpus,
    run_server,
)
from decert.validation import Mode, validate


def serve(fixture):
    return run_server(chain_pem(fixture.chain), keys.private_key_pem(fixture.key))


def test_key_mismatch(corpus):
    fx = corpus["fixtures"]["fig1"]
    with pytest.raises(KeyMismatch):
        TLSServer(chain_pem(fx.chain), keys.private_key_pem(keys.generate_key()))


def test_bind_failure(corpus):
    fx = corpus["fixtures"]["fig1"]
    with serve(fx) as srv:
        with pytest.raises(BindFailure):
            TLSServer(chain_pem(fx.chain), keys.private_key_pem(fx.key), srv.address)


def test_network_error(corpus):
    s = socket.socket()
    s.bind(("127.0.0.1", 0))
    port = s.getsockname()[1]
    s.close()
    with pytest.raises(NetworkError):
        probe("a.a.localhost", ("127.0.0.1", port), corpus["anchors"], timeout=1)


def test_two_servers(corpus):
    poc, fig1 = corpus["fixtures"]["poc"], corpus["fixtures"]["fig1"]
    with serve(poc) as a, serve(fig1) as b:
        assert a.address != b.address
        ok = probe("a.a.localhost", a.address, corpus["anchors"], at=AT)
        bad = probe("b.a.localhost", a.address, corpus["anchors"], at=AT)
        other = probe("x.content.abc.com", b.address, corpus["anchors"], at=AT)
    assert ok.connected and ok.page_body == PAGE and ok.report.accepted
    assert not bad.connected and bad.report.codes() == {V.HOSTNAME_EXCLUDED}
    assert "rejected" in bad.alert_or_error
    assert other.connected


def test_strict_probe(corpus):
    with serve(corpus["fixtures"]["poc"]) as srv:
        out = probe("a.a.localhost", srv.address, corpus["anchors"], Mode.STRICT, at=AT)
    assert not out.connected and out.report.codes() == {V.UNKNOWN_CRITICAL_EXTENSION}


def test_captured_chain_matches_served(corpus):
    fx = corpus["fixtures"]["fig2b"]
    with serve(fx) as srv:
        out = probe("x.pics.abc.com", srv.address, corpus["anchors"], at=AT)
    assert [c.raw_der for c in out.peer_chain] == [c.raw_der for c in fx.chain]
    # the transport adds no decisions of its own
    assert out.report == validate(out.peer_chain, corpus["anchors"], "x.pics.abc.com", AT)


def test_run_corpus(corpus_dir):
    results = run_corpus(corpus_dir, at=AT)
    assert len(results) == 18
    for (fixture, host, mode), outcome in results.items():
        if outcome.connected:
            assert outcome.report.accepted and outcome.page_body == PAGE


def test_empty_corpus(tmp_path):
    assert run_corpus(tmp_path) == {}


def test_mismatch_reported(corpus_dir, tmp_path):
    copy = tmp_path / "c"
    shutil.copytree(corpus_dir, copy)
    lines = (copy / MANIFEST).read_text().splitlines()
    lines = [l for l in lines if l.startswith("poc\t")]
    lines[0] = lines[0].replace("Accept", "Reject")
    (copy / MANIFEST).write_text("\n".join(lines) + "\n")
    with pytest.raises(CorpusMismatch) as exc:
        run_corpus(copy, at=AT)
    assert list(exc.value.cells) == [("poc", "a.a.localhost", "DeCertAware")]


def test_clock_shift_expires_cells(corpus_dir, tmp_path):
    import datetime

    copy = tmp_path / "c"
    shutil.copytree(corpus_dir, copy)
    (copy / MANIFEST).write_text("fig1\tx.content.abc.com\tDeCertAware\tReject\tExpired\n")
    results = run_corpus(copy, at=AT + datetime.timedelta(hours=7))
    assert results[("fig1", "x.content.abc.com", "DeCertAware")].report.codes() == {V.EXPIRED}


def test_anchor_file_written(corpus_dir):
    assert len(load_certificates((corpus_dir / ANCHORS).read_bytes(), decert_context=False)) == 1
