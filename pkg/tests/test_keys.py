import pytest

from decert import keys


@pytest.mark.parametrize("alg", keys.ALGORITHMS)
def test_sign_verify(alg):
    k = keys.generate_key(alg)
    assert keys.key_algorithm(k) == alg
    sig = keys.sign(k, b"msg")
    assert keys.verify(k.public_key(), sig, b"msg")
    assert not keys.verify(k.public_key(), sig, b"other")


def test_seeded_generation_is_deterministic():
    seed = bytes(range(32))
    for alg in keys.ALGORITHMS:
        a, b = keys.generate_key(alg, seed), keys.generate_key(alg, seed)
        assert keys.spki_bytes(a.public_key()) == keys.spki_bytes(b.public_key())


def test_pem_round_trip(tmp_path):
    k = keys.generate_key()
    (tmp_path / "k.pem").write_bytes(keys.private_key_pem(k))
    loaded = keys.load_private_key_file(tmp_path / "k.pem")
    assert keys.keys_match(loaded, k.public_key())
    assert not keys.keys_match(loaded, keys.generate_key().public_key())


def test_unsupported():
    with pytest.raises(keys.UnsupportedAlgorithm):
        keys.generate_key("rsa-2048")


def test_spki_hash_is_sha256_hex():
    import hashlib

    k = keys.generate_key()
    spki = keys.spki_bytes(k.public_key())
    assert keys.spki_hash(spki) == hashlib.sha256(spki).hexdigest()
