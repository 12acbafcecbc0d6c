"""Key generation, serialization and raw signing helpers."""

from __future__ import annotations

import hashlib
import os
from typing import Optional, Union

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, ed25519, padding, rsa

PrivateKey = Union[ec.EllipticCurvePrivateKey, ed25519.Ed25519PrivateKey]
PublicKey = Union[ec.EllipticCurvePublicKey, ed25519.Ed25519PublicKey, rsa.RSAPublicKey]

ALGORITHMS = ("ecdsa-p256", "ed25519")


class UnsupportedAlgorithm(ValueError):
    pass


def generate_key(alg: str = "ecdsa-p256", seed: Optional[bytes] = None) -> PrivateKey:
    """Generate a signing key.  ``seed`` gives a reproducible key (fixtures only)."""
    if alg == "ed25519":
        if seed is not None:
            return ed25519.Ed25519PrivateKey.from_private_bytes(
                hashlib.sha256(seed).digest()
            )
        return ed25519.Ed25519PrivateKey.generate()
    if alg == "ecdsa-p256":
        if seed is not None:
            n = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
            scalar = int.from_bytes(hashlib.sha256(seed).digest(), "big") % (n - 1) + 1
            return ec.derive_private_key(scalar, ec.SECP256R1())
        return ec.generate_private_key(ec.SECP256R1())
    raise UnsupportedAlgorithm(f"unsupported key algorithm {alg!r}")


def key_algorithm(key) -> str:
    if isinstance(key, (ed25519.Ed25519PrivateKey, ed25519.Ed25519PublicKey)):
        return "ed25519"
    if isinstance(key, (ec.EllipticCurvePrivateKey, ec.EllipticCurvePublicKey)):
        if isinstance(key.curve, ec.SECP256R1):
            return "ecdsa-p256"
        return f"ecdsa-{key.curve.name}"
    if isinstance(key, (rsa.RSAPrivateKey, rsa.RSAPublicKey)):
        return "rsa"
    return type(key).__name__


def key_bits(key) -> int:
    if isinstance(key, (ed25519.Ed25519PrivateKey, ed25519.Ed25519PublicKey)):
        return 256
    return key.key_size


def hash_for(key) -> Optional[hashes.HashAlgorithm]:
    """Signature hash to pair with ``key`` when signing certificates."""
    if isinstance(key, ed25519.Ed25519PrivateKey):
        return None
    if isinstance(key, ec.EllipticCurvePrivateKey):
        return hashes.SHA256()
    raise UnsupportedAlgorithm(f"cannot sign with {key_algorithm(key)} keys")


def spki_bytes(public_key: PublicKey) -> bytes:
    return public_key.public_bytes(
        serialization.Encoding.DER, serialization.PublicFormat.SubjectPublicKeyInfo
    )


def spki_hash(spki: bytes) -> str:
    return hashlib.sha256(spki).hexdigest()


def load_public_key(spki: bytes) -> PublicKey:
    return serialization.load_der_public_key(spki)


def private_key_pem(key: PrivateKey) -> bytes:
    return key.private_bytes(
        serialization.Encoding.PEM,
        serialization.PrivateFormat.PKCS8,
        serialization.NoEncryption(),
    )


def public_key_pem(key: PublicKey) -> bytes:
    return key.public_bytes(
        serialization.Encoding.PEM, serialization.PublicFormat.SubjectPublicKeyInfo
    )


def load_private_key(data: bytes) -> PrivateKey:
    return serialization.load_pem_private_key(data, password=None)


def load_private_key_file(path: Union[str, os.PathLike]) -> PrivateKey:
    with open(path, "rb") as f:
        return load_private_key(f.read())


def sign(key: PrivateKey, data: bytes) -> bytes:
    if isinstance(key, ed25519.Ed25519PrivateKey):
        return key.sign(data)
    if isinstance(key, ec.EllipticCurvePrivateKey):
        return key.sign(data, ec.ECDSA(hashes.SHA256()))
    raise UnsupportedAlgorithm(f"cannot sign with {key_algorithm(key)} keys")


def verify(
    public_key: PublicKey,
    signature: bytes,
    data: bytes,
    hash_algorithm: Optional[hashes.HashAlgorithm] = None,
) -> bool:
    try:
        if isinstance(public_key, ed25519.Ed25519PublicKey):
            public_key.verify(signature, data)
        elif isinstance(public_key, ec.EllipticCurvePublicKey):
            public_key.verify(signature, data, ec.ECDSA(hash_algorithm or hashes.SHA256()))
        elif isinstance(public_key, rsa.RSAPublicKey):
            public_key.verify(
                signature, data, padding.PKCS1v15(), hash_algorithm or hashes.SHA256()
            )
        else:
            return False
    except (InvalidSignature, ValueError, TypeError):
        return False
    return True


def keys_match(private_key: PrivateKey, public_key: PublicKey) -> bool:
    return spki_bytes(private_key.public_key()) == spki_bytes(public_key)
