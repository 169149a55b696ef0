"""Node identity: Ed25519 keypair, hash-derived node id, encrypted key file."""

from __future__ import annotations

import hashlib
import os

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .cid import base58_encode
from .errors import BadKeyPassphrase


def node_id_of(public_bytes: bytes) -> bytes:
    """32-byte DHT coordinate: hash of the raw public key."""
    return hashlib.sha256(public_bytes).digest()


class NodeIdentity:
    def __init__(self, private_key: Ed25519PrivateKey):
        self._key = private_key
        self.public_bytes = private_key.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw)
        self.node_id = node_id_of(self.public_bytes)

    @classmethod
    def generate(cls) -> "NodeIdentity":
        return cls(Ed25519PrivateKey.generate())

    @classmethod
    def from_seed(cls, seed: bytes) -> "NodeIdentity":
        """Deterministic identity for simulated nodes (any 32 bytes)."""
        return cls(Ed25519PrivateKey.from_private_bytes(seed))

    @property
    def fingerprint(self) -> str:
        """base58 of the node id; the ledger author field."""
        return base58_encode(self.node_id)

    def sign(self, data: bytes) -> bytes:
        return self._key.sign(data)

    def save(self, path: str, passphrase: str) -> None:
        pem = self._key.private_bytes(
            serialization.Encoding.PEM,
            serialization.PrivateFormat.PKCS8,
            serialization.BestAvailableEncryption(passphrase.encode("utf-8")))
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        old = os.umask(0o177)
        try:
            with open(path, "wb") as fh:
                fh.write(pem)
        finally:
            os.umask(old)

    @classmethod
    def load(cls, path: str, passphrase: str) -> "NodeIdentity":
        with open(path, "rb") as fh:
            pem = fh.read()
        try:
            key = serialization.load_pem_private_key(
                pem, password=passphrase.encode("utf-8"))
        except (ValueError, TypeError) as exc:
            raise BadKeyPassphrase(f"cannot decrypt {path}: {exc}") from None
        if not isinstance(key, Ed25519PrivateKey):
            raise BadKeyPassphrase(f"{path} does not hold a signing key")
        return cls(key)


def verify_signature(public_bytes: bytes, signature: bytes, data: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_bytes).verify(signature, data)
        return True
    except (InvalidSignature, ValueError):
        return False
