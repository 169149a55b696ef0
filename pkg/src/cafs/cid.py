"""Content identifiers: SHA-256 multihash framing with base58btc text form.

A CID is 34 bytes on the wire: the fixed prefix 0x12 (SHA-256) 0x20
(32-byte digest) followed by the digest itself. The text form is the
base58btc rendering of those 34 bytes and always starts with "Qm".
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass

from .errors import InvalidBase58, WrongCodec, WrongLength

HASH_CODE = 0x12
DIGEST_LEN = 0x20
CID_BINARY_LEN = 2 + DIGEST_LEN

B58_ALPHABET = "123456789ABCDEFGHJKLMNPQRSTUVWXYZabcdefghijkmnopqrstuvwxyz"
_B58_INDEX = {c: i for i, c in enumerate(B58_ALPHABET)}


@dataclass(frozen=True, order=True)
class Cid:
    """Immutable 32-byte content digest with multihash framing."""

    digest: bytes

    def __post_init__(self):
        if len(self.digest) != DIGEST_LEN:
            raise WrongLength(f"digest must be {DIGEST_LEN} bytes, got {len(self.digest)}")

    def to_bytes(self) -> bytes:
        return bytes([HASH_CODE, DIGEST_LEN]) + self.digest

    @classmethod
    def from_bytes(cls, raw: bytes) -> "Cid":
        if len(raw) != CID_BINARY_LEN:
            raise WrongLength(f"CID binary must be {CID_BINARY_LEN} bytes, got {len(raw)}")
        if raw[0] != HASH_CODE or raw[1] != DIGEST_LEN:
            raise WrongCodec(f"bad multihash prefix {raw[0]:#04x} {raw[1]:#04x}")
        return cls(raw[2:])

    def __str__(self) -> str:
        return cid_to_text(self)

    def __repr__(self) -> str:
        return f"Cid({cid_to_text(self)})"


def cid_of_bytes(data: bytes) -> Cid:
    """Hash data into its content identifier. Pure and deterministic."""
    return Cid(hashlib.sha256(data).digest())


def base58_encode(raw: bytes) -> str:
    n = int.from_bytes(raw, "big")
    out = []
    while n:
        n, r = divmod(n, 58)
        out.append(B58_ALPHABET[r])
    pad = 0
    for b in raw:
        if b:
            break
        pad += 1
    return B58_ALPHABET[0] * pad + "".join(reversed(out))


def base58_decode(text: str) -> bytes:
    n = 0
    for ch in text:
        idx = _B58_INDEX.get(ch)
        if idx is None:
            raise InvalidBase58(f"character {ch!r} not in base58btc alphabet")
        n = n * 58 + idx
    body = n.to_bytes((n.bit_length() + 7) // 8, "big")
    pad = 0
    for ch in text:
        if ch != B58_ALPHABET[0]:
            break
        pad += 1
    return b"\x00" * pad + body


def cid_to_text(c: Cid) -> str:
    """Render a CID as its base58btc text form ("Qm...")."""
    return base58_encode(c.to_bytes())


def cid_from_text(s: str) -> Cid:
    """Parse the base58btc text form back into a CID.

    Raises InvalidBase58, WrongLength, or WrongCodec.
    """
    return Cid.from_bytes(base58_decode(s))
