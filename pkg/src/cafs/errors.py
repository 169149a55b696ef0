"""Exception types shared across the package."""


class CafsError(Exception):
    """Base class for all errors raised by this package."""


# --- content identifiers ---

class InvalidBase58(CafsError):
    """Text contains a character outside the base58btc alphabet."""


class WrongLength(CafsError):
    """Decoded CID is not exactly 34 bytes."""


class WrongCodec(CafsError):
    """Decoded CID does not start with the 0x12 0x20 multihash prefix."""


# --- DAG / block store ---

class TooManyLinks(CafsError):
    """Interior node exceeds the configured link fan-out."""


class OversizedLeaf(CafsError):
    """Leaf data exceeds the configured chunk size."""


class MalformedNode(CafsError):
    """Stored bytes do not decode as a DAG node."""


class MissingBlock(CafsError):
    """A required block is absent from the store."""

    def __init__(self, cid):
        super().__init__(f"missing block {cid}")
        self.cid = cid


# --- DHT ---

class NoPeers(CafsError):
    """Routing table is empty; the operation needs at least one contact."""


class ValueTooLarge(CafsError):
    """DHT record value exceeds the 4 KiB limit."""


class NotFound(CafsError):
    """No record exists under the requested key."""


# --- exchange ---

class Unretrievable(CafsError):
    """All providers failed or timed out for a block."""

    def __init__(self, cid):
        super().__init__(f"unretrievable block {cid}")
        self.cid = cid


class InvalidBlock(CafsError):
    """A peer served bytes that fail content verification."""

    def __init__(self, peer, cid):
        super().__init__(f"peer {peer} sent invalid bytes for {cid}")
        self.peer = peer
        self.cid = cid


# --- ledger ---

class EmptyHashList(CafsError):
    """Merkle root of an empty list is undefined."""


class DuplicatePending(CafsError):
    """An identical (file_cid, accessed_at) entry is already pending."""


class LedgerValidationFailed(CafsError):
    """A received or loaded chain failed validation."""


# --- naming ---

class Expired(CafsError):
    """Name record is past its validity time."""


class BadSignature(CafsError):
    """Record signature does not verify under the owner key."""


# --- node / daemon ---

class SameContent(CafsError):
    """Modification recorded against identical content."""


class BadKeyPassphrase(CafsError):
    """Key file could not be decrypted with the given passphrase."""


class ScriptError(CafsError):
    """Malformed simulator scenario action."""


class DaemonUnreachable(CafsError):
    """Local API endpoint did not accept a connection."""
