"""Mutable naming: signed records mapping a stable key to the latest root CID.

A name key is the hash of the owner's public key. Records carry a
sequence number (higher supersedes lower) and an expiry time, and are
signed over the canonical layout

    name_key (32) || value CID (34) || sequence (u64) || validity (u64)

The wire/storage form prepends the owner public key and appends the
signature so any node can verify before storing or returning a record.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

from .cid import Cid
from .errors import BadSignature, Expired, NotFound
from .identity import NodeIdentity, node_id_of, verify_signature

RECORD_LEN = 32 + 34 + 8 + 8 + 64  # pubkey + value + seq + validity + signature
DEFAULT_VALIDITY_S = 48 * 3600


@dataclass(frozen=True)
class NameRecord:
    name_key: bytes
    value: Cid
    sequence: int
    validity: int  # expiry, unix seconds
    public_key: bytes
    signature: bytes

    def signed_payload(self) -> bytes:
        return (self.name_key + self.value.to_bytes()
                + struct.pack(">QQ", self.sequence, self.validity))

    def verify(self) -> bool:
        if node_id_of(self.public_key) != self.name_key:
            return False
        return verify_signature(self.public_key, self.signature, self.signed_payload())

    def encode(self) -> bytes:
        return (self.public_key + self.value.to_bytes()
                + struct.pack(">QQ", self.sequence, self.validity) + self.signature)


def decode_record(raw: bytes) -> NameRecord:
    if len(raw) != RECORD_LEN:
        raise BadSignature(f"record must be {RECORD_LEN} bytes, got {len(raw)}")
    public_key = raw[:32]
    value = Cid.from_bytes(raw[32:66])
    sequence, validity = struct.unpack(">QQ", raw[66:82])
    signature = raw[82:146]
    return NameRecord(node_id_of(public_key), value, sequence, validity,
                      public_key, signature)


def make_record(identity: NodeIdentity, value: Cid, sequence: int,
                validity: int) -> NameRecord:
    name_key = identity.node_id
    payload = name_key + value.to_bytes() + struct.pack(">QQ", sequence, validity)
    return NameRecord(name_key, value, sequence, validity,
                      identity.public_bytes, identity.sign(payload))


class NameSession:
    """Per-node publish/resolve state: sequence counter and resolver cache."""

    def __init__(self, identity: NodeIdentity, clock,
                 validity_s: int = DEFAULT_VALIDITY_S, seq_store=None):
        self.identity = identity
        self.clock = clock
        self.validity_s = validity_s
        # seq_store maps hex name_key -> last published sequence
        self.seq_store = seq_store if seq_store is not None else {}
        self._resolved: dict[bytes, NameRecord] = {}

    def next_sequence(self) -> int:
        key = self.identity.node_id.hex()
        prev = self.seq_store.get(key)
        seq = 0 if prev is None else prev + 1
        self.seq_store[key] = seq
        return seq

    def publish(self, value: Cid, dht) -> NameRecord:
        """Sign and store a record under the owner's name key via the DHT."""
        record = make_record(self.identity, value, self.next_sequence(),
                             int(self.clock()) + self.validity_s)
        dht.store_record(record.name_key, record.encode())
        return record

    def resolve(self, name_key: bytes, dht) -> Cid:
        """Fetch, verify, and return the highest-sequence valid value.

        Never returns a lower sequence than previously returned for the
        same key. Raises NotFound, BadSignature, or Expired.
        """
        try:
            raw = dht.get_record(name_key)
        except NotFound:
            raw = None
        record = decode_record(raw) if raw is not None else None
        if record is not None and not record.verify():
            record = None  # unverifiable fetch; fall back to cache
        cached = self._resolved.get(name_key)
        if cached is not None and (record is None or cached.sequence > record.sequence):
            record = cached
        if record is None:
            if raw is not None:
                raise BadSignature("fetched record failed verification")
            raise NotFound(f"no record under {name_key.hex()}")
        if record.validity < int(self.clock()):
            raise Expired(f"record expired at {record.validity}")
        self._resolved[name_key] = record
        return record.value


def validate_stored_record(key: bytes, value: bytes, now: int,
                           existing: bytes = None) -> bool:
    """Store-side gate: signature, key binding, freshness, sequence order."""
    try:
        record = decode_record(value)
    except Exception:
        return False
    if record.name_key != key or not record.verify():
        return False
    if record.validity < now:
        return False
    if existing is not None:
        try:
            prev = decode_record(existing)
        except Exception:
            return True
        if prev.sequence > record.sequence:
            return False
    return True
