"""Peer protocol messages: length-prefixed canonical binary encoding.

Every message starts with a one-byte type tag, the sender's 32-byte node
id, and the sender's listening address (u16 length + UTF-8), followed by
a fixed per-type body. The same bytes travel over real TCP (behind a
u32 big-endian frame length) and the simulator transport, so encodings
are bit-exact and covered by golden-vector tests.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

from .cid import Cid

# request tags
PING = 0x01
FIND_NODE = 0x02
FIND_PROVIDERS = 0x03
ADD_PROVIDER = 0x04
STORE = 0x05
GET = 0x06
WANT = 0x07
LEDGER_SUBMIT = 0x08
LEDGER_STATUS = 0x09
LEDGER_FETCH = 0x0A

# response tags
PONG = 0x81
NODES = 0x82
PROVIDERS = 0x83
PROVIDER_ACK = 0x84
STORE_RESULT = 0x85
GET_RESULT = 0x86
BLOCK = 0x87
DONT_HAVE = 0x88
LEDGER_ACCEPTED = 0x89
LEDGER_STATE = 0x8A
LEDGER_BLOCKS = 0x8B
ERROR = 0xFF

MAX_RECORD_VALUE = 4096


class WireError(ValueError):
    """Bytes do not decode as a protocol message."""


@dataclass(frozen=True, order=True)
class Contact:
    """A peer's identity and dialable address."""

    node_id: bytes
    addr: str


@dataclass(frozen=True)
class ProviderRecord:
    """Announcement that `provider` can serve blocks for `key`."""

    key: bytes  # 32-byte digest coordinate
    provider: bytes  # 32-byte node id
    addr: str
    expires_at: int  # unix seconds

    def contact(self) -> Contact:
        return Contact(self.provider, self.addr)


def _pack_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack(">H", len(raw)) + raw


class _Reader:
    def __init__(self, raw: bytes):
        self.raw = raw
        self.off = 0

    def take(self, n: int) -> bytes:
        if self.off + n > len(self.raw):
            raise WireError("message truncated")
        out = self.raw[self.off:self.off + n]
        self.off += n
        return out

    def u8(self) -> int:
        return self.take(1)[0]

    def u16(self) -> int:
        return struct.unpack(">H", self.take(2))[0]

    def u32(self) -> int:
        return struct.unpack(">I", self.take(4))[0]

    def u64(self) -> int:
        return struct.unpack(">Q", self.take(8))[0]

    def string(self) -> str:
        return self.take(self.u16()).decode("utf-8")

    def cid(self) -> Cid:
        return Cid.from_bytes(self.take(34))

    def done(self) -> None:
        if self.off != len(self.raw):
            raise WireError(f"{len(self.raw) - self.off} trailing bytes")


def _pack_contact(c: Contact) -> bytes:
    return c.node_id + _pack_str(c.addr)


def _read_contact(r: _Reader) -> Contact:
    return Contact(r.take(32), r.string())


def _pack_provider(p: ProviderRecord) -> bytes:
    return p.key + p.provider + _pack_str(p.addr) + struct.pack(">Q", p.expires_at)


def _read_provider(r: _Reader) -> ProviderRecord:
    return ProviderRecord(r.take(32), r.take(32), r.string(), r.u64())


@dataclass(frozen=True)
class Message:
    """Common header: type tag + sender identity + sender listen address."""

    sender_id: bytes
    sender_addr: str

    TAG = None

    def body(self) -> bytes:
        return b""

    def encode(self) -> bytes:
        if len(self.sender_id) != 32:
            raise WireError("sender id must be 32 bytes")
        return bytes([self.TAG]) + self.sender_id + _pack_str(self.sender_addr) + self.body()

    def contact(self) -> Contact:
        return Contact(self.sender_id, self.sender_addr)


@dataclass(frozen=True)
class Ping(Message):
    TAG = PING


@dataclass(frozen=True)
class Pong(Message):
    TAG = PONG


@dataclass(frozen=True)
class FindNode(Message):
    TAG = FIND_NODE
    target: bytes = b""

    def body(self):
        return self.target


@dataclass(frozen=True)
class Nodes(Message):
    TAG = NODES
    contacts: tuple = ()

    def body(self):
        return struct.pack(">H", len(self.contacts)) + b"".join(
            _pack_contact(c) for c in self.contacts)


@dataclass(frozen=True)
class FindProviders(Message):
    TAG = FIND_PROVIDERS
    key: bytes = b""

    def body(self):
        return self.key


@dataclass(frozen=True)
class Providers(Message):
    TAG = PROVIDERS
    contacts: tuple = ()
    records: tuple = ()

    def body(self):
        return (struct.pack(">H", len(self.contacts))
                + b"".join(_pack_contact(c) for c in self.contacts)
                + struct.pack(">H", len(self.records))
                + b"".join(_pack_provider(p) for p in self.records))


@dataclass(frozen=True)
class AddProvider(Message):
    TAG = ADD_PROVIDER
    record: ProviderRecord = None

    def body(self):
        return _pack_provider(self.record)


@dataclass(frozen=True)
class ProviderAck(Message):
    TAG = PROVIDER_ACK
    accepted: bool = True

    def body(self):
        return bytes([1 if self.accepted else 0])


@dataclass(frozen=True)
class StoreRecord(Message):
    TAG = STORE
    key: bytes = b""
    value: bytes = b""

    def body(self):
        return self.key + struct.pack(">H", len(self.value)) + self.value


@dataclass(frozen=True)
class StoreResult(Message):
    TAG = STORE_RESULT
    accepted: bool = True

    def body(self):
        return bytes([1 if self.accepted else 0])


@dataclass(frozen=True)
class GetRecord(Message):
    TAG = GET
    key: bytes = b""

    def body(self):
        return self.key


@dataclass(frozen=True)
class GetResult(Message):
    TAG = GET_RESULT
    value: bytes = None  # None means not found
    contacts: tuple = ()

    def body(self):
        if self.value is None:
            head = b"\x00"
        else:
            head = b"\x01" + struct.pack(">H", len(self.value)) + self.value
        return head + struct.pack(">H", len(self.contacts)) + b"".join(
            _pack_contact(c) for c in self.contacts)


@dataclass(frozen=True)
class Want(Message):
    TAG = WANT
    cid: Cid = None
    priority: int = 0

    def body(self):
        return self.cid.to_bytes() + bytes([self.priority & 0xFF])


@dataclass(frozen=True)
class Block(Message):
    TAG = BLOCK
    cid: Cid = None
    data: bytes = b""

    def body(self):
        return self.cid.to_bytes() + struct.pack(">I", len(self.data)) + self.data


@dataclass(frozen=True)
class DontHave(Message):
    TAG = DONT_HAVE
    cid: Cid = None

    def body(self):
        return self.cid.to_bytes()


@dataclass(frozen=True)
class LedgerSubmit(Message):
    TAG = LEDGER_SUBMIT
    entry_bytes: bytes = b""

    def body(self):
        return struct.pack(">I", len(self.entry_bytes)) + self.entry_bytes


@dataclass(frozen=True)
class LedgerAccepted(Message):
    TAG = LEDGER_ACCEPTED
    accepted: bool = True
    reason: str = ""

    def body(self):
        return bytes([1 if self.accepted else 0]) + _pack_str(self.reason)


@dataclass(frozen=True)
class LedgerStatus(Message):
    TAG = LEDGER_STATUS
    entry_hash: bytes = b""

    def body(self):
        return self.entry_hash


@dataclass(frozen=True)
class LedgerState(Message):
    TAG = LEDGER_STATE
    committed: bool = False
    height: int = 0

    def body(self):
        return bytes([1 if self.committed else 0]) + struct.pack(">Q", self.height)


@dataclass(frozen=True)
class LedgerFetch(Message):
    TAG = LEDGER_FETCH
    from_height: int = 0

    def body(self):
        return struct.pack(">Q", self.from_height)


@dataclass(frozen=True)
class LedgerBlocks(Message):
    TAG = LEDGER_BLOCKS
    blocks: tuple = ()  # encoded block byte strings
    tip_height: int = 0

    def body(self):
        parts = [struct.pack(">Q", self.tip_height), struct.pack(">I", len(self.blocks))]
        for raw in self.blocks:
            parts.append(struct.pack(">I", len(raw)) + raw)
        return b"".join(parts)


@dataclass(frozen=True)
class Error(Message):
    TAG = ERROR
    reason: str = ""

    def body(self):
        return _pack_str(self.reason)


def decode_message(raw: bytes) -> Message:
    r = _Reader(raw)
    tag = r.u8()
    sender_id = r.take(32)
    sender_addr = r.string()

    if tag == PING:
        msg = Ping(sender_id, sender_addr)
    elif tag == PONG:
        msg = Pong(sender_id, sender_addr)
    elif tag == FIND_NODE:
        msg = FindNode(sender_id, sender_addr, r.take(32))
    elif tag == NODES:
        msg = Nodes(sender_id, sender_addr,
                    tuple(_read_contact(r) for _ in range(r.u16())))
    elif tag == FIND_PROVIDERS:
        msg = FindProviders(sender_id, sender_addr, r.take(32))
    elif tag == PROVIDERS:
        contacts = tuple(_read_contact(r) for _ in range(r.u16()))
        records = tuple(_read_provider(r) for _ in range(r.u16()))
        msg = Providers(sender_id, sender_addr, contacts, records)
    elif tag == ADD_PROVIDER:
        msg = AddProvider(sender_id, sender_addr, _read_provider(r))
    elif tag == PROVIDER_ACK:
        msg = ProviderAck(sender_id, sender_addr, r.u8() == 1)
    elif tag == STORE:
        key = r.take(32)
        msg = StoreRecord(sender_id, sender_addr, key, r.take(r.u16()))
    elif tag == STORE_RESULT:
        msg = StoreResult(sender_id, sender_addr, r.u8() == 1)
    elif tag == GET:
        msg = GetRecord(sender_id, sender_addr, r.take(32))
    elif tag == GET_RESULT:
        value = r.take(r.u16()) if r.u8() == 1 else None
        contacts = tuple(_read_contact(r) for _ in range(r.u16()))
        msg = GetResult(sender_id, sender_addr, value, contacts)
    elif tag == WANT:
        msg = Want(sender_id, sender_addr, r.cid(), r.u8())
    elif tag == BLOCK:
        cid = r.cid()
        msg = Block(sender_id, sender_addr, cid, r.take(r.u32()))
    elif tag == DONT_HAVE:
        msg = DontHave(sender_id, sender_addr, r.cid())
    elif tag == LEDGER_SUBMIT:
        msg = LedgerSubmit(sender_id, sender_addr, r.take(r.u32()))
    elif tag == LEDGER_ACCEPTED:
        msg = LedgerAccepted(sender_id, sender_addr, r.u8() == 1, r.string())
    elif tag == LEDGER_STATUS:
        msg = LedgerStatus(sender_id, sender_addr, r.take(32))
    elif tag == LEDGER_STATE:
        msg = LedgerState(sender_id, sender_addr, r.u8() == 1, r.u64())
    elif tag == LEDGER_FETCH:
        msg = LedgerFetch(sender_id, sender_addr, r.u64())
    elif tag == LEDGER_BLOCKS:
        tip = r.u64()
        blocks = tuple(r.take(r.u32()) for _ in range(r.u32()))
        msg = LedgerBlocks(sender_id, sender_addr, blocks, tip)
    elif tag == ERROR:
        msg = Error(sender_id, sender_addr, r.string())
    else:
        raise WireError(f"unknown message tag {tag:#04x}")
    r.done()
    return msg
