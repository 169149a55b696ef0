"""Node composition: identity, flows, and the peer-protocol server side.

A node ties together the block store, DHT engine, exchange engine, the
metadata chain, and naming. The same class runs inside the deterministic
simulator and the real TCP daemon; all environment differences live in
the runtime object (now/sleep/call_later/request/request_many).

Ledger model: one registrar node mines; peers submit entries to it over
the peer protocol and replicate committed blocks by pulling anything
above their local tip (on join, and before metadata lookups).
"""

from __future__ import annotations

import hashlib
import logging
import mimetypes
import threading
from dataclasses import dataclass, field
from typing import Optional

from . import dag, ledger, wire
from .cid import Cid, cid_to_text
from .dht import DhtConfig, DhtEngine, RecordStore
from .errors import (
    CafsError,
    DuplicatePending,
    LedgerValidationFailed,
    NotFound,
    SameContent,
    Unretrievable,
)
from .exchange import Exchange, ExchangeConfig
from .identity import NodeIdentity
from .ledger import Chain, ChainFile, MetadataEntry, PendingPool, mine_block
from .naming import NameSession, decode_record, validate_stored_record
from .store import MemoryBlockStore
from .wire import Contact

logger = logging.getLogger(__name__)

ROLE_REGISTRAR = "registrar"
ROLE_PEER = "peer"

_MAGIC_TYPES = [
    (b"\x89PNG\r\n\x1a\n", "image/png"),
    (b"\xff\xd8\xff", "image/jpeg"),
    (b"GIF87a", "image/gif"),
    (b"GIF89a", "image/gif"),
    (b"%PDF-", "application/pdf"),
    (b"PK\x03\x04", "application/zip"),
    (b"\x1f\x8b", "application/gzip"),
]


def sniff_file_type(name: Optional[str], head: bytes) -> str:
    """Extension map first, magic bytes second, octet-stream default."""
    if name:
        guessed, _ = mimetypes.guess_type(name)
        if guessed:
            return guessed
    for magic, mime in _MAGIC_TYPES:
        if head.startswith(magic):
            return mime
    if head:
        try:
            head.decode("utf-8")
            return "text/plain"
        except UnicodeDecodeError:
            pass
    return "application/octet-stream"


STATUS_VERIFIED = "Verified"
STATUS_TAMPERED = "Tampered"
STATUS_UNKNOWN = "UnknownToLedger"


@dataclass
class VerifyReport:
    cid: Cid
    status: str
    ledger_entries: list
    detail: str

    @property
    def verified(self) -> bool:
        return self.status == STATUS_VERIFIED

    def to_dict(self) -> dict:
        return {
            "cid": cid_to_text(self.cid),
            "status": self.status,
            "detail": self.detail,
            "entries": [
                {
                    "height": height,
                    "cid": cid_to_text(e.file_cid),
                    "created_at": e.created_at,
                    "accessed_at": e.accessed_at,
                    "size_bytes": e.size_bytes,
                    "file_type": e.file_type,
                    "author": e.author,
                    "modified_cid": cid_to_text(e.modified_cid) if e.modified_cid else None,
                }
                for height, e in self.ledger_entries
            ],
        }


@dataclass
class NodeConfig:
    chunk_size: int = dag.DEFAULT_CHUNK_SIZE
    max_links: int = dag.DEFAULT_MAX_LINKS
    difficulty: int = 12
    max_entries: int = ledger.MAX_ENTRIES_PER_BLOCK
    flush_interval_s: float = 5.0
    commit_poll_s: float = 0.25
    commit_wait_s: float = 120.0
    name_validity_s: int = 48 * 3600
    provider_ttl_s: int = 24 * 3600
    republish_s: float = 0.0  # 0 disables provider republish
    dht: DhtConfig = field(default_factory=DhtConfig)
    exchange: ExchangeConfig = field(default_factory=ExchangeConfig)


class Node:
    """One participant; runs over either the simulator or TCP runtime."""

    def __init__(self, identity: NodeIdentity, runtime, store,
                 config: NodeConfig = None, *, role: str = ROLE_PEER,
                 registrar_addr: str = None, chain_file: ChainFile = None,
                 name_seq_store=None):
        self.identity = identity
        self.runtime = runtime
        self.store = store
        self.config = config or NodeConfig()
        self.role = role
        self.addr = runtime.listen_addr
        self.registrar_addr = self.addr if role == ROLE_REGISTRAR else registrar_addr
        self.node_id = identity.node_id

        self.dht = DhtEngine(runtime, self.node_id, self.addr, self.config.dht,
                             sequencer=_record_sequence)
        self.dht.records = RecordStore(validate_stored_record)
        self.exchange = Exchange(runtime, self.node_id, self.addr, store,
                                 self.config.exchange)
        self.chain = Chain()
        self.chain_file = chain_file
        if chain_file is not None:
            for block in chain_file.load():
                self.chain.append(block)
        self.pool = PendingPool()
        self.names = NameSession(identity, runtime.now,
                                 self.config.name_validity_s, name_seq_store)
        self.corrupt_served_blocks = False  # fault injection for tests/sim
        self._chain_lock = threading.RLock()
        self._flush_scheduled = False
        self._provided: set[bytes] = set()

    # ---------------------------------------------------------------- serving

    def handle_peer_message(self, raw: bytes) -> bytes:
        """Answer one peer request from local state only.

        Handlers never issue their own network requests, so the
        deterministic simulator can treat them as atomic.
        """
        try:
            msg = wire.decode_message(raw)
        except wire.WireError as exc:
            return wire.Error(self.node_id, self.addr, f"bad message: {exc}").encode()
        if msg.sender_id != self.node_id:
            self.dht.observe(msg.contact(), allow_probe=False)
        reply = self._dispatch(msg)
        return reply.encode()

    def _dispatch(self, msg) -> wire.Message:
        me, addr = self.node_id, self.addr
        now = self.runtime.now()
        if isinstance(msg, wire.Ping):
            return wire.Pong(me, addr)
        if isinstance(msg, wire.FindNode):
            closest = self.dht.table.find_closest(msg.target, self.config.dht.k)
            return wire.Nodes(me, addr, tuple(closest))
        if isinstance(msg, wire.FindProviders):
            closest = self.dht.table.find_closest(msg.key, self.config.dht.k)
            records = self.dht.providers.get(msg.key, now)
            return wire.Providers(me, addr, tuple(closest), tuple(records))
        if isinstance(msg, wire.AddProvider):
            record = msg.record
            accepted = (len(record.key) == 32 and record.expires_at > now)
            if accepted:
                self.dht.providers.add(record, now)
            return wire.ProviderAck(me, addr, accepted)
        if isinstance(msg, wire.StoreRecord):
            ok = self.dht.records.put(msg.key, msg.value, now)
            return wire.StoreResult(me, addr, ok)
        if isinstance(msg, wire.GetRecord):
            value = self.dht.records.get(msg.key)
            if value is not None and not validate_stored_record(
                    msg.key, value, int(now)):
                value = None  # expired or no longer valid; treat as absent
            closest = self.dht.table.find_closest(msg.key, self.config.dht.k)
            return wire.GetResult(me, addr, value, tuple(closest))
        if isinstance(msg, wire.Want):
            reply = self.exchange.serve_want(msg.sender_id, msg.cid)
            if self.corrupt_served_blocks and isinstance(reply, wire.Block):
                flipped = bytearray(reply.data)
                if flipped:
                    flipped[0] ^= 0xFF
                reply = wire.Block(me, addr, reply.cid, bytes(flipped))
            return reply
        if isinstance(msg, wire.LedgerSubmit):
            return self._handle_submit(msg)
        if isinstance(msg, wire.LedgerStatus):
            with self._chain_lock:
                height = self.pool.status(msg.entry_hash)
            if height is None:
                return wire.LedgerState(me, addr, False, 0)
            return wire.LedgerState(me, addr, True, height)
        if isinstance(msg, wire.LedgerFetch):
            with self._chain_lock:
                blocks = tuple(ledger.encode_block(b)
                               for b in self.chain.blocks[msg.from_height:])
                tip = len(self.chain)
            return wire.LedgerBlocks(me, addr, blocks, tip)
        return wire.Error(me, addr, f"unhandled message {type(msg).__name__}")

    def _handle_submit(self, msg: wire.LedgerSubmit) -> wire.Message:
        if self.role != ROLE_REGISTRAR:
            return wire.LedgerAccepted(self.node_id, self.addr, False, "not the registrar")
        try:
            entry, _ = ledger.decode_entry(msg.entry_bytes)
        except LedgerValidationFailed as exc:
            return wire.LedgerAccepted(self.node_id, self.addr, False, str(exc))
        try:
            self._pool_add(entry)
        except DuplicatePending as exc:
            return wire.LedgerAccepted(self.node_id, self.addr, False, f"duplicate: {exc}")
        return wire.LedgerAccepted(self.node_id, self.addr, True, "")

    # ---------------------------------------------------------------- ledger

    def _pool_add(self, entry: MetadataEntry) -> bytes:
        with self._chain_lock:
            ehash = self.pool.add(entry)
            if len(self.pool) >= self.config.max_entries:
                self._mine_now()
            elif not self._flush_scheduled:
                self._flush_scheduled = True
                self.runtime.call_later(self.config.flush_interval_s, self._flush)
        return ehash

    def _flush(self) -> None:
        with self._chain_lock:
            self._flush_scheduled = False
            if len(self.pool):
                self._mine_now()

    def _mine_now(self) -> None:
        entries = self.pool.drain()
        if not entries:
            return
        block = mine_block(entries, self.chain.tip_hash, self.config.difficulty,
                           self.runtime.now, min_timestamp=self.chain.tip_timestamp)
        height = self.chain.append(block)
        if self.chain_file is not None:
            self.chain_file.append(block)
        self.pool.mark_committed(entries, height)

    def append_entry(self, entry: MetadataEntry) -> int:
        """Queue an entry for mining; blocks until its block commits."""
        if self.role == ROLE_REGISTRAR:
            ehash = self._pool_add(entry)
            return self._await_commit_local(ehash)
        if not self.registrar_addr:
            raise CafsError("no registrar configured")
        raw = ledger.encode_entry(entry)
        resp = self.runtime.request(
            self.registrar_addr,
            wire.LedgerSubmit(self.node_id, self.addr, raw),
            self.config.dht.rpc_timeout_s)
        if not isinstance(resp, wire.LedgerAccepted):
            raise CafsError("registrar unreachable")
        if not resp.accepted:
            if resp.reason.startswith("duplicate"):
                raise DuplicatePending(resp.reason)
            raise CafsError(f"registrar rejected entry: {resp.reason}")
        ehash = hashlib.sha256(raw).digest()
        deadline = self.runtime.now() + self.config.commit_wait_s
        while self.runtime.now() < deadline:
            resp = self.runtime.request(
                self.registrar_addr,
                wire.LedgerStatus(self.node_id, self.addr, ehash),
                self.config.dht.rpc_timeout_s)
            if isinstance(resp, wire.LedgerState) and resp.committed:
                self.sync_ledger()
                return resp.height
            self.runtime.sleep(self.config.commit_poll_s)
        raise CafsError("entry was accepted but never committed")

    def _await_commit_local(self, ehash: bytes) -> int:
        deadline = self.runtime.now() + self.config.commit_wait_s
        while self.runtime.now() < deadline:
            with self._chain_lock:
                height = self.pool.status(ehash)
            if height is not None:
                return height
            self.runtime.sleep(self.config.commit_poll_s)
        raise CafsError("pending entry never committed")

    def sync_ledger(self) -> bool:
        """Pull blocks above the local tip from the registrar and validate.

        Returns False when the registrar is unreachable. Raises
        LedgerValidationFailed when the received chain does not validate
        (such a chain is refused entirely).
        """
        if self.role == ROLE_REGISTRAR or not self.registrar_addr:
            return True
        with self._chain_lock:
            from_height = len(self.chain)
        resp = self.runtime.request(
            self.registrar_addr,
            wire.LedgerFetch(self.node_id, self.addr, from_height),
            self.config.dht.rpc_timeout_s)
        if not isinstance(resp, wire.LedgerBlocks):
            return False
        if not resp.blocks:
            return True
        blocks = [ledger.decode_block(raw) for raw in resp.blocks]
        with self._chain_lock:
            self.chain.extend_validated(blocks, self.config.difficulty)
            if self.chain_file is not None:
                for block in blocks:
                    self.chain_file.append(block)
        return True

    def validate_ledger(self):
        with self._chain_lock:
            return self.chain.validate(self.config.difficulty)

    def export_ledger(self) -> list[dict]:
        with self._chain_lock:
            return ledger.export_rows(self.chain)

    # ---------------------------------------------------------------- flows

    def _make_entry(self, root: Cid, size: int, file_type: str,
                    modified: Cid = None) -> MetadataEntry:
        now = int(self.runtime.now())
        return MetadataEntry(
            file_cid=root, created_at=now, accessed_at=now, size_bytes=size,
            file_type=file_type, author=self.identity.fingerprint,
            modified_cid=modified)

    def add_with_metadata(self, source, file_name: str = None) -> tuple[Cid, int]:
        """The upload flow: chunk/store, announce providers, commit metadata."""
        head = source[:64] if isinstance(source, (bytes, bytearray)) else b""
        root, size = dag.add_file(source, self.store,
                                  chunk_size=self.config.chunk_size,
                                  max_links=self.config.max_links)
        if not head:
            for chunk in dag.iter_file(root, self.store):
                head = chunk[:64]
                break
        self.provide(root)
        entry = self._make_entry(root, size, sniff_file_type(file_name, head))
        height = self.append_entry(entry)
        return root, height

    def provide(self, root: Cid) -> int:
        stored = self.dht.provide(root.digest, self.config.provider_ttl_s)
        self._provided.add(root.digest)
        if self.config.republish_s > 0:
            self.runtime.call_later(self.config.republish_s, self._republish)
        return stored

    def _republish(self) -> None:
        for key in sorted(self._provided):
            try:
                self.dht.provide(key, self.config.provider_ttl_s)
            except CafsError:
                pass
        if self.config.republish_s > 0 and self._provided:
            self.runtime.call_later(self.config.republish_s, self._republish)

    def record_modification(self, old_root: Cid, new_bytes) -> tuple[Cid, int]:
        """Register new content as a modification of an existing file."""
        new_root, size = dag.add_file(new_bytes, self.store,
                                      chunk_size=self.config.chunk_size,
                                      max_links=self.config.max_links)
        if new_root == old_root:
            raise SameContent(f"{cid_to_text(new_root)} equals the original")
        self.provide(new_root)
        head = b""
        for chunk in dag.iter_file(new_root, self.store):
            head = chunk[:64]
            break
        entry = self._make_entry(old_root, size, sniff_file_type(None, head),
                                 modified=new_root)
        height = self.append_entry(entry)
        return new_root, height

    def fetch_root(self, root: Cid) -> None:
        """Ensure the full DAG under root is local, fetching if needed."""
        if not dag.missing_descendants(root, self.store):
            return
        records = self.dht.find_providers(root.digest)
        providers = [r.contact() for r in records if r.provider != self.node_id]
        if not providers:
            raise Unretrievable(root)
        self.exchange.fetch_dag(root, providers)

    def get_with_verify(self, root: Cid) -> tuple[bytes, VerifyReport]:
        """The retrieval flow: fetch, reassemble, re-hash, check the ledger.

        Bytes are returned regardless of verification status; callers
        decide what a non-Verified status means for them.
        """
        self.fetch_root(root)
        data = dag.cat_file(root, self.store)
        report = self._verify_content(root, data)
        return data, report

    def verify_cid(self, root: Cid) -> VerifyReport:
        """Verification only; skips network fetch when blocks are local."""
        self.fetch_root(root)
        return self._verify_content(root, dag.cat_file(root, self.store))

    def _verify_content(self, root: Cid, data: bytes) -> VerifyReport:
        recomputed, size = dag.add_file(data, MemoryBlockStore(),
                                        chunk_size=self.config.chunk_size,
                                        max_links=self.config.max_links)
        self.sync_ledger()
        with self._chain_lock:
            entries = self.chain.lookup_metadata(root)
        if recomputed != root:
            return VerifyReport(root, STATUS_TAMPERED, entries,
                                "reassembled content does not hash to the requested CID")
        if not entries:
            return VerifyReport(root, STATUS_UNKNOWN, entries,
                                "no ledger entry references this CID")
        witnesses = [e.size_bytes for _, e in entries
                     if (e.file_cid == root and e.modified_cid is None)
                     or e.modified_cid == root]
        if not witnesses:
            return VerifyReport(root, STATUS_UNKNOWN, entries,
                                "ledger references this CID only as a modification source")
        if size not in witnesses:
            return VerifyReport(root, STATUS_TAMPERED, entries,
                                f"ledger records size {witnesses} but content is {size} bytes")
        return VerifyReport(root, STATUS_VERIFIED, entries,
                            "content hash and recorded size match the ledger")

    # ---------------------------------------------------------------- naming

    def publish_name(self, value: Cid):
        return self.names.publish(value, self.dht)

    def resolve_name(self, name_key: bytes) -> Cid:
        return self.names.resolve(name_key, self.dht)

    # ---------------------------------------------------------------- joining

    def join(self, bootstrap: list[Contact]) -> None:
        """Enter the network: seed the table, locate self, replicate ledger."""
        self.dht.bootstrap(bootstrap)
        self.sync_ledger()


def _record_sequence(value: bytes) -> int:
    try:
        return decode_record(value).sequence
    except Exception:
        return -1


def lookup_latest(entries) -> Optional[MetadataEntry]:
    """The most recent entry by accessed_at (ties: highest height)."""
    best = None
    for height, entry in entries:
        if best is None or (entry.accessed_at, height) >= (best[1].accessed_at, best[0]):
            best = (height, entry)
    return best[1] if best else None
