"""Kademlia-style DHT: XOR routing tables, iterative lookups, records.

Node ids are 32-byte hashes of public keys; distance is the XOR of ids
read as 256-bit big-endian integers. Buckets hold up to k contacts by
the highest set bit of their distance to the table owner; eviction only
happens when the least-recently-seen contact fails a liveness probe.

Lookup clients run parallel query rounds (alpha in flight) against a
transport runtime; server-side handlers live in the node module and
answer purely from local state.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

from . import wire
from .errors import NoPeers, NotFound, ValueTooLarge
from .wire import Contact, ProviderRecord

K = 20
ALPHA = 3
RECORD_TTL_S = 24 * 3600
REPUBLISH_S = 12 * 3600
BUCKET_COUNT = 256


def distance(a: bytes, b: bytes) -> int:
    return int.from_bytes(a, "big") ^ int.from_bytes(b, "big")


def bucket_index(owner: bytes, other: bytes) -> int:
    """Highest set bit of the XOR distance; -1 for the owner itself."""
    return distance(owner, other).bit_length() - 1


@dataclass
class DhtConfig:
    k: int = K
    alpha: int = ALPHA
    record_ttl_s: int = RECORD_TTL_S
    republish_s: int = REPUBLISH_S
    rpc_timeout_s: float = 3.0
    ping_timeout_s: float = 2.0


@dataclass
class _Entry:
    contact: Contact
    last_seen: float


class RoutingTable:
    """256 k-buckets ordered least-recently-seen first."""

    def __init__(self, owner: bytes, k: int = K):
        self.owner = owner
        self.k = k
        self.buckets: list[list[_Entry]] = [[] for _ in range(BUCKET_COUNT)]

    def __len__(self):
        return sum(len(b) for b in self.buckets)

    def contacts(self) -> list[Contact]:
        return [e.contact for bucket in self.buckets for e in bucket]

    def observe(self, contact: Contact, now: float, probe=None) -> None:
        """Record contact activity.

        probe, when given, is called with the least-recently-seen contact
        of a full bucket and must return True if it answered a liveness
        check; without probe a newcomer to a full bucket is dropped.
        """
        if contact.node_id == self.owner:
            return
        idx = bucket_index(self.owner, contact.node_id)
        bucket = self.buckets[idx]
        for i, entry in enumerate(bucket):
            if entry.contact.node_id == contact.node_id:
                bucket.pop(i)
                bucket.append(_Entry(contact, now))
                return
        if len(bucket) < self.k:
            bucket.append(_Entry(contact, now))
            return
        if probe is None:
            return
        oldest = bucket[0]
        if probe(oldest.contact):
            bucket.pop(0)
            bucket.append(_Entry(oldest.contact, now))
        else:
            bucket.pop(0)
            bucket.append(_Entry(contact, now))

    def remove(self, node_id: bytes) -> None:
        idx = bucket_index(self.owner, node_id)
        if idx < 0:
            return
        self.buckets[idx] = [e for e in self.buckets[idx]
                             if e.contact.node_id != node_id]

    def find_closest(self, target: bytes, count: int) -> list[Contact]:
        """The <= count contacts nearest target, ascending by XOR distance."""
        everyone = self.contacts()
        everyone.sort(key=lambda c: (distance(c.node_id, target), c.node_id))
        return everyone[:count]


class ProviderStore:
    """Local provider records with expiry; never returns expired records."""

    def __init__(self):
        self._records: dict[bytes, dict[bytes, ProviderRecord]] = {}

    def add(self, record: ProviderRecord, now: float) -> None:
        if record.expires_at <= now:
            return
        by_provider = self._records.setdefault(record.key, {})
        existing = by_provider.get(record.provider)
        if existing is None or record.expires_at >= existing.expires_at:
            by_provider[record.provider] = record

    def get(self, key: bytes, now: float) -> list[ProviderRecord]:
        live = [r for r in self._records.get(key, {}).values()
                if r.expires_at > now]
        return sorted(live, key=lambda r: r.provider)


class RecordStore:
    """Signed key/value records; the validator gates every put."""

    def __init__(self, validator):
        self._values: dict[bytes, bytes] = {}
        self.validator = validator

    def put(self, key: bytes, value: bytes, now: float) -> bool:
        if not self.validator(key, value, int(now), self._values.get(key)):
            return False
        self._values[key] = value
        return True

    def get(self, key: bytes) -> bytes | None:
        return self._values.get(key)


class LookupStats:
    """Rolling record of lookup round counts, for the hop metrics."""

    def __init__(self):
        self.rounds: list[int] = []

    def record(self, rounds: int) -> None:
        self.rounds.append(rounds)


class DhtEngine:
    """Client-side DHT operations for one node, over an abstract runtime.

    The runtime supplies now()/request()/request_many(); all server
    handling stays in the node, so engine calls never nest network I/O
    inside message handlers.
    """

    def __init__(self, runtime, identity_id: bytes, listen_addr: str,
                 config: DhtConfig = None, sequencer=None):
        self.runtime = runtime
        self.node_id = identity_id
        self.addr = listen_addr
        self.config = config or DhtConfig()
        self.table = RoutingTable(identity_id, self.config.k)
        self.providers = ProviderStore()
        self.records: RecordStore = None  # wired by the node
        self.stats = LookupStats()
        # sequencer ranks stored record values; higher wins on get
        self.sequencer = sequencer or (lambda value: 0)

    # -- table maintenance -------------------------------------------------

    def observe(self, contact: Contact, allow_probe: bool = False) -> None:
        probe = self._probe if allow_probe else None
        self.table.observe(contact, self.runtime.now(), probe)

    def _probe(self, contact: Contact) -> bool:
        # single PING with one retry, per the eviction rule
        for _ in range(2):
            resp = self.runtime.request(
                contact.addr, wire.Ping(self.node_id, self.addr),
                self.config.ping_timeout_s)
            if isinstance(resp, wire.Pong):
                return True
        return False

    # -- iterative lookups ---------------------------------------------------

    def iterative_find_node(self, target: bytes):
        """Converge on the k closest contacts to target.

        Returns (contacts ascending by distance, query rounds). Raises
        NoPeers when the routing table is empty.
        """
        contacts, rounds, _ = self._iterative(target, collect_providers=False)
        self.stats.record(rounds)
        return contacts, rounds

    def _iterative(self, target: bytes, collect_providers: bool,
                   get_key: bytes = None):
        cfg = self.config
        seeds = self.table.find_closest(target, cfg.k)
        if not seeds:
            raise NoPeers("routing table is empty")
        shortlist: dict[bytes, Contact] = {c.node_id: c for c in seeds}
        queried: set[bytes] = set()
        failed: set[bytes] = set()
        collected: list = []
        rounds = 0
        improved = True

        def ranked():
            alive = [c for c in shortlist.values() if c.node_id not in failed]
            alive.sort(key=lambda c: (distance(c.node_id, target), c.node_id))
            return alive[:cfg.k]

        def best_distance():
            top = ranked()
            return distance(top[0].node_id, target) if top else None

        while True:
            candidates = [c for c in ranked() if c.node_id not in queried]
            if not candidates:
                break
            # alpha-limited while improving; one wide round when stalled
            batch = candidates[:cfg.alpha] if improved else candidates
            before = best_distance()
            if collect_providers:
                msgs = [(c.addr, wire.FindProviders(self.node_id, self.addr, target))
                        for c in batch]
            elif get_key is not None:
                msgs = [(c.addr, wire.GetRecord(self.node_id, self.addr, get_key))
                        for c in batch]
            else:
                msgs = [(c.addr, wire.FindNode(self.node_id, self.addr, target))
                        for c in batch]
            responses = self.runtime.request_many(msgs, cfg.rpc_timeout_s)
            rounds += 1
            for contact, resp in zip(batch, responses):
                queried.add(contact.node_id)
                if resp is None:
                    failed.add(contact.node_id)
                    continue
                self.observe(resp.contact(), allow_probe=True)
                learned = getattr(resp, "contacts", ())
                if collect_providers and isinstance(resp, wire.Providers):
                    collected.extend(resp.records)
                elif get_key is not None and isinstance(resp, wire.GetResult):
                    if resp.value is not None:
                        collected.append(resp.value)
                for c in learned:
                    if c.node_id != self.node_id and c.node_id not in shortlist:
                        shortlist[c.node_id] = c
            after = best_distance()
            improved = before is not None and after is not None and after < before
        return ranked(), rounds, collected

    # -- provider records ----------------------------------------------------

    def _storage_targets(self, key: bytes):
        """k closest storage candidates for key, always considering self."""
        try:
            found, _ = self.iterative_find_node(key)
        except NoPeers:
            found = []
        candidates = {c.node_id: c for c in found}
        candidates[self.node_id] = Contact(self.node_id, self.addr)
        ranked = sorted(candidates.values(),
                        key=lambda c: (distance(c.node_id, key), c.node_id))
        return ranked[:self.config.k]

    def provide(self, key: bytes, ttl_s: int = None) -> int:
        """Announce this node as a provider on the k closest nodes.

        Returns the number of nodes (possibly including self) now holding
        the record.
        """
        ttl = ttl_s if ttl_s is not None else self.config.record_ttl_s
        record = ProviderRecord(key, self.node_id, self.addr,
                                int(self.runtime.now()) + ttl)
        targets = self._storage_targets(key)
        stored = 0
        remote = [c for c in targets if c.node_id != self.node_id]
        if remote:
            msgs = [(c.addr, wire.AddProvider(self.node_id, self.addr, record))
                    for c in remote]
            for resp in self.runtime.request_many(msgs, self.config.rpc_timeout_s):
                if isinstance(resp, wire.ProviderAck) and resp.accepted:
                    stored += 1
        if any(c.node_id == self.node_id for c in targets):
            self.providers.add(record, self.runtime.now())
            stored += 1
        return stored

    def find_providers(self, key: bytes) -> list[ProviderRecord]:
        """Collect provider records along an iterative lookup toward key.

        Deduplicated by provider id; expired records are filtered. An
        unknown key yields an empty list, not an error.
        """
        now = self.runtime.now()
        collected = list(self.providers.get(key, now))
        if len(self.table):
            _, _, found = self._iterative(key, collect_providers=True)
            collected.extend(found)
        best: dict[bytes, ProviderRecord] = {}
        for record in collected:
            if record.key != key or record.expires_at <= now:
                continue
            prev = best.get(record.provider)
            if prev is None or record.expires_at > prev.expires_at:
                best[record.provider] = record
        return sorted(best.values(), key=lambda r: r.provider)

    # -- signed records -------------------------------------------------------

    def store_record(self, key: bytes, value: bytes) -> int:
        """Store a signed value on the k closest nodes; returns acceptances."""
        if len(value) > wire.MAX_RECORD_VALUE:
            raise ValueTooLarge(f"{len(value)} bytes > {wire.MAX_RECORD_VALUE}")
        targets = self._storage_targets(key)
        accepted = 0
        remote = [c for c in targets if c.node_id != self.node_id]
        if remote:
            msgs = [(c.addr, wire.StoreRecord(self.node_id, self.addr, key, value))
                    for c in remote]
            for resp in self.runtime.request_many(msgs, self.config.rpc_timeout_s):
                if isinstance(resp, wire.StoreResult) and resp.accepted:
                    accepted += 1
        if any(c.node_id == self.node_id for c in targets):
            if self.records.put(key, value, self.runtime.now()):
                accepted += 1
        return accepted

    def get_record(self, key: bytes) -> bytes:
        """Fetch the stored value with the highest sequence among responses."""
        values = []
        local = self.records.get(key)
        if local is not None:
            values.append(local)
        if len(self.table):
            _, _, found = self._iterative(key, collect_providers=False, get_key=key)
            values.extend(found)
        if not values:
            raise NotFound(f"no record under key {key.hex()}")
        return max(values, key=self.sequencer)

    # -- bootstrap -------------------------------------------------------------

    def bootstrap(self, peers: list[Contact]) -> None:
        """Seed the table and locate our own neighborhood."""
        for peer in peers:
            if peer.node_id != self.node_id:
                self.observe(peer)
        if len(self.table):
            self.iterative_find_node(self.node_id)


def default_clock() -> float:
    return time.time()
