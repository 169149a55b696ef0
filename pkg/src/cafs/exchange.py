"""Wantlist block exchange: fetch DAGs from several providers at once.

Missing blocks are discovered breadth-first from the root and assigned
to providers round-robin, capped per peer per round. Every received
block must verify against its CID before it is stored or its links are
expanded; peers serving bad bytes are demoted for the session and their
wants reassigned. Per-peer byte counters are observational only.
"""

from __future__ import annotations

import threading
from collections import defaultdict
from dataclasses import dataclass, field

from . import wire
from .cid import Cid
from .dag import decode_node, verify_block
from .errors import Unretrievable
from .wire import Contact

INFLIGHT_CAP = 16
WANT_TIMEOUT_S = 5.0
WANT_RETRIES = 2


@dataclass
class PeerLedger:
    """Byte accounting against one peer; counters never decrease."""

    peer: bytes
    bytes_sent: int = 0
    bytes_received: int = 0


class Wantlist:
    """CIDs currently being requested, with small integer priorities."""

    def __init__(self):
        self._entries: dict[Cid, int] = {}

    def add(self, cid: Cid, priority: int = 0) -> None:
        self._entries.setdefault(cid, priority)

    def remove(self, cid: Cid) -> None:
        self._entries.pop(cid, None)

    def __contains__(self, cid: Cid) -> bool:
        return cid in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def entries(self) -> list[tuple[Cid, int]]:
        return list(self._entries.items())


@dataclass
class ExchangeConfig:
    inflight_cap: int = INFLIGHT_CAP
    want_timeout_s: float = WANT_TIMEOUT_S
    retries: int = WANT_RETRIES


@dataclass
class _WantState:
    priority: int
    attempts: dict = field(default_factory=lambda: defaultdict(int))
    refused: set = field(default_factory=set)  # providers that sent DONT_HAVE


class Exchange:
    """One block-exchange engine per node."""

    def __init__(self, runtime, node_id: bytes, addr: str, store,
                 config: ExchangeConfig = None):
        self.runtime = runtime
        self.node_id = node_id
        self.addr = addr
        self.store = store
        self.config = config or ExchangeConfig()
        self.ledgers: dict[bytes, PeerLedger] = {}
        self.wantlist = Wantlist()
        self.invalid_blocks: list[tuple[bytes, Cid]] = []  # (peer, cid) events
        self._root_locks: dict[Cid, threading.Lock] = {}
        self._locks_guard = threading.Lock()

    def ledger_for(self, peer: bytes) -> PeerLedger:
        ledger = self.ledgers.get(peer)
        if ledger is None:
            ledger = self.ledgers[peer] = PeerLedger(peer)
        return ledger

    # -- server side --------------------------------------------------------

    def serve_want(self, requester: bytes, cid: Cid):
        """Answer one want from the local store; absent -> DONT_HAVE."""
        if self.store.has(cid):
            data = self.store.get(cid)
            self.ledger_for(requester).bytes_sent += len(data)
            return wire.Block(self.node_id, self.addr, cid, data)
        return wire.DontHave(self.node_id, self.addr, cid)

    # -- client side --------------------------------------------------------

    def fetch_dag(self, root: Cid, providers: list[Contact]) -> None:
        """Fetch every block reachable from root into the local store.

        Raises Unretrievable(cid) once every provider has failed, refused,
        or been demoted for some still-missing block.
        """
        with self._locks_guard:
            lock = self._root_locks.setdefault(root, threading.Lock())
        with lock:
            self._fetch(root, providers)

    def _fetch(self, root: Cid, providers: list[Contact]) -> None:
        if self._expand_local(root):
            return  # whole DAG already present; zero network messages
        if not providers:
            raise Unretrievable(root)
        provider_list: list[Contact] = []
        seen = set()
        for p in providers:
            if p.node_id not in seen and p.node_id != self.node_id:
                seen.add(p.node_id)
                provider_list.append(p)
        demoted: set[bytes] = set()
        states: dict[Cid, _WantState] = {}
        if not self.store.has(root):
            states[root] = _WantState(0)
            self.wantlist.add(root, 0)
        else:
            for cid, depth in self._missing_frontier(root):
                states[cid] = _WantState(depth)
                self.wantlist.add(cid, depth)
        rr = 0
        cfg = self.config
        while states:
            assignments: list[tuple[Cid, Contact]] = []
            load: dict[bytes, int] = defaultdict(int)
            for cid, want in list(states.items()):
                chosen = None
                for step in range(len(provider_list)):
                    cand = provider_list[(rr + step) % len(provider_list)]
                    if cand.node_id in demoted or cand.node_id in want.refused:
                        continue
                    if want.attempts[cand.node_id] > cfg.retries:
                        continue
                    if load[cand.node_id] >= cfg.inflight_cap:
                        continue
                    chosen = cand
                    rr = (rr + step + 1) % len(provider_list)
                    break
                if chosen is None:
                    exhausted = all(
                        p.node_id in demoted or p.node_id in want.refused
                        or want.attempts[p.node_id] > cfg.retries
                        for p in provider_list)
                    if exhausted:
                        self.wantlist.remove(cid)
                        raise Unretrievable(cid)
                    continue  # capped out this round; retried next round
                load[chosen.node_id] += 1
                assignments.append((cid, chosen))
            if not assignments:
                # every pending want was cap-blocked by a peer that is now
                # saturated; with cap >= 1 this cannot happen, guard anyway
                raise Unretrievable(next(iter(states)))
            msgs = [(peer.addr,
                     wire.Want(self.node_id, self.addr, cid, min(states[cid].priority, 255)))
                    for cid, peer in assignments]
            responses = self.runtime.request_many(msgs, cfg.want_timeout_s)
            for (cid, peer), resp in zip(assignments, responses):
                want = states.get(cid)
                if want is None:
                    continue
                if isinstance(resp, wire.Block) and resp.cid == cid:
                    if verify_block(cid, resp.data):
                        self.store.put(resp.data)
                        self.ledger_for(peer.node_id).bytes_received += len(resp.data)
                        del states[cid]
                        self.wantlist.remove(cid)
                        for child_cid, depth in self._expand_links(resp.data, want.priority):
                            if child_cid not in states:
                                states[child_cid] = _WantState(depth)
                                self.wantlist.add(child_cid, depth)
                    else:
                        self.invalid_blocks.append((peer.node_id, cid))
                        demoted.add(peer.node_id)
                elif isinstance(resp, wire.DontHave) and resp.cid == cid:
                    want.refused.add(peer.node_id)
                else:
                    want.attempts[peer.node_id] += 1

    def _expand_links(self, data: bytes, depth: int):
        node = decode_node(data)
        out = []
        if not node.is_leaf:
            for link in node.links:
                if not self.store.has(link.child):
                    out.append((link.child, min(depth + 1, 255)))
        return out

    def _missing_frontier(self, root: Cid):
        """Missing (cid, depth) pairs reachable through locally-present nodes."""
        out = []
        stack = [(root, 0)]
        visited = set()
        while stack:
            cid, depth = stack.pop()
            if cid in visited:
                continue
            visited.add(cid)
            if not self.store.has(cid):
                out.append((cid, depth))
                continue
            node = decode_node(self.store.get(cid))
            if not node.is_leaf:
                for link in reversed(node.links):
                    stack.append((link.child, depth + 1))
        return out

    def _expand_local(self, root: Cid) -> bool:
        return not self._missing_frontier(root)
