"""Deterministic discrete-event network simulator hosting in-process nodes.

A single event heap ordered by (virtual ms, creation seq) drives
everything: message deliveries, timers, and churn. Virtual time advances
only when events are processed, so results are independent of host
speed, and every random draw comes from per-node streams derived from
the global seed -- equal seeds give byte-identical traces.

Blocking node operations (lookups, fetches, commit waits) run the loop
re-entrantly while they wait, which keeps node code synchronous; peer
message handlers answer from local state only and never re-enter.

Messages travel as encoded wire bytes, exercising the same codecs as
real TCP. Latency and drop decisions are drawn from the sending side's
stream when the message is sent; dropped messages still consume their
latency before vanishing.
"""

from __future__ import annotations

import hashlib
import heapq
import random
from dataclasses import dataclass, field

from . import wire
from .dht import DhtConfig, distance
from .errors import ScriptError
from .exchange import ExchangeConfig
from .identity import NodeIdentity
from .node import Node, NodeConfig, ROLE_PEER, ROLE_REGISTRAR
from .store import MemoryBlockStore
from .wire import Contact

SIM_EPOCH = 1_700_000_000  # virtual unix time at sim start

JOIN = "join"
LEAVE = "leave"


@dataclass(frozen=True)
class ChurnAction:
    at_s: float
    node: int
    action: str  # join | leave


@dataclass
class SimConfig:
    seed: int = 0
    node_count: int = 8
    latency_ms: tuple[int, int] = (10, 50)
    drop_probability: float = 0.0
    churn: tuple[ChurnAction, ...] = ()
    duration_s: float = 86400.0


def sim_node_config() -> NodeConfig:
    """Desk-scale defaults: sim-second timeouts per the protocol knobs."""
    return NodeConfig(
        chunk_size=65536,
        difficulty=8,
        flush_interval_s=1.0,
        commit_poll_s=0.2,
        commit_wait_s=30.0,
        dht=DhtConfig(rpc_timeout_s=2.0, ping_timeout_s=1.0),
        exchange=ExchangeConfig(want_timeout_s=5.0),
    )


def _derive(seed: int, tag: bytes, index: int) -> bytes:
    return hashlib.sha256(
        seed.to_bytes(8, "big") + tag + index.to_bytes(4, "big")).digest()


@dataclass
class _Metrics:
    messages_sent: int = 0
    delivered: int = 0
    dropped: int = 0
    bytes_by_node: dict = field(default_factory=dict)

    def count_send(self, idx: int, nbytes: int) -> None:
        self.messages_sent += 1
        self.bytes_by_node[idx] = self.bytes_by_node.get(idx, 0) + nbytes


class SimRuntime:
    """The runtime interface one simulated node sees."""

    def __init__(self, net: "SimNet", index: int):
        self.net = net
        self.index = index
        self.listen_addr = f"sim:{index}"

    def now(self) -> float:
        return SIM_EPOCH + self.net.now_ms / 1000.0

    def sleep(self, seconds: float) -> None:
        fired = [False]
        self.net.schedule(seconds * 1000.0, lambda: fired.__setitem__(0, True))
        while not fired[0]:
            self.net.step()

    def call_later(self, delay_s: float, fn) -> None:
        self.net.schedule(delay_s * 1000.0, fn)

    def request(self, addr: str, msg, timeout_s: float):
        return self.request_many([(addr, msg)], timeout_s)[0]

    def request_many(self, batch, timeout_s: float):
        results = [None] * len(batch)
        done = [False] * len(batch)
        for i, (addr, msg) in enumerate(batch):
            self.net.send_request(self.index, addr, msg.encode(),
                                  self._settler(results, done, i))
            self.net.schedule(timeout_s * 1000.0,
                              lambda i=i: done.__setitem__(i, True))
        while not all(done):
            self.net.step()
        return results

    @staticmethod
    def _settler(results, done, i):
        def settle(msg):
            if not done[i]:
                results[i] = msg
                done[i] = True
        return settle


class SimNode:
    """Bookkeeping wrapper around one in-process node."""

    def __init__(self, index: int, node: Node, rng: random.Random):
        self.index = index
        self.node = node
        self.rng = rng
        self.online = True
        self.group = 0


class SimNet:
    def __init__(self, cfg: SimConfig, node_config: NodeConfig = None,
                 populate: str = "bootstrap"):
        self.cfg = cfg
        self.now_ms = 0
        self._seq = 0
        self._heap: list = []
        self.metrics = _Metrics()
        self.nodes: list[SimNode] = []
        base = node_config or sim_node_config()
        for i in range(cfg.node_count):
            runtime = SimRuntime(self, i)
            identity = NodeIdentity.from_seed(_derive(cfg.seed, b"identity", i))
            rng = random.Random(
                int.from_bytes(_derive(cfg.seed, b"rng", i)[:8], "big"))
            role = ROLE_REGISTRAR if i == 0 else ROLE_PEER
            node = Node(identity, runtime, MemoryBlockStore(), base,
                        role=role, registrar_addr="sim:0")
            self.nodes.append(SimNode(i, node, rng))
        for action in sorted(cfg.churn, key=lambda a: (a.at_s, a.node)):
            self.schedule_at(action.at_s * 1000.0,
                             lambda a=action: self._apply_churn(a))
        if populate == "mesh":
            self._populate_mesh()
        elif populate == "bootstrap":
            self._populate_bootstrap()
        elif populate != "none":
            raise ValueError(f"unknown populate mode {populate}")

    # ------------------------------------------------------------- event loop

    def schedule(self, delay_ms: float, fn) -> None:
        self.schedule_at(self.now_ms + delay_ms, fn)

    def schedule_at(self, at_ms: float, fn) -> None:
        self._seq += 1
        heapq.heappush(self._heap, (int(round(at_ms)), self._seq, fn))

    def step(self) -> None:
        if not self._heap:
            raise RuntimeError("event starvation: waiting with an empty heap")
        at, _, fn = heapq.heappop(self._heap)
        if at > self.now_ms:
            self.now_ms = at
        fn()

    def run_until(self, at_ms: float) -> None:
        at_ms = int(round(at_ms))
        while self._heap and self._heap[0][0] <= at_ms:
            self.step()
        if at_ms > self.now_ms:
            self.now_ms = at_ms

    def drain(self) -> None:
        while self._heap:
            self.step()

    # ------------------------------------------------------------- transport

    def _index_of(self, addr: str) -> int:
        if not addr.startswith("sim:"):
            raise ValueError(f"not a simulator address: {addr}")
        return int(addr[4:])

    def _blocked(self, src: int, dst: int) -> bool:
        a, b = self.nodes[src], self.nodes[dst]
        return (not a.online) or (not b.online) or a.group != b.group

    def send_request(self, src: int, addr: str, raw: bytes, deliver_reply) -> None:
        dst = self._index_of(addr)
        rng = self.nodes[src].rng
        latency = rng.randint(*self.cfg.latency_ms)
        dropped = rng.random() < self.cfg.drop_probability
        self.metrics.count_send(src, len(raw))
        self.schedule(latency, lambda: self._deliver_request(
            src, dst, raw, dropped, deliver_reply))

    def _deliver_request(self, src: int, dst: int, raw: bytes, dropped: bool,
                         deliver_reply) -> None:
        if dropped or self._blocked(src, dst):
            self.metrics.dropped += 1
            return
        self.metrics.delivered += 1
        resp_raw = self.nodes[dst].node.handle_peer_message(raw)
        rng = self.nodes[dst].rng
        latency = rng.randint(*self.cfg.latency_ms)
        resp_dropped = rng.random() < self.cfg.drop_probability
        self.metrics.count_send(dst, len(resp_raw))
        self.schedule(latency, lambda: self._deliver_reply(
            dst, src, resp_raw, resp_dropped, deliver_reply))

    def _deliver_reply(self, src: int, dst: int, raw: bytes, dropped: bool,
                       deliver_reply) -> None:
        if dropped or self._blocked(src, dst):
            self.metrics.dropped += 1
            return
        self.metrics.delivered += 1
        deliver_reply(wire.decode_message(raw))

    # ------------------------------------------------------------- population

    def contact(self, index: int) -> Contact:
        node = self.nodes[index].node
        return Contact(node.node_id, f"sim:{index}")

    def _populate_mesh(self) -> None:
        """Omniscient seeding: every node observes every other node."""
        for a in self.nodes:
            for b in self.nodes:
                if a.index != b.index:
                    a.node.dht.observe(self.contact(b.index))

    def _populate_bootstrap(self) -> None:
        """Realistic joins: every node enters through node 0."""
        for sim_node in self.nodes[1:]:
            sim_node.node.join([self.contact(0)])

    # ------------------------------------------------------------- churn etc.

    def _apply_churn(self, action: ChurnAction) -> None:
        sim_node = self.nodes[action.node]
        if action.action == LEAVE:
            sim_node.online = False
        elif action.action == JOIN:
            sim_node.online = True
            for other in self.nodes:
                if other.index != action.node and other.online:
                    sim_node.node.join([self.contact(other.index)])
                    break
        else:
            raise ScriptError(f"unknown churn action {action.action}")

    def partition(self, groups: list[list[int]]) -> None:
        for gid, members in enumerate(groups):
            for idx in members:
                self.nodes[idx].group = gid

    def heal(self) -> None:
        for sim_node in self.nodes:
            sim_node.group = 0

    def set_corrupt(self, index: int, on: bool = True) -> None:
        self.nodes[index].node.corrupt_served_blocks = on

    # ------------------------------------------------------------- oracle

    def oracle(self) -> "GlobalOracle":
        return GlobalOracle(self)


class GlobalOracle:
    """Omniscient views for tests; simulated nodes never see this."""

    def __init__(self, net: SimNet):
        self.net = net

    def members(self, online_only: bool = True) -> list[int]:
        return [n.index for n in self.net.nodes if n.online or not online_only]

    def k_closest(self, target: bytes, k: int, exclude: int = None) -> list[bytes]:
        ids = [n.node.node_id for n in self.net.nodes
               if n.online and n.index != exclude]
        ids.sort(key=lambda i: (distance(i, target), i))
        return ids[:k]

    def block_locations(self, cid) -> list[int]:
        return [n.index for n in self.net.nodes if n.node.store.has(cid)]

    def provider_indexes(self, key: bytes) -> list[int]:
        """Nodes holding a live provider record for key right now."""
        now = SIM_EPOCH + self.net.now_ms / 1000.0
        return [n.index for n in self.net.nodes
                if n.node.dht.providers.get(key, now)]

    def store_cids(self, index: int):
        return self.net.nodes[index].node.store.cids()
