"""Merkle DAG file storage: chunking, canonical node encoding, assembly.

Files are split into fixed-size chunks stored as leaf nodes; leaves are
grouped ``max_links`` at a time under interior nodes, recursively, until
a single root remains. Node encodings are canonical byte layouts (wire
format, covered by golden-vector tests):

  leaf:     0x00 | u32 data length | data
  interior: 0x01 | u32 link count  | per link: 34-byte CID | u64 subtree size
"""

from __future__ import annotations

import io
import struct
from dataclasses import dataclass, field

from .cid import Cid, cid_of_bytes
from .errors import MalformedNode, MissingBlock, OversizedLeaf, TooManyLinks

DEFAULT_CHUNK_SIZE = 262144  # 256 KiB
DEFAULT_MAX_LINKS = 174  # keeps interior nodes under one chunk

LEAF_TAG = 0x00
INTERIOR_TAG = 0x01


@dataclass(frozen=True)
class Link:
    child: Cid
    subtree_size: int


@dataclass(frozen=True)
class DagNode:
    """Leaf (raw chunk) or interior (ordered child links) node."""

    data: bytes = b""
    links: tuple[Link, ...] = field(default_factory=tuple)

    @property
    def is_leaf(self) -> bool:
        return not self.links

    @classmethod
    def leaf(cls, data: bytes) -> "DagNode":
        return cls(data=bytes(data))

    @classmethod
    def interior(cls, links) -> "DagNode":
        return cls(links=tuple(links))


def encode_node(node: DagNode, *, chunk_size: int = DEFAULT_CHUNK_SIZE,
                max_links: int = DEFAULT_MAX_LINKS) -> bytes:
    """Canonical encoding; equal nodes always encode to identical bytes."""
    if node.is_leaf:
        if len(node.data) > chunk_size:
            raise OversizedLeaf(f"leaf of {len(node.data)} bytes exceeds chunk size {chunk_size}")
        return struct.pack(">BI", LEAF_TAG, len(node.data)) + node.data
    if len(node.links) > max_links:
        raise TooManyLinks(f"{len(node.links)} links exceeds max {max_links}")
    parts = [struct.pack(">BI", INTERIOR_TAG, len(node.links))]
    for link in node.links:
        parts.append(link.child.to_bytes())
        parts.append(struct.pack(">Q", link.subtree_size))
    return b"".join(parts)


def decode_node(raw: bytes) -> DagNode:
    """Strict inverse of encode_node; trailing or short bytes are malformed."""
    if len(raw) < 5:
        raise MalformedNode("node shorter than header")
    tag, count = struct.unpack(">BI", raw[:5])
    body = raw[5:]
    if tag == LEAF_TAG:
        if len(body) != count:
            raise MalformedNode(f"leaf length field {count} != payload {len(body)}")
        return DagNode.leaf(body)
    if tag == INTERIOR_TAG:
        if count == 0:
            raise MalformedNode("interior node with zero links")
        if len(body) != count * 42:
            raise MalformedNode(f"interior payload {len(body)} != {count} links * 42")
        links = []
        for i in range(count):
            off = i * 42
            try:
                child = Cid.from_bytes(body[off:off + 34])
            except Exception as exc:
                raise MalformedNode(f"bad link CID at {i}: {exc}") from None
            (size,) = struct.unpack(">Q", body[off + 34:off + 42])
            links.append(Link(child, size))
        return DagNode.interior(links)
    raise MalformedNode(f"unknown node tag {tag:#04x}")


def verify_block(cid: Cid, data: bytes) -> bool:
    """True iff data hashes to cid. Never raises."""
    return cid_of_bytes(data) == cid


def add_file(source, store, *, chunk_size: int = DEFAULT_CHUNK_SIZE,
             max_links: int = DEFAULT_MAX_LINKS) -> tuple[Cid, int]:
    """Chunk a byte stream (or bytes) into the store; return (root CID, size).

    Deterministic: the same bytes always produce the same root.
    """
    if isinstance(source, (bytes, bytearray, memoryview)):
        source = io.BytesIO(source)
    level: list[Link] = []
    total = 0
    while True:
        chunk = source.read(chunk_size)
        if not chunk:
            break
        total += len(chunk)
        cid = store.put(encode_node(DagNode.leaf(chunk), chunk_size=chunk_size))
        level.append(Link(cid, len(chunk)))
    if not level:
        # Empty input is a single empty leaf, never a zero-link interior.
        cid = store.put(encode_node(DagNode.leaf(b"")))
        return cid, 0
    while len(level) > 1:
        parent_level = []
        for i in range(0, len(level), max_links):
            group = level[i:i + max_links]
            node = DagNode.interior(group)
            cid = store.put(encode_node(node, max_links=max_links))
            parent_level.append(Link(cid, sum(l.subtree_size for l in group)))
        level = parent_level
    return level[0].child, total


def iter_file(root: Cid, store):
    """Yield leaf chunks depth-first, left to right.

    Raises MissingBlock for absent descendants and MalformedNode for
    undecodable stored bytes.
    """
    stack = [root]
    while stack:
        cid = stack.pop()
        node = decode_node(store.get(cid))
        if node.is_leaf:
            yield node.data
        else:
            stack.extend(link.child for link in reversed(node.links))


def cat_file(root: Cid, store) -> bytes:
    """Reassemble a file from the store; cat(add(x)) == x byte-for-byte."""
    return b"".join(iter_file(root, store))


def missing_descendants(root: Cid, store) -> list[Cid]:
    """CIDs reachable from root (inclusive) that the store lacks."""
    missing = []
    stack = [root]
    seen = set()
    while stack:
        cid = stack.pop()
        if cid in seen:
            continue
        seen.add(cid)
        if not store.has(cid):
            missing.append(cid)
            continue
        node = decode_node(store.get(cid))
        if not node.is_leaf:
            stack.extend(link.child for link in reversed(node.links))
    return missing
