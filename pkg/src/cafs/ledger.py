"""Metadata blockchain: entries, Merkle commitments, PoW, validation.

Each block commits to an ordered list of metadata entries through a
binary Merkle root and is chained on the previous block's header hash.
The header hash H(prev_hash || merkle_root || timestamp || nonce) must
carry at least `difficulty` leading zero bits; the nonce is found by an
increment-from-zero search, so mining is deterministic for fixed inputs
and clock.
"""

from __future__ import annotations

import datetime
import hashlib
import os
import struct
from dataclasses import dataclass
from typing import Optional

from .cid import Cid, cid_to_text
from .errors import DuplicatePending, EmptyHashList, LedgerValidationFailed

MAX_ENTRIES_PER_BLOCK = 64
MAX_FILE_TYPE_LEN = 64
MAX_AUTHOR_LEN = 256
GENESIS_PREV = bytes(32)


@dataclass(frozen=True)
class MetadataEntry:
    """One ledger row describing a stored file (or a modification of one)."""

    file_cid: Cid
    created_at: int
    accessed_at: int
    size_bytes: int
    file_type: str
    author: str
    modified_cid: Optional[Cid] = None

    def __post_init__(self):
        if len(self.file_type.encode("utf-8")) > MAX_FILE_TYPE_LEN:
            raise ValueError(f"file_type exceeds {MAX_FILE_TYPE_LEN} bytes")
        if len(self.author.encode("utf-8")) > MAX_AUTHOR_LEN:
            raise ValueError(f"author exceeds {MAX_AUTHOR_LEN} bytes")
        if self.modified_cid is not None and self.modified_cid == self.file_cid:
            raise ValueError("modified_cid must differ from file_cid")


def encode_entry(e: MetadataEntry) -> bytes:
    """Canonical layout: fixed field order, big-endian ints, length-prefixed strings."""
    ftype = e.file_type.encode("utf-8")
    author = e.author.encode("utf-8")
    parts = [
        e.file_cid.to_bytes(),
        struct.pack(">QQQ", e.created_at, e.accessed_at, e.size_bytes),
        struct.pack(">H", len(ftype)), ftype,
        struct.pack(">H", len(author)), author,
    ]
    if e.modified_cid is None:
        parts.append(b"\x00")
    else:
        parts.append(b"\x01" + e.modified_cid.to_bytes())
    return b"".join(parts)


def decode_entry(raw: bytes, off: int = 0) -> tuple[MetadataEntry, int]:
    """Decode one entry starting at off; returns (entry, next offset)."""
    try:
        file_cid = Cid.from_bytes(raw[off:off + 34])
        off += 34
        created, accessed, size = struct.unpack_from(">QQQ", raw, off)
        off += 24
        (tlen,) = struct.unpack_from(">H", raw, off)
        off += 2
        ftype = raw[off:off + tlen].decode("utf-8")
        off += tlen
        (alen,) = struct.unpack_from(">H", raw, off)
        off += 2
        author = raw[off:off + alen].decode("utf-8")
        off += alen
        flag = raw[off]
        off += 1
        modified = None
        if flag == 1:
            modified = Cid.from_bytes(raw[off:off + 34])
            off += 34
        elif flag != 0:
            raise ValueError(f"bad modified flag {flag}")
        return MetadataEntry(file_cid, created, accessed, size, ftype, author, modified), off
    except (IndexError, struct.error, UnicodeDecodeError) as exc:
        raise LedgerValidationFailed(f"undecodable entry: {exc}") from None


def entry_hash(e: MetadataEntry) -> bytes:
    return hashlib.sha256(encode_entry(e)).digest()


def merkle_root(hashes: list[bytes]) -> bytes:
    """Binary Merkle tree; odd counts duplicate the last hash at every
    level, including a single leaf (root of [h] is H(h || h))."""
    if not hashes:
        raise EmptyHashList("merkle root of an empty list")
    level = list(hashes)
    while True:
        if len(level) % 2:
            level.append(level[-1])
        level = [hashlib.sha256(level[i] + level[i + 1]).digest()
                 for i in range(0, len(level), 2)]
        if len(level) == 1:
            return level[0]


@dataclass(frozen=True)
class LedgerBlock:
    prev_hash: bytes
    merkle_root: bytes
    timestamp: int
    nonce: int
    entries: tuple[MetadataEntry, ...]

    def header_bytes(self) -> bytes:
        return (self.prev_hash + self.merkle_root
                + struct.pack(">QQ", self.timestamp, self.nonce))

    def block_hash(self) -> bytes:
        return hashlib.sha256(self.header_bytes()).digest()


def encode_block(b: LedgerBlock) -> bytes:
    parts = [b.header_bytes(), struct.pack(">I", len(b.entries))]
    for e in b.entries:
        parts.append(encode_entry(e))
    return b"".join(parts)


def decode_block(raw: bytes) -> LedgerBlock:
    if len(raw) < 84:
        raise LedgerValidationFailed("block shorter than header")
    prev, root = raw[:32], raw[32:64]
    ts, nonce = struct.unpack_from(">QQ", raw, 64)
    (count,) = struct.unpack_from(">I", raw, 80)
    off = 84
    entries = []
    for _ in range(count):
        entry, off = decode_entry(raw, off)
        entries.append(entry)
    if off != len(raw):
        raise LedgerValidationFailed("trailing bytes after block entries")
    return LedgerBlock(prev, root, ts, nonce, tuple(entries))


def leading_zero_bits(digest: bytes) -> int:
    n = int.from_bytes(digest, "big")
    return 256 - n.bit_length()


def mine_block(entries, prev_hash: bytes, difficulty: int, clock,
               min_timestamp: int = 0) -> LedgerBlock:
    """Increment-from-zero nonce search; deterministic for fixed inputs."""
    entries = tuple(entries)
    if not 1 <= len(entries) <= MAX_ENTRIES_PER_BLOCK:
        raise ValueError(f"block must hold 1..{MAX_ENTRIES_PER_BLOCK} entries")
    root = merkle_root([entry_hash(e) for e in entries])
    timestamp = max(int(clock()), min_timestamp)
    prefix = prev_hash + root + struct.pack(">Q", timestamp)
    bound = 1 << (256 - difficulty)
    nonce = 0
    while True:
        digest = hashlib.sha256(prefix + struct.pack(">Q", nonce)).digest()
        if int.from_bytes(digest, "big") < bound:
            return LedgerBlock(prev_hash, root, timestamp, nonce, entries)
        nonce += 1


@dataclass(frozen=True)
class Violation:
    height: int
    kind: str  # BadGenesis | BadLink | BadRoot | BadPow | BadTimestamp

    def __str__(self):
        return f"Violation(height={self.height}, kind={self.kind})"


def validate_chain(blocks, difficulty: int) -> Optional[Violation]:
    """None means the chain is valid; otherwise the first violation found."""
    prev_hash = GENESIS_PREV
    prev_ts = 0
    for height, block in enumerate(blocks):
        if height == 0 and block.prev_hash != GENESIS_PREV:
            return Violation(0, "BadGenesis")
        if height > 0 and block.prev_hash != prev_hash:
            return Violation(height, "BadLink")
        if not block.entries:
            return Violation(height, "BadRoot")
        if block.merkle_root != merkle_root([entry_hash(e) for e in block.entries]):
            return Violation(height, "BadRoot")
        if leading_zero_bits(block.block_hash()) < difficulty:
            return Violation(height, "BadPow")
        if block.timestamp < prev_ts:
            return Violation(height, "BadTimestamp")
        prev_hash = block.block_hash()
        prev_ts = block.timestamp
    return None


class Chain:
    """Ordered blocks plus a CID index for metadata lookups."""

    def __init__(self):
        self.blocks: list[LedgerBlock] = []
        self._index: dict[Cid, list[tuple[int, int]]] = {}

    def __len__(self):
        return len(self.blocks)

    @property
    def tip_hash(self) -> bytes:
        return self.blocks[-1].block_hash() if self.blocks else GENESIS_PREV

    @property
    def tip_timestamp(self) -> int:
        return self.blocks[-1].timestamp if self.blocks else 0

    def append(self, block: LedgerBlock) -> int:
        height = len(self.blocks)
        self.blocks.append(block)
        for idx, entry in enumerate(block.entries):
            self._index.setdefault(entry.file_cid, []).append((height, idx))
            if entry.modified_cid is not None:
                self._index.setdefault(entry.modified_cid, []).append((height, idx))
        return height

    def extend_validated(self, new_blocks, difficulty: int) -> None:
        """Append blocks that must continue this chain; raises on any violation."""
        candidate = self.blocks + list(new_blocks)
        violation = validate_chain(candidate, difficulty)
        if violation is not None:
            raise LedgerValidationFailed(str(violation))
        for block in new_blocks:
            self.append(block)

    def validate(self, difficulty: int) -> Optional[Violation]:
        return validate_chain(self.blocks, difficulty)

    def lookup_metadata(self, cid: Cid) -> list[tuple[int, MetadataEntry]]:
        """All entries whose file_cid or modified_cid equals cid, by height."""
        hits = self._index.get(cid, [])
        return [(h, self.blocks[h].entries[i]) for h, i in sorted(hits)]

    def entries(self):
        for height, block in enumerate(self.blocks):
            for entry in block.entries:
                yield height, entry


class PendingPool:
    """Uncommitted entries waiting for the next mined block."""

    def __init__(self):
        self._entries: list[MetadataEntry] = []
        self._keys: set[tuple[Cid, int]] = set()
        self.committed: dict[bytes, int] = {}  # entry_hash -> height

    def __len__(self):
        return len(self._entries)

    def add(self, entry: MetadataEntry) -> bytes:
        key = (entry.file_cid, entry.accessed_at)
        if key in self._keys:
            raise DuplicatePending(f"{cid_to_text(entry.file_cid)} @ {entry.accessed_at}")
        self._keys.add(key)
        self._entries.append(entry)
        return entry_hash(entry)

    def drain(self) -> list[MetadataEntry]:
        entries, self._entries = self._entries, []
        self._keys.clear()
        return entries

    def mark_committed(self, entries, height: int) -> None:
        for e in entries:
            self.committed[entry_hash(e)] = height

    def status(self, ehash: bytes) -> Optional[int]:
        return self.committed.get(ehash)


class ChainFile:
    """Append-only persistence: u32 length frame per encoded block."""

    def __init__(self, path: str):
        self.path = path

    def load(self) -> list[LedgerBlock]:
        if not os.path.exists(self.path):
            return []
        blocks = []
        with open(self.path, "rb") as fh:
            raw = fh.read()
        off = 0
        while off < len(raw):
            if off + 4 > len(raw):
                raise LedgerValidationFailed("truncated chain file frame")
            (length,) = struct.unpack_from(">I", raw, off)
            off += 4
            if off + length > len(raw):
                raise LedgerValidationFailed("truncated chain file block")
            blocks.append(decode_block(raw[off:off + length]))
            off += length
        return blocks

    def append(self, block: LedgerBlock) -> None:
        raw = encode_block(block)
        with open(self.path, "ab") as fh:
            fh.write(struct.pack(">I", len(raw)) + raw)
            fh.flush()
            os.fsync(fh.fileno())


def _ddmmyy(ts: int) -> str:
    d = datetime.datetime.fromtimestamp(ts, datetime.timezone.utc)
    return f"{d.day:02d}/{d.month:02d}/{d.year % 100:02d}"


def _clock12(ts: int) -> str:
    d = datetime.datetime.fromtimestamp(ts, datetime.timezone.utc)
    hour = d.hour % 12 or 12
    half = "AM" if d.hour < 12 else "PM"
    return f"{hour}:{d.minute:02d} {half}"


def export_rows(chain: Chain) -> list[dict]:
    """Human-facing rows, one per entry (display date format is DD/MM/YY)."""
    rows = []
    for _, entry in chain.entries():
        rows.append({
            "created": _ddmmyy(entry.created_at),
            "cid": cid_to_text(entry.file_cid),
            "accessed_date": _ddmmyy(entry.accessed_at),
            "accessed_time": _clock12(entry.accessed_at),
            "modified_cid": cid_to_text(entry.modified_cid) if entry.modified_cid else None,
        })
    return rows
