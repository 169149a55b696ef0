"""Block stores: content-keyed byte storage, on disk or in memory.

Keys are always the CID of the stored bytes; re-putting identical bytes
is a no-op. The file store fans blocks out under a two-hex-char prefix
directory and writes atomically (temp file + rename) so concurrent
readers never observe partial blocks.
"""

from __future__ import annotations

import os
import tempfile
import threading

from .cid import Cid, cid_of_bytes
from .errors import MissingBlock


class MemoryBlockStore:
    """Dict-backed store for tests and simulated nodes."""

    def __init__(self):
        self._blocks: dict[Cid, bytes] = {}
        self._pins: set[Cid] = set()

    def put(self, data: bytes) -> Cid:
        cid = cid_of_bytes(data)
        self._blocks.setdefault(cid, bytes(data))
        return cid

    def get(self, cid: Cid) -> bytes:
        try:
            return self._blocks[cid]
        except KeyError:
            raise MissingBlock(cid) from None

    def has(self, cid: Cid) -> bool:
        return cid in self._blocks

    def __len__(self) -> int:
        return len(self._blocks)

    def cids(self) -> list[Cid]:
        return list(self._blocks)

    def pin(self, cid: Cid) -> None:
        self._pins.add(cid)

    def unpin(self, cid: Cid) -> None:
        self._pins.discard(cid)

    def delete(self, cid: Cid) -> None:
        if cid in self._pins:
            raise ValueError(f"{cid} is pinned")
        self._blocks.pop(cid, None)


class FileBlockStore:
    """One file per block under root/<2-hex-prefix>/<digest hex>."""

    def __init__(self, root: str):
        self.root = root
        os.makedirs(root, exist_ok=True)
        self._write_lock = threading.Lock()

    def _path(self, cid: Cid) -> str:
        hexd = cid.digest.hex()
        return os.path.join(self.root, hexd[:2], hexd)

    def put(self, data: bytes) -> Cid:
        cid = cid_of_bytes(data)
        path = self._path(cid)
        if os.path.exists(path):
            return cid
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with self._write_lock:
            if os.path.exists(path):
                return cid
            fd, tmp = tempfile.mkstemp(dir=os.path.dirname(path))
            try:
                with os.fdopen(fd, "wb") as fh:
                    fh.write(data)
                os.replace(tmp, path)
            except BaseException:
                if os.path.exists(tmp):
                    os.unlink(tmp)
                raise
        return cid

    def get(self, cid: Cid) -> bytes:
        try:
            with open(self._path(cid), "rb") as fh:
                return fh.read()
        except FileNotFoundError:
            raise MissingBlock(cid) from None

    def has(self, cid: Cid) -> bool:
        return os.path.exists(self._path(cid))

    def __len__(self) -> int:
        return len(self.cids())

    def cids(self) -> list[Cid]:
        out = []
        for sub in sorted(os.listdir(self.root)):
            subdir = os.path.join(self.root, sub)
            if not os.path.isdir(subdir):
                continue
            for name in sorted(os.listdir(subdir)):
                if len(name) == 64:  # skip .pin markers
                    out.append(Cid(bytes.fromhex(name)))
        return out

    def pin(self, cid: Cid) -> None:
        path = self._path(cid) + ".pin"
        os.makedirs(os.path.dirname(path), exist_ok=True)
        with open(path, "wb"):
            pass

    def unpin(self, cid: Cid) -> None:
        try:
            os.unlink(self._path(cid) + ".pin")
        except FileNotFoundError:
            pass

    def delete(self, cid: Cid) -> None:
        if os.path.exists(self._path(cid) + ".pin"):
            raise ValueError(f"{cid} is pinned")
        try:
            os.unlink(self._path(cid))
        except FileNotFoundError:
            pass
