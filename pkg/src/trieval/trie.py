"""Prefix trie over docid token sequences.

Decoding walks this trie: at every prefix only the stored children are
legal next tokens, and the end-of-docid sentinel appears as a child
exactly where some document's full identifier ends. Appending the
sentinel makes the stored sequences prefix-free even when one docid is
a strict prefix of another.
"""

from __future__ import annotations

import struct
from pathlib import Path
from typing import Iterable, Iterator, Protocol, Sequence

from trieval.errors import TrieError

SENTINEL_TOKEN = "</s>"

_FORMAT_VERSION = 1


class _DocidLike(Protocol):
    tokens: tuple[int, ...]
    doc_key: str


class PrefixTrie:
    """Token-id trie with per-docid terminal payloads.

    Nodes live in parallel lists: `_children[n]` maps a token id to a
    child node index, `_doc_key[n]` is set on the node reached through
    the sentinel edge. Node 0 is the root.
    """

    def __init__(self, sentinel_id: int):
        if sentinel_id < 0:
            raise ValueError("sentinel_id must be >= 0")
        self.sentinel_id = sentinel_id
        self._children: list[dict[int, int]] = [{}]
        self._doc_key: list[str | None] = [None]
        self._count = 0
        self._max_len = 0

    @classmethod
    def from_docids(cls, docids: Iterable[_DocidLike], sentinel_id: int) -> "PrefixTrie":
        trie = cls(sentinel_id)
        for docid in docids:
            trie.insert(docid.tokens, docid.doc_key)
        return trie

    def __len__(self) -> int:
        return self._count

    @property
    def node_count(self) -> int:
        return len(self._children)

    @property
    def max_docid_length(self) -> int:
        """Longest inserted docid in tokens, sentinel not counted."""
        return self._max_len

    def _new_node(self) -> int:
        self._children.append({})
        self._doc_key.append(None)
        return len(self._children) - 1

    def insert(self, tokens: Sequence[int], doc_key: str) -> None:
        if not tokens:
            raise TrieError(f"cannot insert empty docid for {doc_key!r}")
        for tok in tokens:
            if tok == self.sentinel_id:
                raise TrieError(f"docid for {doc_key!r} contains the sentinel id")
        node = 0
        for tok in tokens:
            node = self._step_or_grow(node, tok)
        terminal = self._children[node].get(self.sentinel_id)
        if terminal is not None:
            raise TrieError(
                f"duplicate docid: {doc_key!r} collides with "
                f"{self._doc_key[terminal]!r}"
            )
        terminal = self._new_node()
        self._children[node][self.sentinel_id] = terminal
        self._doc_key[terminal] = doc_key
        self._count += 1
        self._max_len = max(self._max_len, len(tokens))

    def _step_or_grow(self, node: int, tok: int) -> int:
        child = self._children[node].get(tok)
        if child is None:
            child = self._new_node()
            self._children[node][tok] = child
        return child

    def _walk(self, prefix: Sequence[int]) -> int | None:
        node = 0
        for tok in prefix:
            nxt = self._children[node].get(tok)
            if nxt is None:
                return None
            node = nxt
        return node

    def allowed_next(self, prefix: Sequence[int]) -> tuple[int, ...]:
        """Legal continuations of `prefix`, ascending; empty if off-trie."""
        node = self._walk(prefix)
        if node is None:
            return ()
        return tuple(sorted(self._children[node]))

    def is_prefix(self, prefix: Sequence[int]) -> bool:
        return self._walk(prefix) is not None

    def doc_key_at(self, tokens: Sequence[int]) -> str:
        """doc_key of the docid spelled by `tokens` (sentinel excluded)."""
        node = self._walk(tokens)
        terminal = None if node is None else self._children[node].get(self.sentinel_id)
        if terminal is None:
            raise TrieError(f"no docid terminates at prefix {tuple(tokens)!r}")
        key = self._doc_key[terminal]
        assert key is not None
        return key

    def __iter__(self) -> Iterator[tuple[tuple[int, ...], str]]:
        """Yield (tokens, doc_key) pairs in lexicographic token order.

        A docid that is a prefix of another comes first, regardless of
        how the sentinel id compares to real token ids.
        """

        def visit(node: int, prefix: tuple[int, ...]):
            children = self._children[node]
            terminal = children.get(self.sentinel_id)
            if terminal is not None:
                key = self._doc_key[terminal]
                assert key is not None
                yield prefix, key
            for tok in sorted(children):
                if tok != self.sentinel_id:
                    yield from visit(children[tok], prefix + (tok,))

        yield from visit(0, ())

    # --- serialization ------------------------------------------------------
    # Layout: version byte, uint32 sentinel id, then a preorder walk with
    # children in ascending token order, so bytes are independent of
    # insertion order. Each node: uint8 flags (bit 0 = terminal payload),
    # optional uint16+utf8 doc_key, uint32 child count, then per child a
    # uint32 token id followed by the child subtree.

    def to_bytes(self) -> bytes:
        out = bytearray()
        out.append(_FORMAT_VERSION)
        out += struct.pack("<I", self.sentinel_id)

        def emit(node: int) -> None:
            key = self._doc_key[node]
            if key is None:
                out.append(0)
            else:
                encoded = key.encode("utf-8")
                if len(encoded) > 0xFFFF:
                    raise TrieError(f"doc_key too long to serialize: {key[:40]!r}...")
                out.append(1)
                out.extend(struct.pack("<H", len(encoded)))
                out.extend(encoded)
            children = self._children[node]
            out.extend(struct.pack("<I", len(children)))
            for tok in sorted(children):
                out.extend(struct.pack("<I", tok))
                emit(children[tok])

        emit(0)
        return bytes(out)

    @classmethod
    def from_bytes(cls, data: bytes) -> "PrefixTrie":
        if not data:
            raise TrieError("empty trie serialization")
        if data[0] != _FORMAT_VERSION:
            raise TrieError(f"unsupported trie format version {data[0]}")
        (sentinel_id,) = struct.unpack_from("<I", data, 1)
        trie = cls(sentinel_id)
        pos = 5

        def read(node: int) -> None:
            nonlocal pos
            flags = data[pos]
            pos += 1
            if flags & 1:
                (klen,) = struct.unpack_from("<H", data, pos)
                pos += 2
                trie._doc_key[node] = data[pos : pos + klen].decode("utf-8")
                pos += klen
            (n_children,) = struct.unpack_from("<I", data, pos)
            pos += 4
            for _ in range(n_children):
                (tok,) = struct.unpack_from("<I", data, pos)
                pos += 4
                child = trie._new_node()
                trie._children[node][tok] = child
                read(child)

        read(0)
        if pos != len(data):
            raise TrieError(f"trailing bytes in trie serialization ({len(data) - pos})")
        trie._recount()
        return trie

    def _recount(self) -> None:
        self._count = 0
        self._max_len = 0
        for tokens, _ in self:
            self._count += 1
            self._max_len = max(self._max_len, len(tokens))

    def save(self, path: str | Path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path: str | Path) -> "PrefixTrie":
        return cls.from_bytes(Path(path).read_bytes())
