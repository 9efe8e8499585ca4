"""Binary SHA-256 Merkle tree with inclusion proofs.

Leaves are hashed once before pairing; an odd layer duplicates its last
digest. A one-leaf tree is hashed a second time so its root never equals a
bare leaf digest. No domain separation, no Bitcoin compatibility.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from typing import Sequence

LEFT = "L"
RIGHT = "R"


class EmptyLeaves(ValueError):
    pass


class IndexOutOfRange(IndexError):
    pass


def sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


@dataclass(frozen=True)
class MerkleTree:
    leaves: tuple[bytes, ...]
    levels: tuple[tuple[bytes, ...], ...]
    root: bytes

    @property
    def height(self) -> int:
        return len(self.levels) - 1

    def index_of(self, leaf: bytes) -> int:
        return self.leaves.index(leaf)


@dataclass(frozen=True)
class MerkleProof:
    leaf: bytes
    path: tuple[tuple[bytes, str], ...]  # (sibling digest, side of the sibling)
    claimed_root: bytes

    def to_json(self) -> str:
        return json.dumps(
            {
                "leaf_hex": self.leaf.hex(),
                "path": [{"hash_hex": h.hex(), "side": side} for h, side in self.path],
                "root_hex": self.claimed_root.hex(),
            },
            separators=(",", ":"),
        )

    @classmethod
    def from_json(cls, text: str) -> "MerkleProof":
        doc = json.loads(text)
        path = tuple((bytes.fromhex(p["hash_hex"]), p["side"]) for p in doc["path"])
        return cls(bytes.fromhex(doc["leaf_hex"]), path, bytes.fromhex(doc["root_hex"]))


def build(leaves: Sequence[bytes]) -> MerkleTree:
    if not leaves:
        raise EmptyLeaves("a Merkle tree needs at least one leaf")
    level = tuple(sha256(bytes(leaf)) for leaf in leaves)
    levels = [level]
    while len(level) > 1:
        if len(level) % 2:
            level = level + (level[-1],)
            levels[-1] = level
        level = tuple(sha256(level[i] + level[i + 1]) for i in range(0, len(level), 2))
        levels.append(level)
    root = sha256(level[0]) if len(leaves) == 1 else level[0]
    return MerkleTree(tuple(bytes(x) for x in leaves), tuple(levels), root)


def prove(tree: MerkleTree, index: int) -> MerkleProof:
    if not 0 <= index < len(tree.leaves):
        raise IndexOutOfRange(f"leaf index {index} not in [0, {len(tree.leaves)})")
    path = []
    i = index
    for level in tree.levels[:-1]:
        if i % 2:
            path.append((level[i - 1], LEFT))
        else:
            path.append((level[i + 1], RIGHT))
        i //= 2
    return MerkleProof(tree.leaves[index], tuple(path), tree.root)


def verify(proof: MerkleProof, root: bytes) -> bool:
    digest = sha256(proof.leaf)
    if not proof.path:
        digest = sha256(digest)
    for sibling, side in proof.path:
        if side == LEFT:
            digest = sha256(sibling + digest)
        elif side == RIGHT:
            digest = sha256(digest + sibling)
        else:
            return False
    return digest == root
