"""Binary Merkle tree with odd-node duplication and 0x00/0x01 domain separation.

Leaves are supplied already hashed.  Every tree folds at least once, so a
single leaf L has root ``H(0x01 || L || L)`` and a one-sibling proof.
"""

from dataclasses import dataclass
from typing import List, Sequence, Tuple

from .errors import ACCEPT, SiliconHealthError, Verdict, reject
from .hashcore import sha256d

NODE_PREFIX = b"\x01"
LEFT = "L"
RIGHT = "R"


class MerkleError(SiliconHealthError):
    pass


def node_hash(left: bytes, right: bytes) -> bytes:
    return sha256d(NODE_PREFIX + left + right)


@dataclass(frozen=True)
class MerkleTree:
    levels: Tuple[Tuple[bytes, ...], ...]  # levels[0] = leaves, levels[-1] = (root,)

    @property
    def leaves(self) -> Tuple[bytes, ...]:
        return self.levels[0]

    @property
    def root(self) -> bytes:
        return self.levels[-1][0]

    @property
    def depth(self) -> int:
        return len(self.levels) - 1


@dataclass(frozen=True)
class InclusionProof:
    leaf_index: int
    siblings: Tuple[Tuple[bytes, str], ...]  # (digest, side of the sibling)


def _fold(level: Sequence[bytes]) -> List[bytes]:
    out = []
    for i in range(0, len(level), 2):
        left = level[i]
        right = level[i + 1] if i + 1 < len(level) else left
        out.append(node_hash(left, right))
    return out


def build_tree(leaves: Sequence[bytes]) -> MerkleTree:
    if not leaves:
        raise MerkleError("empty-tree")
    level = list(leaves)
    levels = [tuple(level)]
    while True:
        level = _fold(level)
        levels.append(tuple(level))
        if len(level) == 1:
            break
    return MerkleTree(tuple(levels))


def merkle_root(leaves: Sequence[bytes]) -> bytes:
    return build_tree(leaves).root


def prove_inclusion(tree: MerkleTree, index: int) -> InclusionProof:
    if not 0 <= index < len(tree.leaves):
        raise MerkleError(f"index-out-of-range: {index} not in [0, {len(tree.leaves)})")
    siblings = []
    i = index
    for level in tree.levels[:-1]:
        if i % 2 == 0:
            sib = level[i + 1] if i + 1 < len(level) else level[i]
            siblings.append((sib, RIGHT))
        else:
            siblings.append((level[i - 1], LEFT))
        i //= 2
    return InclusionProof(index, tuple(siblings))


def verify_inclusion(root: bytes, leaf: bytes, proof: InclusionProof) -> Verdict:
    """Fold ``leaf`` through the proof; only the root and sibling digests are consulted."""
    acc = leaf
    i = proof.leaf_index
    for sib, side in proof.siblings:
        expected = LEFT if i % 2 else RIGHT
        if side != expected:
            return reject("side-mismatch")
        acc = node_hash(sib, acc) if side == LEFT else node_hash(acc, sib)
        i //= 2
    if i != 0:
        return reject("index-out-of-range")
    if acc != root:
        return reject("root-mismatch")
    return ACCEPT


def tree_depth(count: int) -> int:
    """Depth of ``build_tree`` over ``count`` leaves (1 for a single leaf)."""
    if count < 1:
        raise MerkleError("empty-tree")
    return max(1, (count - 1).bit_length())


def aligned_node(tree: MerkleTree, level: int, index: int):
    """Digest of the node covering leaves ``[index * 2**level, (index+1) * 2**level)``.

    Nodes of two trees over different leaf counts line up at the same
    (level, index) as long as both are read this way; a range past the
    last leaf has no node (None).  Above the tree's own depth the root is
    carried upward by self-pairing, exactly as duplication would.
    """
    if tree is None or index << level >= len(tree.leaves):
        return None
    if level <= tree.depth:
        return tree.levels[level][index]
    digest = tree.root
    for _ in range(level - tree.depth):
        digest = node_hash(digest, digest)
    return digest
