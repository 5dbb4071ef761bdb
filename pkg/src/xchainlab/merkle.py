"""Dual-subtree Merkle tree with domain-separated hashing.

A block commits to a single root over two subtrees: "internal" for the
block's own transactions and "crosschain" for relayed producer data.
Leaf, interior, dual-root and empty-subtree hashes carry distinct
one-byte domain tags, so no value can be reinterpreted across roles and
a proof built for one subtree can never validate under the other.

Unpaired leaves at odd levels are promoted to the next level unchanged
(no duplication), which avoids the classic duplicated-leaf malleability.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from enum import Enum
from typing import Sequence

TAG_LEAF = b"\x00"
TAG_NODE = b"\x01"
TAG_ROOT = b"\x02"
TAG_EMPTY = b"\x03"


def _sha256(data: bytes) -> bytes:
    return hashlib.sha256(data).digest()


def leaf_hash(leaf: bytes) -> bytes:
    return _sha256(TAG_LEAF + leaf)


def node_hash(left: bytes, right: bytes) -> bytes:
    return _sha256(TAG_NODE + left + right)


def root_hash(internal_subroot: bytes, crosschain_subroot: bytes) -> bytes:
    return _sha256(TAG_ROOT + internal_subroot + crosschain_subroot)


def empty_root() -> bytes:
    return _sha256(TAG_EMPTY)


class Subtree(Enum):
    INTERNAL = 0
    CROSSCHAIN = 1


@dataclass(frozen=True)
class ProofStep:
    sibling: bytes
    sibling_on_left: bool


@dataclass(frozen=True)
class MerkleProof:
    subtree: Subtree
    steps: tuple[ProofStep, ...]
    other_subroot: bytes


@dataclass(frozen=True)
class DualMerkle:
    internal_subroot: bytes
    crosschain_subroot: bytes
    root: bytes


def _levels(leaves: Sequence[bytes]) -> list[list[bytes]]:
    level = [leaf_hash(leaf) for leaf in leaves]
    out = [level]
    while len(level) > 1:
        nxt = [node_hash(level[i], level[i + 1]) for i in range(0, len(level) - 1, 2)]
        if len(level) % 2:
            nxt.append(level[-1])
        out.append(nxt)
        level = nxt
    return out


def subtree_root(leaves: Sequence[bytes]) -> bytes:
    if not leaves:
        return empty_root()
    return _levels(leaves)[-1][0]


def _path(levels: list[list[bytes]], index: int) -> tuple[ProofStep, ...]:
    steps = []
    for level in levels[:-1]:
        if index == len(level) - 1 and len(level) % 2:
            # promoted unpaired node: no sibling at this level
            index = index // 2
            continue
        sibling = index ^ 1
        steps.append(ProofStep(level[sibling], sibling_on_left=sibling < index))
        index //= 2
    return tuple(steps)


def build_dual_merkle(
    internal_leaves: Sequence[bytes], crosschain_leaves: Sequence[bytes]
) -> tuple[DualMerkle, list[MerkleProof], list[MerkleProof]]:
    """Build the dual tree and an inclusion proof for every leaf.

    Returns (tree, internal_proofs, crosschain_proofs) with proofs in
    leaf order.
    """
    internal_root = subtree_root(internal_leaves)
    crosschain_root = subtree_root(crosschain_leaves)
    tree = DualMerkle(
        internal_subroot=internal_root,
        crosschain_subroot=crosschain_root,
        root=root_hash(internal_root, crosschain_root),
    )

    internal_proofs: list[MerkleProof] = []
    if internal_leaves:
        levels = _levels(internal_leaves)
        for i in range(len(internal_leaves)):
            internal_proofs.append(
                MerkleProof(Subtree.INTERNAL, _path(levels, i), crosschain_root)
            )
    crosschain_proofs: list[MerkleProof] = []
    if crosschain_leaves:
        levels = _levels(crosschain_leaves)
        for i in range(len(crosschain_leaves)):
            crosschain_proofs.append(
                MerkleProof(Subtree.CROSSCHAIN, _path(levels, i), internal_root)
            )
    return tree, internal_proofs, crosschain_proofs


def verify_merkle_proof(leaf: bytes, proof: MerkleProof, expected_root: bytes) -> bool:
    """Fold `leaf` up the proof path and compare against the dual root.

    Returns False (never raises) on malformed proofs.
    """
    try:
        node = leaf_hash(leaf)
        for step in proof.steps:
            if step.sibling_on_left:
                node = node_hash(step.sibling, node)
            else:
                node = node_hash(node, step.sibling)
        if proof.subtree is Subtree.INTERNAL:
            root = root_hash(node, proof.other_subroot)
        elif proof.subtree is Subtree.CROSSCHAIN:
            root = root_hash(proof.other_subroot, node)
        else:
            return False
        return root == expected_root
    except (TypeError, AttributeError):
        return False
