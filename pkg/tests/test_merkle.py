import hashlib
import random

import pytest

from xchainlab.merkle import (
    DualMerkle,
    MerkleProof,
    ProofStep,
    Subtree,
    build_dual_merkle,
    empty_root,
    leaf_hash,
    node_hash,
    root_hash,
    subtree_root,
    verify_merkle_proof,
)


def ref_subtree_root(leaves):
    """Independent recursive reference builder (promote-odd convention)."""
    if not leaves:
        return hashlib.sha256(b"\x03").digest()
    level = [hashlib.sha256(b"\x00" + leaf).digest() for leaf in leaves]
    while len(level) > 1:
        nxt = []
        for i in range(0, len(level) - 1, 2):
            nxt.append(hashlib.sha256(b"\x01" + level[i] + level[i + 1]).digest())
        if len(level) % 2:
            nxt.append(level[-1])
        level = nxt
    return level[0]


def test_domain_tags_are_distinct_hash_inputs():
    data = b"same bytes"
    assert leaf_hash(data) != hashlib.sha256(data).digest()
    assert leaf_hash(data) != node_hash(data[:16], data[16:]) if len(data) > 16 else True
    assert empty_root() == hashlib.sha256(b"\x03").digest()


def test_single_internal_leaf_definitional():
    tree, proofs, _ = build_dual_merkle([b"a"], [])
    assert tree.internal_subroot == leaf_hash(b"a")
    assert tree.crosschain_subroot == empty_root()
    assert tree.root == root_hash(leaf_hash(b"a"), empty_root())
    assert verify_merkle_proof(b"a", proofs[0], tree.root)


def test_two_leaves_definitional():
    tree, _, _ = build_dual_merkle([b"a", b"b"], [])
    assert tree.internal_subroot == node_hash(leaf_hash(b"a"), leaf_hash(b"b"))


def test_three_leaves_odd_promotion_hand_derived():
    # level0: [A, B, C]; level1: [AB, C promoted]; root: node(AB, C)
    a, b, c = leaf_hash(b"a"), leaf_hash(b"b"), leaf_hash(b"c")
    expected = node_hash(node_hash(a, b), c)
    assert subtree_root([b"a", b"b", b"c"]) == expected
    assert ref_subtree_root([b"a", b"b", b"c"]) == expected


@pytest.mark.parametrize("size", list(range(0, 17)) + [31, 32, 33, 64])
def test_matches_reference_builder(size):
    rng = random.Random(size)
    leaves = [rng.randbytes(rng.randrange(1, 40)) for _ in range(size)]
    assert subtree_root(leaves) == ref_subtree_root(leaves)


def test_round_trip_all_proofs_verify():
    rng = random.Random(7)
    for size in range(0, 65, 7):
        internal = [rng.randbytes(8) for _ in range(size)]
        crosschain = [rng.randbytes(8) for _ in range(max(0, size - 3))]
        tree, iproofs, cproofs = build_dual_merkle(internal, crosschain)
        for leaf, proof in zip(internal, iproofs):
            assert verify_merkle_proof(leaf, proof, tree.root)
        for leaf, proof in zip(crosschain, cproofs):
            assert verify_merkle_proof(leaf, proof, tree.root)


def _mutate(data: bytes, index: int) -> bytes:
    out = bytearray(data)
    out[index] ^= 0x01
    return bytes(out)


def test_single_byte_mutations_fail_verification():
    rng = random.Random(11)
    internal = [rng.randbytes(16) for _ in range(5)]
    tree, proofs, _ = build_dual_merkle(internal, [b"x", b"y"])
    leaf, proof = internal[2], proofs[2]

    for i in range(len(leaf)):
        assert not verify_merkle_proof(_mutate(leaf, i), proof, tree.root)
    for i in range(len(tree.root)):
        assert not verify_merkle_proof(leaf, proof, _mutate(tree.root, i))
    for step_idx, step in enumerate(proof.steps):
        for i in range(len(step.sibling)):
            steps = list(proof.steps)
            steps[step_idx] = ProofStep(_mutate(step.sibling, i), step.sibling_on_left)
            broken = MerkleProof(proof.subtree, tuple(steps), proof.other_subroot)
            assert not verify_merkle_proof(leaf, broken, tree.root)
    for i in range(len(proof.other_subroot)):
        broken = MerkleProof(
            proof.subtree, proof.steps, _mutate(proof.other_subroot, i)
        )
        assert not verify_merkle_proof(leaf, broken, tree.root)


def test_subtree_tag_cannot_be_swapped():
    # 4-leaf fixture on both sides; an internal proof re-tagged as
    # crosschain must fail (and vice versa), for every leaf
    internal = [b"i1", b"i2", b"i3", b"i4"]
    crosschain = [b"c1", b"c2", b"c3", b"c4"]
    tree, iproofs, cproofs = build_dual_merkle(internal, crosschain)
    for leaf, proof in zip(internal, iproofs):
        flipped = MerkleProof(Subtree.CROSSCHAIN, proof.steps, proof.other_subroot)
        assert not verify_merkle_proof(leaf, flipped, tree.root)
    for leaf, proof in zip(crosschain, cproofs):
        flipped = MerkleProof(Subtree.INTERNAL, proof.steps, proof.other_subroot)
        assert not verify_merkle_proof(leaf, flipped, tree.root)


def test_cross_subtree_leaf_never_verifies():
    # a proof built for the internal side never validates a crosschain leaf
    internal = [b"i1", b"i2"]
    crosschain = [b"c1", b"c2"]
    tree, iproofs, cproofs = build_dual_merkle(internal, crosschain)
    for cleaf in crosschain:
        for proof in iproofs:
            assert not verify_merkle_proof(cleaf, proof, tree.root)


def test_malformed_proof_returns_false():
    tree, proofs, _ = build_dual_merkle([b"a", b"b"], [])
    bad_steps = MerkleProof(Subtree.INTERNAL, (("junk", True),), tree.crosschain_subroot)
    assert verify_merkle_proof(b"a", bad_steps, tree.root) is False
    assert verify_merkle_proof(b"a", "not a proof", tree.root) is False  # type: ignore


def test_empty_dual_root():
    tree, iproofs, cproofs = build_dual_merkle([], [])
    assert iproofs == [] and cproofs == []
    assert tree.root == root_hash(empty_root(), empty_root())
