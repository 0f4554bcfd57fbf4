import hashlib

import pytest
from hypothesis import given, settings, strategies as st

from oracles import naive_levels, naive_path, naive_root
from siliconhealth.merkle import (LEFT, InclusionProof, MerkleError, aligned_node, build_tree, node_hash,
                                  prove_inclusion, tree_depth, verify_inclusion)


def leaves(n, salt=b""):
    return [hashlib.sha256(salt + i.to_bytes(4, "big")).digest() for i in range(n)]


@pytest.mark.parametrize("n", range(1, 65))
def test_matches_naive_oracle(n):
    ls = leaves(n)
    tree = build_tree(ls)
    assert tree.root == naive_root(ls)
    assert tree.depth == len(naive_levels(ls)) - 1 == tree_depth(n)
    for i in range(n):
        proof = prove_inclusion(tree, i)
        assert [(d, side == LEFT) for d, side in proof.siblings] == naive_path(ls, i)
        assert verify_inclusion(tree.root, ls[i], proof)


def test_single_leaf_tree():
    (leaf,) = leaves(1)
    tree = build_tree([leaf])
    assert tree.root == node_hash(leaf, leaf)
    assert len(prove_inclusion(tree, 0).siblings) == 1


def test_empty_tree_and_bad_index():
    with pytest.raises(MerkleError):
        build_tree([])
    with pytest.raises(MerkleError):
        prove_inclusion(build_tree(leaves(3)), 3)


def test_proof_for_wrong_leaf_or_root_fails():
    ls = leaves(9)
    tree = build_tree(ls)
    proof = prove_inclusion(tree, 4)
    assert verify_inclusion(tree.root, ls[5], proof).reason == "root-mismatch"
    assert not verify_inclusion(bytes(32), ls[4], proof)
    shifted = InclusionProof(5, proof.siblings)
    assert not verify_inclusion(tree.root, ls[4], shifted)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.binary(min_size=32, max_size=32), min_size=1, max_size=80))
def test_random_sets_against_oracle(ls):
    assert build_tree(ls).root == naive_root(ls)


def test_aligned_nodes_agree_across_sizes():
    big = build_tree(leaves(13))
    small = build_tree(leaves(8))
    # the first 8 leaves are shared, so the level-3 node covering them matches
    assert aligned_node(big, 3, 0) == aligned_node(small, 3, 0) == small.root
    assert aligned_node(small, 3, 1) is None
    assert aligned_node(build_tree(leaves(1)), 2, 0) == node_hash(*[node_hash(leaves(1)[0], leaves(1)[0])] * 2)
