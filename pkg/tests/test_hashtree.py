import hashlib
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hybridledger import hashtree
from hybridledger.errors import ProofError

from naive_merkle import (
    oracle_consistency,
    oracle_leaf,
    oracle_mth,
    oracle_path,
    oracle_root,
)

# published SHA-256 vectors: hash of the empty string, and the leaf hash of
# an empty input (H(0x00))
EMPTY_TREE_ROOT = "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
EMPTY_LEAF_HASH = "6e340b9cffb37a989ca544e6bb780a2c78901d3fb33738768511a30617afa01d"


def _leaves(n: int, rng: random.Random) -> list[bytes]:
    return [rng.randbytes(rng.randint(0, 24)) for _ in range(n)]


class TestLeafHash:
    def test_deterministic(self):
        assert hashtree.leaf_hash(b"block") == hashtree.leaf_hash(b"block")

    def test_empty_string_vector(self):
        assert hashtree.leaf_hash(b"").hex() == EMPTY_LEAF_HASH
        # independent recompute of the domain-separated hash
        assert hashtree.leaf_hash(b"") == hashlib.sha256(b"\x00").digest()

    def test_trailing_zero_changes_digest(self):
        rng = random.Random(1)
        for _ in range(1000):
            data = rng.randbytes(rng.randint(0, 32))
            assert hashtree.leaf_hash(data) != hashtree.leaf_hash(data + b"\x00")
            assert hashtree.leaf_hash(data) == hashlib.sha256(b"\x00" + data).digest()


class TestRoot:
    def test_empty_tree_vector(self):
        assert hashtree.root([]).hex() == EMPTY_TREE_ROOT
        assert hashtree.root_from_leaf_digests([]).hex() == EMPTY_TREE_ROOT

    def test_single_leaf_is_leaf_hash(self):
        assert hashtree.root([b"only"]) == hashtree.leaf_hash(b"only")

    def test_seven_leaves_match_oracle(self):
        leaves = [bytes([i]) * i for i in range(7)]
        assert hashtree.root(leaves) == oracle_root(leaves)

    def test_exhaustive_small_sizes(self):
        rng = random.Random(2)
        for n in range(65):
            leaves = _leaves(n, rng)
            assert hashtree.root(leaves) == oracle_root(leaves)

    def test_digest_equivalence_with_precomputed_leaves(self):
        rng = random.Random(3)
        for _ in range(50):
            leaves = _leaves(rng.randint(0, 64), rng)
            digests = [hashtree.leaf_hash(x) for x in leaves]
            assert hashtree.root_from_leaf_digests(digests) == hashtree.root(leaves)

    def test_erased_leaf_substitution_keeps_root(self):
        leaves = [b"a", b"b", b"c", b"d", b"e"]
        digests = [hashtree.leaf_hash(x) for x in leaves]
        # replacing content with its digest is definitionally transparent
        assert hashtree.root_from_leaf_digests(digests) == hashtree.root(leaves)


class TestInclusion:
    def test_single_leaf_empty_path(self):
        digests = [hashtree.leaf_hash(b"x")]
        proof = hashtree.prove_inclusion(digests, 0)
        assert proof.path == ()
        assert hashtree.verify_inclusion(digests[0], 1, 0, digests[0], proof)

    def test_eight_leaves_path_length(self):
        digests = [hashtree.leaf_hash(bytes([i])) for i in range(8)]
        for index in range(8):
            proof = hashtree.prove_inclusion(digests, index)
            assert len(proof.path) == 3
            assert [*proof.path] == oracle_path(index, digests)

    def test_exhaustive_round_trip(self):
        rng = random.Random(4)
        for n in range(1, 65):
            leaves = _leaves(n, rng)
            digests = [hashtree.leaf_hash(x) for x in leaves]
            root = hashtree.root_from_leaf_digests(digests)
            for index in range(n):
                proof = hashtree.prove_inclusion(digests, index)
                assert [*proof.path] == oracle_path(index, digests)
                assert hashtree.verify_inclusion(root, n, index, digests[index], proof)
                assert len(proof.path) <= max(1, (n - 1).bit_length())

    def test_mutated_path_rejected(self):
        digests = [hashtree.leaf_hash(bytes([i])) for i in range(11)]
        root = hashtree.root_from_leaf_digests(digests)
        proof = hashtree.prove_inclusion(digests, 5)
        for pos in range(len(proof.path)):
            for byte_index in range(0, 32, 7):
                broken = list(proof.path)
                flipped = bytearray(broken[pos])
                flipped[byte_index] ^= 0x01
                broken[pos] = bytes(flipped)
                bad = hashtree.InclusionProof(5, 11, tuple(broken))
                assert not hashtree.verify_inclusion(root, 11, 5, digests[5], bad)

    def test_wrong_root_rejected(self):
        digests = [hashtree.leaf_hash(bytes([i])) for i in range(9)]
        proof = hashtree.prove_inclusion(digests, 2)
        other = hashtree.leaf_hash(b"other")
        assert not hashtree.verify_inclusion(other, 9, 2, digests[2], proof)

    def test_index_out_of_range(self):
        digests = [hashtree.leaf_hash(b"x")]
        with pytest.raises(ProofError) as err:
            hashtree.prove_inclusion(digests, 1)
        assert err.value.code == "INDEX_OUT_OF_RANGE"
        with pytest.raises(ProofError):
            hashtree.prove_inclusion([], 0)


class TestConsistency:
    def test_identity_case(self):
        digests = [hashtree.leaf_hash(bytes([i])) for i in range(5)]
        root = hashtree.root_from_leaf_digests(digests)
        proof = hashtree.prove_consistency(digests, 5)
        assert proof.path == ()
        assert hashtree.verify_consistency(root, 5, root, 5, proof)

    def test_from_empty(self):
        digests = [hashtree.leaf_hash(bytes([i])) for i in range(4)]
        root = hashtree.root_from_leaf_digests(digests)
        proof = hashtree.prove_consistency(digests, 0)
        assert proof.path == ()
        empty = hashtree.root([])
        assert hashtree.verify_consistency(empty, 0, root, 4, proof)
        assert not hashtree.verify_consistency(root, 0, root, 4, proof)

    def test_three_to_seven(self):
        digests = [hashtree.leaf_hash(bytes([i, i])) for i in range(7)]
        old_root = hashtree.root_from_leaf_digests(digests[:3])
        new_root = hashtree.root_from_leaf_digests(digests)
        proof = hashtree.prove_consistency(digests, 3)
        assert [*proof.path] == oracle_consistency(3, digests)
        assert hashtree.verify_consistency(old_root, 3, new_root, 7, proof)

    def test_exhaustive_pairs(self):
        rng = random.Random(5)
        for n in range(65):
            digests = [hashtree.leaf_hash(rng.randbytes(8)) for _ in range(n)]
            new_root = hashtree.root_from_leaf_digests(digests)
            for old in range(n + 1):
                old_root = hashtree.root_from_leaf_digests(digests[:old])
                proof = hashtree.prove_consistency(digests, old)
                assert [*proof.path] == oracle_consistency(old, digests)
                assert hashtree.verify_consistency(old_root, old, new_root, n, proof)

    def test_rewritten_history_rejected(self):
        rng = random.Random(6)
        digests = [hashtree.leaf_hash(rng.randbytes(8)) for _ in range(9)]
        old = 6
        old_root = hashtree.root_from_leaf_digests(digests[:old])
        proof = hashtree.prove_consistency(digests, old)
        # fork: rewrite block old-1 and extend from there
        forked = list(digests)
        forked[old - 1] = hashtree.leaf_hash(b"rewritten")
        forked_root = hashtree.root_from_leaf_digests(forked)
        assert not hashtree.verify_consistency(old_root, old, forked_root, 9, proof)
        forked_proof = hashtree.prove_consistency(forked, old)
        assert not hashtree.verify_consistency(old_root, old, forked_root, 9, forked_proof)

    def test_shrinking_rejected(self):
        digests = [hashtree.leaf_hash(bytes([i])) for i in range(4)]
        root4 = hashtree.root_from_leaf_digests(digests)
        root2 = hashtree.root_from_leaf_digests(digests[:2])
        proof = hashtree.ConsistencyProof(4, 2, ())
        assert not hashtree.verify_consistency(root4, 4, root2, 2, proof)

    def test_size_out_of_range(self):
        digests = [hashtree.leaf_hash(b"x")]
        with pytest.raises(ProofError) as err:
            hashtree.prove_consistency(digests, 2)
        assert err.value.code == "SIZE_OUT_OF_RANGE"


class TestProperties:
    @settings(max_examples=200, deadline=None)
    @given(st.lists(st.binary(max_size=16), max_size=40))
    def test_root_matches_oracle(self, leaves):
        assert hashtree.root(leaves) == oracle_root(leaves)

    @settings(max_examples=150, deadline=None)
    @given(st.data())
    def test_inclusion_round_trip(self, data):
        leaves = data.draw(st.lists(st.binary(max_size=12), min_size=1, max_size=40))
        index = data.draw(st.integers(min_value=0, max_value=len(leaves) - 1))
        digests = [hashtree.leaf_hash(x) for x in leaves]
        proof = hashtree.prove_inclusion(digests, index)
        root = hashtree.root_from_leaf_digests(digests)
        assert hashtree.verify_inclusion(root, len(leaves), index, digests[index], proof)

    @settings(max_examples=150, deadline=None)
    @given(st.data())
    def test_consistency_round_trip(self, data):
        leaves = data.draw(st.lists(st.binary(max_size=12), min_size=1, max_size=40))
        old = data.draw(st.integers(min_value=0, max_value=len(leaves)))
        digests = [hashtree.leaf_hash(x) for x in leaves]
        proof = hashtree.prove_consistency(digests, old)
        assert hashtree.verify_consistency(
            hashtree.root_from_leaf_digests(digests[:old]),
            old,
            hashtree.root_from_leaf_digests(digests),
            len(leaves),
            proof,
        )

    @settings(max_examples=100, deadline=None)
    @given(st.data())
    def test_tamper_sensitivity(self, data):
        leaves = data.draw(st.lists(st.binary(min_size=1, max_size=12), min_size=1, max_size=32))
        index = data.draw(st.integers(min_value=0, max_value=len(leaves) - 1))
        bit = data.draw(st.integers(min_value=0, max_value=len(leaves[index]) * 8 - 1))
        mutated = bytearray(leaves[index])
        mutated[bit // 8] ^= 1 << (bit % 8)
        tampered = list(leaves)
        tampered[index] = bytes(mutated)
        assert hashtree.root(leaves) != hashtree.root(tampered)


def test_consistency_path_bound_up_to_2_pow_16():
    rng = random.Random(7)
    for exp in range(1, 17):
        n = 2**exp
        digests = [rng.randbytes(32) for _ in range(n)]
        old = rng.randint(1, n - 1)
        proof = hashtree.prove_consistency(digests, old)
        assert len(proof.path) <= 2 * exp
