"""Merkle tree over ordered data blocks.

RFC 6962 construction with SHA-256: leaves are hashed with a 0x00 domain
prefix, interior nodes with 0x01, and a tree is split at the largest power
of two strictly below its size. The digest of the empty list is the hash of
the empty string. Inclusion proofs tie one leaf to a root; consistency
proofs tie an older root to a newer one covering it as a prefix.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .errors import ProofError

Digest = bytes

DIGEST_BYTES = 32

LEAF_PREFIX = b"\x00"
NODE_PREFIX = b"\x01"

EMPTY_ROOT: Digest = hashlib.sha256(b"").digest()


def leaf_hash(data: bytes) -> Digest:
    return hashlib.sha256(LEAF_PREFIX + data).digest()


def node_hash(left: Digest, right: Digest) -> Digest:
    return hashlib.sha256(NODE_PREFIX + left + right).digest()


@dataclass(frozen=True)
class InclusionProof:
    """Audit path for one leaf, ordered leaf-to-root."""

    leaf_index: int
    tree_size: int
    path: tuple[Digest, ...] = field(default_factory=tuple)


@dataclass(frozen=True)
class ConsistencyProof:
    """Nodes proving the first ``old_size`` leaves are a prefix of all ``new_size``."""

    old_size: int
    new_size: int
    path: tuple[Digest, ...] = field(default_factory=tuple)


def _largest_power_of_two_below(n: int) -> int:
    # largest k = 2^x with k < n, defined for n >= 2
    return 1 << (n - 1).bit_length() - 1


def root_from_leaf_digests(leaf_digests: list[Digest] | tuple[Digest, ...]) -> Digest:
    """Merkle root over precomputed leaf digests (incremental stack merge)."""
    if not leaf_digests:
        return EMPTY_ROOT
    # stack of (subtree_size, subtree_hash); equal-size neighbours merge eagerly
    stack: list[tuple[int, Digest]] = []
    for digest in leaf_digests:
        stack.append((1, digest))
        while len(stack) >= 2 and stack[-1][0] == stack[-2][0]:
            rs, rh = stack.pop()
            ls, lh = stack.pop()
            stack.append((ls + rs, node_hash(lh, rh)))
    size, acc = stack.pop()
    while stack:
        ls, lh = stack.pop()
        size, acc = ls + size, node_hash(lh, acc)
    return acc


def root(leaves: list[bytes] | tuple[bytes, ...]) -> Digest:
    return root_from_leaf_digests([leaf_hash(x) for x in leaves])


def _range_root(leaf_digests, lo: int, hi: int) -> Digest:
    return root_from_leaf_digests(leaf_digests[lo:hi])


def prove_inclusion(leaf_digests, index: int) -> InclusionProof:
    n = len(leaf_digests)
    if n == 0 or not 0 <= index < n:
        raise ProofError("INDEX_OUT_OF_RANGE", f"index {index} in tree of {n}")
    path_rev: list[Digest] = []
    lo, hi = 0, n
    while hi - lo > 1:
        k = _largest_power_of_two_below(hi - lo)
        if index < lo + k:
            path_rev.append(_range_root(leaf_digests, lo + k, hi))
            hi = lo + k
        else:
            path_rev.append(_range_root(leaf_digests, lo, lo + k))
            lo = lo + k
    return InclusionProof(index, n, tuple(reversed(path_rev)))


def verify_inclusion(
    root_digest: Digest,
    tree_size: int,
    index: int,
    leaf_digest: Digest,
    proof: InclusionProof,
) -> bool:
    if proof.leaf_index != index or proof.tree_size != tree_size:
        return False
    if index < 0 or tree_size <= 0 or index >= tree_size:
        return False
    fn, sn = index, tree_size - 1
    acc = leaf_digest
    for sibling in proof.path:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            acc = node_hash(sibling, acc)
            if not fn & 1:
                while fn and not fn & 1:
                    fn >>= 1
                    sn >>= 1
        else:
            acc = node_hash(acc, sibling)
        fn >>= 1
        sn >>= 1
    return sn == 0 and acc == root_digest


def prove_consistency(leaf_digests, old_size: int) -> ConsistencyProof:
    n = len(leaf_digests)
    if not 0 <= old_size <= n:
        raise ProofError("SIZE_OUT_OF_RANGE", f"old size {old_size} beyond {n}")
    if old_size == 0 or old_size == n:
        return ConsistencyProof(old_size, n, ())
    path_rev: list[Digest] = []
    lo, hi = 0, n
    complete = True  # the old tree is so far a complete subtree of the walk
    while True:
        if old_size == hi:
            if not complete:
                path_rev.append(_range_root(leaf_digests, lo, hi))
            break
        k = _largest_power_of_two_below(hi - lo)
        if old_size <= lo + k:
            path_rev.append(_range_root(leaf_digests, lo + k, hi))
            hi = lo + k
        else:
            path_rev.append(_range_root(leaf_digests, lo, lo + k))
            lo = lo + k
            complete = False
    return ConsistencyProof(old_size, n, tuple(reversed(path_rev)))


def verify_consistency(
    old_root: Digest,
    old_size: int,
    new_root: Digest,
    new_size: int,
    proof: ConsistencyProof,
) -> bool:
    if proof.old_size != old_size or proof.new_size != new_size:
        return False
    if old_size < 0 or old_size > new_size:
        return False
    if old_size == new_size:
        return not proof.path and old_root == new_root
    if old_size == 0:
        # any history extends the empty history; the old root must be the
        # empty-tree digest by convention
        return not proof.path and old_root == EMPTY_ROOT
    path = list(proof.path)
    # when the old tree is a complete subtree its root is the implicit first node
    if old_size & (old_size - 1) == 0:
        path.insert(0, old_root)
    if not path:
        return False
    fn, sn = old_size - 1, new_size - 1
    while fn & 1:
        fn >>= 1
        sn >>= 1
    fr = sr = path[0]
    for sibling in path[1:]:
        if sn == 0:
            return False
        if fn & 1 or fn == sn:
            fr = node_hash(sibling, fr)
            sr = node_hash(sibling, sr)
            if not fn & 1:
                while fn and not fn & 1:
                    fn >>= 1
                    sn >>= 1
        else:
            sr = node_hash(sr, sibling)
        fn >>= 1
        sn >>= 1
    return sn == 0 and fr == old_root and sr == new_root
