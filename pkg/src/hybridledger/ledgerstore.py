"""Node-local ledger replica: data blocks, receipt chain, exports.

A replica only advances on a verified notary receipt; staging an extension
computes the would-be digest and proof without touching official state.
Erasure replaces a block's content with its leaf digest, which by
construction leaves the official digest and every proof intact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import hashtree, protocol
from .errors import MalformedError, StoreError
from .hashtree import ConsistencyProof, Digest, InclusionProof
from .identity import PublicKey
from .protocol import AuthorSet, LedgerId, Receipt
from .wire import Reader, Writer

ARCHIVE_MAGIC = b"HYBX"
ARCHIVE_VERSION = 1

TAG_ARCHIVE = 0x08


@dataclass(frozen=True)
class BlockEntry:
    """A data block that is either present or an explicit omission.

    The leaf digest is always carried; for a present entry it equals
    leaf_hash(content) and for an omitted entry it is all that remains.
    """

    leaf_digest: Digest
    content: bytes | None = None

    @classmethod
    def present(cls, content: bytes) -> "BlockEntry":
        return cls(hashtree.leaf_hash(content), content)

    @classmethod
    def omitted(cls, leaf_digest: Digest) -> "BlockEntry":
        return cls(leaf_digest, None)

    @property
    def is_present(self) -> bool:
        return self.content is not None


@dataclass(frozen=True)
class BlockItem:
    """One shared block: its entry plus an inclusion proof for a known root."""

    index: int
    entry: BlockEntry
    proof: InclusionProof


class LedgerReplica:
    def __init__(
        self,
        ledger_id: LedgerId,
        authors: AuthorSet,
        entries: list[BlockEntry],
        receipts: list[Receipt],
        official_digest: Digest,
        official_size: int,
    ) -> None:
        self.ledger_id = ledger_id
        self.authors = authors
        self.entries = entries
        self.receipts = receipts
        self.official_digest = official_digest
        self.official_size = official_size

    @classmethod
    def from_creation(cls, receipt: Receipt, entries: Sequence[bytes | BlockEntry]) -> "LedgerReplica":
        """Build a replica from a creation receipt and its initial blocks."""
        if receipt.kind != protocol.KIND_CREATION:
            raise StoreError("BAD_RECEIPT", "expected a creation receipt")
        request = receipt.request
        normalized = _normalize_entries(entries)
        if len(normalized) != request.initial_size:
            raise StoreError("RECEIPT_MISMATCH", "block count differs from receipt")
        digest = hashtree.root_from_leaf_digests([e.leaf_digest for e in normalized])
        if digest != request.initial_digest:
            raise StoreError("RECEIPT_MISMATCH", "blocks do not produce the receipt digest")
        return cls(
            ledger_id=request.ledger_id,
            authors=request.authors,
            entries=normalized,
            receipts=[receipt],
            official_digest=digest,
            official_size=request.initial_size,
        )

    def leaf_digests(self) -> list[Digest]:
        return [e.leaf_digest for e in self.entries]

    def check_invariants(self) -> None:
        digests = self.leaf_digests()[: self.official_size]
        if hashtree.root_from_leaf_digests(digests) != self.official_digest:
            raise StoreError("RECEIPT_MISMATCH", "entries do not match official digest")
        for seq, receipt in enumerate(self.receipts):
            if receipt.notary_seq != seq:
                raise StoreError("RECEIPT_MISMATCH", "receipt sequence has gaps")
        if not self.receipts or self.receipts[0].kind != protocol.KIND_CREATION:
            raise StoreError("BAD_RECEIPT", "first receipt must be the creation")
        if self.receipts[-1].new_state() != (self.official_digest, self.official_size):
            raise StoreError("RECEIPT_MISMATCH", "official state differs from last receipt")


def _normalize_entries(blocks: Iterable[bytes | BlockEntry]) -> list[BlockEntry]:
    out: list[BlockEntry] = []
    for block in blocks:
        out.append(block if isinstance(block, BlockEntry) else BlockEntry.present(block))
    return out


def stage_blocks(
    replica: LedgerReplica, blocks: Sequence[bytes]
) -> tuple[Digest, int, ConsistencyProof]:
    """Digest, size, and consistency proof for the appended list; no mutation."""
    if not blocks:
        raise StoreError("EMPTY_APPEND", "nothing to append")
    digests = replica.leaf_digests() + [hashtree.leaf_hash(b) for b in blocks]
    new_digest = hashtree.root_from_leaf_digests(digests)
    proof = hashtree.prove_consistency(digests, replica.official_size)
    return new_digest, len(digests), proof


def commit(
    replica: LedgerReplica,
    receipt: Receipt,
    blocks: Sequence[bytes | BlockEntry],
    notary_key: PublicKey,
) -> LedgerReplica:
    """Apply an extension receipt plus its blocks to the replica."""
    reason = protocol.verify_receipt(receipt, notary_key, replica.authors)
    if reason is not None:
        raise StoreError("BAD_RECEIPT", reason)
    if receipt.kind != protocol.KIND_EXTENSION:
        raise StoreError("BAD_RECEIPT", "expected an extension receipt")
    request = receipt.request
    if (request.prev_digest, request.prev_size) != (
        replica.official_digest,
        replica.official_size,
    ):
        raise StoreError("RECEIPT_MISMATCH", "receipt extends a different state")
    if receipt.notary_seq != len(replica.receipts):
        raise StoreError("RECEIPT_MISMATCH", "receipt out of sequence")
    normalized = _normalize_entries(blocks)
    if len(normalized) != request.new_size - request.prev_size:
        raise StoreError("RECEIPT_MISMATCH", "block count differs from receipt")
    digests = replica.leaf_digests() + [e.leaf_digest for e in normalized]
    if hashtree.root_from_leaf_digests(digests) != request.new_digest:
        raise StoreError("RECEIPT_MISMATCH", "blocks do not produce the receipt digest")
    replica.entries.extend(normalized)
    replica.receipts.append(receipt)
    replica.official_digest = request.new_digest
    replica.official_size = request.new_size
    return replica


def erase_block(replica: LedgerReplica, index: int) -> LedgerReplica:
    """Replace a block's content with its digest; history is untouched."""
    if not 0 <= index < replica.official_size:
        raise StoreError("INDEX_OUT_OF_RANGE", f"index {index}")
    entry = replica.entries[index]
    if not entry.is_present:
        raise StoreError("ALREADY_OMITTED", f"index {index}")
    replica.entries[index] = BlockEntry.omitted(entry.leaf_digest)
    return replica


@dataclass(frozen=True)
class ExportArchive:
    ledger_id: LedgerId
    author_set: AuthorSet
    receipts: tuple[Receipt, ...]
    items: tuple[BlockItem, ...]
    claimed_digest: Digest
    claimed_size: int


def make_export(replica: LedgerReplica, indices: Sequence[int]) -> ExportArchive:
    """Self-contained archive of selected blocks with proofs and the receipt chain."""
    for index in indices:
        if not 0 <= index < replica.official_size:
            raise StoreError("INDEX_OUT_OF_RANGE", f"index {index}")
    digests = replica.leaf_digests()[: replica.official_size]
    items = tuple(
        BlockItem(i, replica.entries[i], hashtree.prove_inclusion(digests, i))
        for i in sorted(set(indices))
    )
    return ExportArchive(
        ledger_id=replica.ledger_id,
        author_set=replica.authors,
        receipts=tuple(replica.receipts),
        items=items,
        claimed_digest=replica.official_digest,
        claimed_size=replica.official_size,
    )


def write_block_item(w: Writer, item: BlockItem) -> None:
    # the claimed leaf digest always travels with the entry, so verifiers can
    # tell mangled content apart from a mangled proof
    w.u64(item.index)
    w.fixed(item.entry.leaf_digest, hashtree.DIGEST_BYTES)
    if item.entry.is_present:
        w.u8(1)
        w.var_bytes(item.entry.content)
    else:
        w.u8(0)
    protocol.write_inclusion_proof(w, item.proof)


def read_block_item(r: Reader) -> BlockItem:
    index = r.u64()
    leaf_digest = r.fixed(hashtree.DIGEST_BYTES)
    flag = r.u8()
    if flag == 1:
        entry = BlockEntry(leaf_digest, r.var_bytes())
    elif flag == 0:
        entry = BlockEntry(leaf_digest, None)
    else:
        raise MalformedError("MALFORMED", f"unknown entry flag {flag}")
    return BlockItem(index, entry, protocol.read_inclusion_proof(r))


def encode_archive(archive: ExportArchive) -> bytes:
    w = Writer()
    w.u8(TAG_ARCHIVE)
    w.fixed(archive.ledger_id, protocol.LEDGER_ID_BYTES)
    w.u32(len(archive.author_set.keys))
    for key in archive.author_set.keys:
        w.fixed(key, 32)
    w.u32(len(archive.receipts))
    for receipt in archive.receipts:
        w.raw(protocol.encode(receipt))
    w.u32(len(archive.items))
    for item in archive.items:
        write_block_item(w, item)
    w.fixed(archive.claimed_digest, hashtree.DIGEST_BYTES)
    w.u64(archive.claimed_size)
    return w.getvalue()


def decode_archive(data: bytes) -> ExportArchive:
    r = Reader(data)
    if r.u8() != TAG_ARCHIVE:
        raise MalformedError("MALFORMED", "not an export archive")
    ledger_id = r.fixed(protocol.LEDGER_ID_BYTES)
    keys = tuple(r.fixed(32) for _ in range(r.u32()))
    try:
        author_set = AuthorSet(keys)
    except ValueError as exc:
        raise MalformedError("MALFORMED", str(exc)) from exc
    receipts = []
    for _ in range(r.u32()):
        message = protocol.read_message(r)
        if not isinstance(message, Receipt):
            raise MalformedError("MALFORMED", "archive may only embed receipts")
        receipts.append(message)
    items = tuple(read_block_item(r) for _ in range(r.u32()))
    claimed_digest = r.fixed(hashtree.DIGEST_BYTES)
    claimed_size = r.u64()
    r.expect_end()
    return ExportArchive(
        ledger_id, author_set, tuple(receipts), items, claimed_digest, claimed_size
    )


def write_archive(archive: ExportArchive, path: str | Path) -> None:
    Path(path).write_bytes(ARCHIVE_MAGIC + bytes([ARCHIVE_VERSION]) + encode_archive(archive))


def read_archive(path: str | Path) -> ExportArchive:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise MalformedError("IO_ERROR", str(exc)) from exc
    if len(raw) < 5 or raw[:4] != ARCHIVE_MAGIC or raw[4] != ARCHIVE_VERSION:
        raise MalformedError("MALFORMED_FILE", f"{path}: not an export archive")
    try:
        return decode_archive(raw[5:])
    except MalformedError as exc:
        raise MalformedError("MALFORMED_FILE", str(exc)) from exc


def archive_to_json(archive: ExportArchive) -> dict:
    return {
        "type": "export_archive",
        "ledger_id": archive.ledger_id.hex(),
        "author_set": [k.hex() for k in archive.author_set.keys],
        "receipts": [protocol.to_json_dict(r) for r in archive.receipts],
        "items": [
            {
                "index": item.index,
                "present": item.entry.is_present,
                "content": item.entry.content.hex() if item.entry.is_present else None,
                "leaf_digest": item.entry.leaf_digest.hex(),
                "proof": {
                    "leaf_index": item.proof.leaf_index,
                    "tree_size": item.proof.tree_size,
                    "path": [d.hex() for d in item.proof.path],
                },
            }
            for item in archive.items
        ],
        "claimed_digest": archive.claimed_digest.hex(),
        "claimed_size": archive.claimed_size,
    }
