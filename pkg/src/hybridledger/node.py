"""Network participant.

A node builds signed requests against its local replica, processes gossiped
receipts, fetches and verifies data blocks for ledgers it participates in,
serves blocks under the dissemination policy, and turns observed notary
misbehavior into self-contained proofs.

Processing a receipt returns a list of actions (gossip forwards, block
fetches, emitted proofs) for the surrounding transport to carry out; the
node itself never talks to the network directly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

from . import hashtree, identity, ledgerstore, notary as notary_mod, protocol
from .anchor import AnchorLog, BatchPayload, ExtendPayload, InitPayload
from .errors import NodeError, NotaryError, StoreError
from .hashtree import Digest
from .identity import ActorId, KeyPair, PublicKey
from .ledgerstore import BlockEntry, BlockItem, ExportArchive, LedgerReplica
from .protocol import (
    AuthorSet,
    CreationRequest,
    ExtensionRequest,
    LedgerId,
    Receipt,
)

FORK = "FORK"
UNAUTHORIZED_ACCEPT = "UNAUTHORIZED_ACCEPT"
ANCHOR_DESYNC = "ANCHOR_DESYNC"

REFUSED = "REFUSED"


@dataclass(frozen=True)
class MisbehaviorProof:
    """Cryptographic evidence of notary misbehavior, verifiable externally."""

    kind: str
    ledger_id: LedgerId
    receipts: tuple[Receipt, ...]
    anchor_txn_id: int | None = None


def proof_to_json(proof: MisbehaviorProof) -> dict:
    return {
        "kind": proof.kind,
        "ledger_id": proof.ledger_id.hex(),
        "receipts": [protocol.encode(r).hex() for r in proof.receipts],
        "anchor_txn_id": proof.anchor_txn_id,
    }


def proof_from_json(data: Mapping) -> MisbehaviorProof:
    return MisbehaviorProof(
        kind=data["kind"],
        ledger_id=bytes.fromhex(data["ledger_id"]),
        receipts=tuple(protocol.decode(bytes.fromhex(r)) for r in data["receipts"]),
        anchor_txn_id=data.get("anchor_txn_id"),
    )


@dataclass(frozen=True)
class GossipAction:
    receipt: Receipt
    hop: int = 0


@dataclass(frozen=True)
class FetchAction:
    ledger_id: LedgerId
    indices: tuple[int, ...]
    target: ActorId


@dataclass(frozen=True)
class PullReceiptsAction:
    """Gap repair: ask a holder for receipts the push gossip missed."""

    ledger_id: LedgerId
    seqs: tuple[int, ...]
    target: ActorId
    hop: int = 0


@dataclass(frozen=True)
class ProofAction:
    proof: MisbehaviorProof


Action = GossipAction | FetchAction | PullReceiptsAction | ProofAction


@dataclass
class _PendingRetry:
    blocks: list[bytes]
    co_signers: tuple[KeyPair, ...] = ()


def conflict_key(receipt: Receipt) -> tuple:
    """Conflict-detection key: what official state this receipt claims to extend."""
    prev = receipt.prev_state()
    if prev is None:
        return (receipt.ledger_id, b"", 0)
    return (receipt.ledger_id, prev[0], prev[1])


class Node:
    def __init__(
        self,
        keypair: KeyPair,
        notary_key: PublicKey,
        notary=None,
        registry: Mapping[ActorId, PublicKey] | None = None,
        peers: Sequence[ActorId] = (),
    ) -> None:
        self.keypair = keypair
        self.notary_key = notary_key
        self.notary = notary
        self.registry: dict[ActorId, PublicKey] = dict(registry or {})
        self.peers: tuple[ActorId, ...] = tuple(peers)
        self.replicas: dict[LedgerId, LedgerReplica] = {}
        self.receipt_index: dict[LedgerId, dict[int, Receipt]] = {}
        self.emitted_proofs: list[MisbehaviorProof] = []
        self._by_base: dict[tuple, dict[Digest, Receipt]] = {}
        self._staged: dict[LedgerId, dict[int, BlockEntry]] = {}
        self._seen: set[bytes] = set()
        self._proof_keys: set[tuple] = set()
        self._retries: dict[LedgerId, _PendingRetry] = {}
        self._fetch_rotation: dict[LedgerId, int] = {}

    @property
    def actor_id(self) -> ActorId:
        return identity.actor_id(self.keypair.public)

    # -- authoring ------------------------------------------------------------

    def create_ledger(
        self, authors: Iterable[PublicKey], blocks: Sequence[bytes], nonce: bytes
    ) -> tuple[LedgerReplica, Receipt]:
        author_set = AuthorSet.from_keys(authors)
        if self.keypair.public not in author_set:
            raise NodeError("SELF_NOT_AUTHOR", "own key missing from author set")
        if not blocks:
            raise NodeError("EMPTY_APPEND", "a ledger starts with at least one block")
        ledger_id = protocol.new_ledger_id(self.keypair.public, nonce)
        request = CreationRequest(
            ledger_id=ledger_id,
            authors=author_set,
            initial_digest=hashtree.root(list(blocks)),
            initial_size=len(blocks),
            creator_key=self.keypair.public,
        )
        request = protocol.sign_creation(request, self.keypair.secret)
        receipt = self._call_create(request, blocks)
        replica = LedgerReplica.from_creation(receipt, list(blocks))
        self.replicas[ledger_id] = replica
        self.receipt_index.setdefault(ledger_id, {})[0] = receipt
        return replica, receipt

    def extend_ledger(
        self,
        ledger_id: LedgerId,
        blocks: Sequence[bytes],
        co_signers: Sequence[KeyPair] = (),
    ) -> Receipt | None:
        """Extend a ledger this node participates in.

        Returns the receipt, or None when the request hit a stale official
        digest; in that case one automatic retry fires after the replica
        catches up with the newer receipts (see maybe_retry). ``co_signers``
        adds further author signatures for ledgers whose policy demands them.
        """
        replica = self.replicas.get(ledger_id)
        if replica is None or self.keypair.public not in replica.authors:
            raise NodeError("NOT_PARTICIPANT", "no replica or not an author")
        try:
            return self._send_extension(replica, list(blocks), co_signers)
        except NotaryError as exc:
            if exc.code == "STALE_DIGEST" and ledger_id not in self._retries:
                self._retries[ledger_id] = _PendingRetry(list(blocks), tuple(co_signers))
                return None
            raise

    def _send_extension(
        self,
        replica: LedgerReplica,
        blocks: list[bytes],
        co_signers: Sequence[KeyPair] = (),
    ) -> Receipt:
        new_digest, new_size, proof = ledgerstore.stage_blocks(replica, blocks)
        signers = [self.keypair, *co_signers]
        request = ExtensionRequest(
            ledger_id=replica.ledger_id,
            prev_digest=replica.official_digest,
            prev_size=replica.official_size,
            new_digest=new_digest,
            new_size=new_size,
            proof=proof,
            author_keys=tuple(kp.public for kp in signers),
        )
        request = protocol.sign_extension(request, [kp.secret for kp in signers])
        receipt = self._call_extend(request, blocks)
        try:
            ledgerstore.commit(replica, receipt, blocks, self.notary_key)
        except StoreError:
            # the notary answered with a receipt that does not extend our
            # official state; keep it as evidence (on_receipt will index it
            # and detect conflicts) but leave the replica untouched
            return receipt
        self.receipt_index.setdefault(replica.ledger_id, {})[receipt.notary_seq] = receipt
        return receipt

    def wipe_ledger(self, ledger_id: LedgerId) -> None:
        """Drop local block data for a ledger (storage loss); receipts are kept."""
        self.replicas.pop(ledger_id, None)
        self._staged.pop(ledger_id, None)

    def maybe_retry(self, ledger_id: LedgerId) -> Receipt | None:
        """Fire the pending stale retry once the replica has caught up."""
        retry = self._retries.get(ledger_id)
        replica = self.replicas.get(ledger_id)
        if retry is None or replica is None:
            return None
        newest = max(self.receipt_index.get(ledger_id, {}), default=-1)
        if newest >= 0 and len(replica.receipts) <= newest:
            return None  # still behind the newest known receipt
        del self._retries[ledger_id]
        return self._send_extension(replica, retry.blocks, retry.co_signers)

    def _call_create(self, request, blocks):
        if self.notary is None:
            raise NodeError("NO_NOTARY", "node has no notary endpoint")
        if getattr(self.notary.config, "mode_repository", False):
            return self.notary.handle_create(request, blocks)
        return self.notary.handle_create(request)

    def _call_extend(self, request, blocks):
        if self.notary is None:
            raise NodeError("NO_NOTARY", "node has no notary endpoint")
        if getattr(self.notary.config, "mode_repository", False):
            return self.notary.handle_extend(request, blocks)
        return self.notary.handle_extend(request)

    # -- receipt dissemination --------------------------------------------------

    def on_receipt(self, receipt: Receipt, hop: int = 0) -> list[Action]:
        encoded = protocol.encode(receipt)
        if encoded in self._seen:
            return []
        if not protocol.notary_signed(receipt, self.notary_key):
            return []  # not the notary's statement; drop silently
        self._seen.add(encoded)
        lid = receipt.ledger_id
        actions: list[Action] = []

        actions.extend(self._detect_conflicts(receipt))

        creation = self._creation_receipt(lid, receipt)
        authorized = True
        if creation is not None:
            authors = creation.request.authors
            reason = protocol.verify_receipt(receipt, self.notary_key, authors)
            if reason in (protocol.AUTHOR_NOT_IN_SET, protocol.BAD_AUTHOR_SIG):
                authorized = False
                actions.extend(
                    self._emit(MisbehaviorProof(UNAUTHORIZED_ACCEPT, lid, (receipt, creation)))
                )
            elif reason is not None:
                return actions  # malformed beyond use; keep conflict evidence only

        index = self.receipt_index.setdefault(lid, {})
        if authorized and receipt.notary_seq not in index:
            index[receipt.notary_seq] = receipt
            if receipt.kind == protocol.KIND_CREATION:
                # a creation receipt may authorize earlier-arrived extensions
                actions.extend(self._revalidate(lid, receipt))

        actions.append(GossipAction(receipt, hop))

        missing = self._missing_seqs(lid)
        if missing:
            target = self._author_of(receipt)
            if target != self.actor_id:
                actions.append(PullReceiptsAction(lid, missing, target, hop))

        if authorized:
            actions.extend(self.plan_fetch(lid))
        self._advance(lid)
        return actions

    def _missing_seqs(self, lid: LedgerId) -> tuple[int, ...]:
        index = self.receipt_index.get(lid, {})
        if not index:
            return ()
        return tuple(s for s in range(max(index)) if s not in index)

    def serve_receipts(self, lid: LedgerId, seqs: Sequence[int]) -> list[Receipt]:
        """Receipts disseminate freely; anyone may pull what we hold."""
        index = self.receipt_index.get(lid, {})
        return [index[s] for s in seqs if s in index]

    def _creation_receipt(self, lid: LedgerId, receipt: Receipt) -> Receipt | None:
        if receipt.kind == protocol.KIND_CREATION:
            return receipt
        return self.receipt_index.get(lid, {}).get(0)

    def _detect_conflicts(self, receipt: Receipt) -> list[Action]:
        key = conflict_key(receipt)
        new_digest, _ = receipt.new_state()
        rivals = self._by_base.setdefault(key, {})
        actions: list[Action] = []
        for other_digest, other in rivals.items():
            if other_digest != new_digest:
                actions.extend(
                    self._emit(MisbehaviorProof(FORK, receipt.ledger_id, (other, receipt)))
                )
        rivals.setdefault(new_digest, receipt)
        return actions

    def _revalidate(self, lid: LedgerId, creation: Receipt) -> list[Action]:
        authors = creation.request.authors
        actions: list[Action] = []
        index = self.receipt_index.get(lid, {})
        for seq in sorted(list(index)):
            receipt = index[seq]
            if receipt.kind != protocol.KIND_EXTENSION:
                continue
            reason = protocol.verify_receipt(receipt, self.notary_key, authors)
            if reason in (protocol.AUTHOR_NOT_IN_SET, protocol.BAD_AUTHOR_SIG):
                del index[seq]
                actions.extend(
                    self._emit(MisbehaviorProof(UNAUTHORIZED_ACCEPT, lid, (receipt, creation)))
                )
        return actions

    def _emit(self, proof: MisbehaviorProof) -> list[Action]:
        key = (
            proof.kind,
            proof.ledger_id,
            tuple(sorted(protocol.encode(r) for r in proof.receipts)),
            proof.anchor_txn_id,
        )
        if key in self._proof_keys:
            return []
        self._proof_keys.add(key)
        self.emitted_proofs.append(proof)
        return [ProofAction(proof)]

    # -- block dissemination ------------------------------------------------------

    def participates(self, lid: LedgerId) -> bool:
        creation = self.receipt_index.get(lid, {}).get(0)
        if creation is None:
            return False
        return self.keypair.public in creation.request.authors

    def plan_fetch(self, lid: LedgerId, rotate: bool = False) -> list[Action]:
        """Request the missing block range; ``rotate`` moves to the next source."""
        if not self.participates(lid):
            return []
        index = self.receipt_index[lid]
        newest = index[max(index)]
        replica = self.replicas.get(lid)
        have = len(replica.entries) if replica else 0
        staged = self._staged.get(lid, {})
        _, target_size = newest.new_state()
        missing = tuple(i for i in range(have, target_size) if i not in staged)
        if not missing:
            return []
        if rotate:
            self._fetch_rotation[lid] = self._fetch_rotation.get(lid, 0) + 1
        rotation = self._fetch_rotation.get(lid, 0)
        target = self._author_of(newest) if rotation == 0 else None
        if target is None or target == self.actor_id:
            target = self._next_source(lid, rotation)
        if target is None or target == self.actor_id:
            return []
        return [FetchAction(lid, missing, target)]

    def _author_of(self, receipt: Receipt) -> ActorId:
        signers = protocol.request_signers(receipt.request)
        return identity.actor_id(signers[0])

    def _next_source(self, lid: LedgerId, attempt: int) -> ActorId | None:
        creation = self.receipt_index.get(lid, {}).get(0)
        if creation is None:
            return None
        members = [
            identity.actor_id(k)
            for k in creation.request.authors.keys
            if identity.actor_id(k) != self.actor_id
        ]
        if not members:
            return None
        return sorted(members)[attempt % len(members)]

    def serve_blocks(
        self, lid: LedgerId, indices: Sequence[int], requester: ActorId
    ) -> list[BlockItem]:
        """Blocks with inclusion proofs; full content only for author-set members."""
        replica = self.replicas.get(lid)
        if replica is None:
            raise NodeError("UNKNOWN_LEDGER", lid.hex())
        requester_key = self.registry.get(requester)
        if requester_key is None or requester_key not in replica.authors:
            raise NodeError(REFUSED, "requester is not in the ledger author set")
        digests = replica.leaf_digests()[: replica.official_size]
        items = []
        for index in sorted(set(indices)):
            if not 0 <= index < replica.official_size:
                continue
            items.append(
                BlockItem(index, replica.entries[index], hashtree.prove_inclusion(digests, index))
            )
        return items

    def ingest_blocks(
        self, lid: LedgerId, items: Sequence[BlockItem]
    ) -> tuple[dict[int, bool], list[Action]]:
        """Verify offered blocks against the official history; stage the good ones.

        A block is accepted iff its inclusion proof checks out against a
        known receipt's digest at the proof's tree size and, when content is
        present, the content hashes to the proven leaf digest. Rejected
        blocks are discarded and a refetch from the next source is planned.
        """
        verdicts: dict[int, bool] = {}
        staged = self._staged.setdefault(lid, {})
        roots_by_size = self._official_roots(lid)
        for item in items:
            # conflicting receipts can claim different roots for one size;
            # any notary-signed root makes the block well-attested, and the
            # commit path still checks the exact digest chain
            ok = any(
                hashtree.verify_inclusion(
                    root,
                    item.proof.tree_size,
                    item.index,
                    item.entry.leaf_digest,
                    item.proof,
                )
                for root in roots_by_size.get(item.proof.tree_size, ())
            )
            if ok and item.entry.is_present:
                ok = hashtree.leaf_hash(item.entry.content) == item.entry.leaf_digest
            verdicts[item.index] = bool(ok)
            if ok and item.index not in staged:
                staged[item.index] = item.entry
        self._advance(lid)
        actions: list[Action] = []
        if any(not ok for ok in verdicts.values()):
            actions.extend(self.plan_fetch(lid, rotate=True))
        else:
            self._fetch_rotation.pop(lid, None)
        retry_receipt = self.maybe_retry(lid)
        if retry_receipt is not None:
            actions.append(GossipAction(retry_receipt, 0))
        return verdicts, actions

    def _official_roots(self, lid: LedgerId) -> dict[int, list[Digest]]:
        roots: dict[int, list[Digest]] = {}
        for receipt in self.receipt_index.get(lid, {}).values():
            digest, size = receipt.new_state()
            roots.setdefault(size, []).append(digest)
        return roots

    def _advance(self, lid: LedgerId) -> None:
        """Commit pending receipts whose block ranges are fully staged."""
        index = self.receipt_index.get(lid, {})
        staged = self._staged.get(lid, {})
        while True:
            replica = self.replicas.get(lid)
            next_seq = len(replica.receipts) if replica else 0
            receipt = index.get(next_seq)
            if receipt is None:
                return
            _, new_size = receipt.new_state()
            prev_size = 0 if replica is None else replica.official_size
            needed = range(prev_size, new_size)
            if any(i not in staged for i in needed):
                return
            entries = [staged[i] for i in needed]
            try:
                if replica is None:
                    replica = LedgerReplica.from_creation(receipt, entries)
                    self.replicas[lid] = replica
                else:
                    ledgerstore.commit(replica, receipt, entries, self.notary_key)
            except StoreError:
                # staged data does not fit this receipt (e.g. blocks of a
                # forked branch); drop it so a refetch can repopulate
                for i in needed:
                    staged.pop(i, None)
                return
            for i in needed:
                del staged[i]

    # -- erasure, export, recovery ----------------------------------------------

    def erase(self, lid: LedgerId, index: int) -> None:
        replica = self.replicas.get(lid)
        if replica is None:
            raise NodeError("UNKNOWN_LEDGER", lid.hex())
        ledgerstore.erase_block(replica, index)

    def export(self, lid: LedgerId, indices: Sequence[int] | None = None) -> ExportArchive:
        replica = self.replicas.get(lid)
        if replica is None:
            raise NodeError("UNKNOWN_LEDGER", lid.hex())
        if indices is None:
            indices = range(replica.official_size)
        return ledgerstore.make_export(replica, list(indices))

    def recover_from_repository(self, lid: LedgerId) -> LedgerReplica:
        """Rebuild a lost replica from gossiped receipts plus the notary store."""
        index = self.receipt_index.get(lid, {})
        if sorted(index) != list(range(len(index))) or 0 not in index:
            raise NodeError("UNKNOWN_LEDGER", "receipt chain incomplete")
        chain = [index[seq] for seq in range(len(index))]
        last = chain[-1]
        _, size = last.new_state()
        access = notary_mod.make_access_request(self.keypair, lid, range(size))
        blocks = self.notary.serve_blocks(access)
        replica = LedgerReplica.from_creation(chain[0], blocks[: chain[0].request.initial_size])
        cursor = chain[0].request.initial_size
        for receipt in chain[1:]:
            _, new_size = receipt.new_state()
            ledgerstore.commit(replica, receipt, blocks[cursor:new_size], self.notary_key)
            cursor = new_size
        self.replicas[lid] = replica
        self._staged.pop(lid, None)
        return replica

    # -- internal audit -----------------------------------------------------------

    def audit_internal(
        self,
        anchor_log: AnchorLog,
        now_ms: int | None = None,
        delayed_interval_ms: int | None = None,
    ) -> list[MisbehaviorProof]:
        """Compare every known receipt against the public anchor log.

        Resolved anchor references must point at a matching transaction from
        the notary address. Pending receipts (delayed mode) must be covered
        by a later batch; they are only flagged once the configured interval
        has elapsed without coverage.
        """
        notary_addr = identity.actor_id(self.notary_key)
        txns = anchor_log.read_all(notary_addr, now_ms)
        by_id = {t.txn_id: t for t in txns}
        covered = self._anchored_steps(txns)
        proofs: list[MisbehaviorProof] = []
        for lid in sorted(self.receipt_index):
            for seq in sorted(self.receipt_index[lid]):
                receipt = self.receipt_index[lid][seq]
                if receipt.anchor_ref is not None:
                    txn = by_id.get(receipt.anchor_ref)
                    if txn is None or not anchor_payload_matches(txn.payload, receipt):
                        proofs.extend(
                            p.proof
                            for p in self._emit(
                                MisbehaviorProof(ANCHOR_DESYNC, lid, (receipt,), receipt.anchor_ref)
                            )
                        )
                else:
                    key = (lid, *receipt.new_state())
                    if key in covered:
                        continue
                    age_known = now_ms is not None and delayed_interval_ms is not None
                    if not age_known or now_ms - receipt.timestamp_ms > delayed_interval_ms:
                        proofs.extend(
                            p.proof
                            for p in self._emit(MisbehaviorProof(ANCHOR_DESYNC, lid, (receipt,)))
                        )
        return proofs

    def _anchored_steps(self, txns) -> set[tuple]:
        covered: set[tuple] = set()
        for txn in txns:
            payload = txn.payload
            if isinstance(payload, InitPayload):
                covered.add((payload.ledger_id, payload.digest, payload.size))
            elif isinstance(payload, ExtendPayload):
                covered.add((payload.ledger_id, payload.new_digest, payload.new_size))
            elif isinstance(payload, BatchPayload):
                for step in payload.steps:
                    covered.add((payload.ledger_id, step.new_digest, step.new_size))
        return covered


def anchor_payload_matches(payload, receipt: Receipt) -> bool:
    digest, size = receipt.new_state()
    if receipt.kind == protocol.KIND_CREATION:
        return (
            isinstance(payload, InitPayload)
            and payload.ledger_id == receipt.ledger_id
            and payload.digest == digest
            and payload.size == size
        )
    request = receipt.request
    return (
        isinstance(payload, ExtendPayload)
        and payload.ledger_id == receipt.ledger_id
        and payload.prev_digest == request.prev_digest
        and payload.prev_size == request.prev_size
        and payload.new_digest == digest
        and payload.new_size == size
    )
