"""External-actor verification.

Everything here works from the public anchor log, the notary public key,
and self-contained artifacts (export archives, misbehavior proofs). Node
state is never consulted, so any outside party can run the same checks.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

from . import hashtree, identity, protocol
from .anchor import AnchorLog, BatchPayload, ExtendPayload, InitPayload
from .hashtree import Digest
from .identity import ActorId, PublicKey
from .ledgerstore import ExportArchive
from .node import (
    ANCHOR_DESYNC,
    FORK,
    UNAUTHORIZED_ACCEPT,
    MisbehaviorProof,
    anchor_payload_matches,
    conflict_key,
)
from .protocol import LedgerId

DUPLICATE_INIT = "DUPLICATE_INIT"
INVALID_PROOF = "INVALID_PROOF"
BROKEN_CHAIN = "BROKEN_CHAIN"
MALFORMED_TXN = "MALFORMED_TXN"

HISTORY_INCOHERENT = "HISTORY_INCOHERENT"
BAD_RECEIPT = "BAD_RECEIPT"
RECEIPT_ANCHOR_MISMATCH = "RECEIPT_ANCHOR_MISMATCH"
BAD_INCLUSION = "BAD_INCLUSION"
CONTENT_MISMATCH = "CONTENT_MISMATCH"


@dataclass(frozen=True)
class Violation:
    kind: str
    txn_ids: tuple[int, ...]
    detail: str


@dataclass(frozen=True)
class LedgerAudit:
    ledger_id: LedgerId
    violations: tuple[Violation, ...]
    init_digest: Digest | None
    init_size: int
    steps: tuple[tuple[Digest, int, Digest, int], ...]  # coherent (prev, new) states

    @property
    def coherent(self) -> bool:
        return not self.violations

    def final_state(self) -> tuple[Digest, int] | None:
        if self.init_digest is None:
            return None
        if self.steps:
            last = self.steps[-1]
            return last[2], last[3]
        return self.init_digest, self.init_size


@dataclass(frozen=True)
class AuditReport:
    ledgers: tuple[LedgerAudit, ...]

    @property
    def all_coherent(self) -> bool:
        return all(l.coherent for l in self.ledgers)

    def for_ledger(self, ledger_id: LedgerId) -> LedgerAudit | None:
        for entry in self.ledgers:
            if entry.ledger_id == ledger_id:
                return entry
        return None

    def to_json_lines(self) -> list[str]:
        lines = []
        for entry in self.ledgers:
            lines.append(
                json.dumps(
                    {
                        "ledger_id": entry.ledger_id.hex(),
                        "status": "coherent" if entry.coherent else "violations",
                        "violations": [
                            {
                                "kind": v.kind,
                                "txn_ids": list(v.txn_ids),
                                "detail": v.detail,
                            }
                            for v in entry.violations
                        ],
                    },
                    sort_keys=True,
                )
            )
        return lines


class _LedgerTrace:
    def __init__(self, ledger_id: LedgerId) -> None:
        self.ledger_id = ledger_id
        self.violations: list[Violation] = []
        self.init_digest: Digest | None = None
        self.init_size = 0
        self.init_txn: int | None = None
        self.steps: list[tuple[Digest, int, Digest, int]] = []
        self.state: tuple[Digest, int] | None = None


def audit_anchor(anchor_log: AnchorLog, notary_address: ActorId) -> AuditReport:
    """Check the public history per ledger: one init, valid proofs, one chain."""
    traces: dict[LedgerId, _LedgerTrace] = {}
    for txn in anchor_log.read_all(notary_address):
        payload = txn.payload
        trace = traces.setdefault(payload.ledger_id, _LedgerTrace(payload.ledger_id))
        if isinstance(payload, InitPayload):
            if trace.init_txn is not None:
                trace.violations.append(
                    Violation(
                        DUPLICATE_INIT,
                        (trace.init_txn, txn.txn_id),
                        "second initialization for this ledger id",
                    )
                )
                continue
            trace.init_txn = txn.txn_id
            trace.init_digest = payload.digest
            trace.init_size = payload.size
            trace.state = (payload.digest, payload.size)
        elif isinstance(payload, (ExtendPayload, BatchPayload)):
            if trace.state is None:
                trace.violations.append(
                    Violation(
                        MALFORMED_TXN, (txn.txn_id,), "extension precedes initialization"
                    )
                )
                continue
            steps = payload.steps if isinstance(payload, BatchPayload) else (payload,)
            _apply_steps(trace, txn.txn_id, steps)
    ledgers = tuple(
        LedgerAudit(
            t.ledger_id,
            tuple(t.violations),
            t.init_digest,
            t.init_size,
            tuple(t.steps),
        )
        for t in sorted(traces.values(), key=lambda t: t.ledger_id)
    )
    return AuditReport(ledgers)


def _apply_steps(trace: _LedgerTrace, txn_id: int, steps) -> None:
    state = trace.state
    pending: list[tuple[Digest, int, Digest, int]] = []
    for step in steps:
        if not hashtree.verify_consistency(
            step.prev_digest, step.prev_size, step.new_digest, step.new_size, step.proof
        ):
            trace.violations.append(
                Violation(INVALID_PROOF, (txn_id,), "consistency proof does not verify")
            )
            return
        if (step.prev_digest, step.prev_size) != state:
            trace.violations.append(
                Violation(
                    BROKEN_CHAIN,
                    (txn_id,),
                    "previous state does not match the official chain",
                )
            )
            return
        state = (step.new_digest, step.new_size)
        pending.append((step.prev_digest, step.prev_size, step.new_digest, step.new_size))
    trace.steps.extend(pending)
    trace.state = state


def verify_export(
    archive: ExportArchive, anchor_log: AnchorLog, notary_key: PublicKey
) -> str | None:
    """None when the archive verifies against the public history, else a reason."""
    notary_address = identity.actor_id(notary_key)
    report = audit_anchor(anchor_log, notary_address)
    audit = report.for_ledger(archive.ledger_id)
    if audit is None or not audit.coherent:
        return HISTORY_INCOHERENT

    receipts = archive.receipts
    if not receipts or receipts[0].kind != protocol.KIND_CREATION:
        return BAD_RECEIPT
    creation = receipts[0]
    authors = creation.request.authors
    if authors != archive.author_set:
        return BAD_RECEIPT
    prev_state: tuple[Digest, int] | None = None
    for seq, receipt in enumerate(receipts):
        if receipt.notary_seq != seq or receipt.ledger_id != archive.ledger_id:
            return RECEIPT_ANCHOR_MISMATCH
        if protocol.verify_receipt(receipt, notary_key, authors) is not None:
            return BAD_RECEIPT
        if seq > 0 and receipt.prev_state() != prev_state:
            return RECEIPT_ANCHOR_MISMATCH
        prev_state = receipt.new_state()

    # the receipt chain must replay the anchored history exactly, up to the
    # claimed size
    anchored = [(audit.init_digest, audit.init_size)]
    for _, _, new_digest, new_size in audit.steps:
        anchored.append((new_digest, new_size))
    claimed = [r.new_state() for r in receipts]
    if claimed != anchored[: len(claimed)]:
        return RECEIPT_ANCHOR_MISMATCH
    if claimed[-1] != (archive.claimed_digest, archive.claimed_size):
        return RECEIPT_ANCHOR_MISMATCH

    for item in archive.items:
        if item.proof.tree_size != archive.claimed_size or item.proof.leaf_index != item.index:
            return BAD_INCLUSION
        if not hashtree.verify_inclusion(
            archive.claimed_digest,
            archive.claimed_size,
            item.index,
            item.entry.leaf_digest,
            item.proof,
        ):
            return BAD_INCLUSION
        if item.entry.is_present:
            if hashtree.leaf_hash(item.entry.content) != item.entry.leaf_digest:
                return CONTENT_MISMATCH
    return None


def verify_misbehavior_proof(
    proof: MisbehaviorProof,
    notary_key: PublicKey,
    anchor_log: AnchorLog | None = None,
) -> bool:
    """Check that a misbehavior proof is what it claims, using public data only."""
    receipts = proof.receipts
    if any(r.ledger_id != proof.ledger_id for r in receipts):
        return False
    if any(not protocol.notary_signed(r, notary_key) for r in receipts):
        return False
    if proof.kind == FORK:
        if len(receipts) != 2:
            return False
        a, b = receipts
        if protocol.encode(a) == protocol.encode(b):
            return False
        return conflict_key(a) == conflict_key(b) and a.new_state()[0] != b.new_state()[0]
    if proof.kind == UNAUTHORIZED_ACCEPT:
        if len(receipts) != 2:
            return False
        offending, creation = receipts
        if creation.kind != protocol.KIND_CREATION:
            return False
        authors = creation.request.authors
        if protocol.verify_receipt(creation, notary_key, authors) is not None:
            return False
        signers = protocol.request_signers(offending.request)
        return any(key not in authors for key in signers)
    if proof.kind == ANCHOR_DESYNC:
        if len(receipts) != 1 or anchor_log is None:
            return False
        receipt = receipts[0]
        notary_address = identity.actor_id(notary_key)
        txns = anchor_log.read_all(notary_address)
        if receipt.anchor_ref is not None:
            txn = next((t for t in txns if t.txn_id == receipt.anchor_ref), None)
            return txn is None or not anchor_payload_matches(txn.payload, receipt)
        # pending receipt: unmet iff no anchored step covers its new state
        target = (receipt.ledger_id, *receipt.new_state())
        for txn in txns:
            payload = txn.payload
            if isinstance(payload, InitPayload):
                if (payload.ledger_id, payload.digest, payload.size) == target:
                    return False
            elif isinstance(payload, ExtendPayload):
                if (payload.ledger_id, payload.new_digest, payload.new_size) == target:
                    return False
            elif isinstance(payload, BatchPayload):
                for step in payload.steps:
                    if (payload.ledger_id, step.new_digest, step.new_size) == target:
                        return False
        return True
    return False
