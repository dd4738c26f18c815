"""Tamper-proof public history store, mocked as an append-only transaction log.

A transaction is visible to readers once its confirmation latency has
elapsed on the simulated clock; reading with ``now_ms=None`` treats the log
as a fully-confirmed offline snapshot. There is deliberately no API that
mutates or removes a submitted transaction.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Union

from . import protocol
from .errors import MalformedError
from .hashtree import DIGEST_BYTES, ConsistencyProof, Digest
from .identity import ActorId
from .protocol import LEDGER_ID_BYTES, LedgerId
from .wire import Reader, Writer

MAGIC = b"HYBA"
VERSION = 1

TAG_INIT = 0x04
TAG_EXTEND = 0x05
TAG_BATCH = 0x06

AnchorTxnId = int


@dataclass(frozen=True)
class InitPayload:
    ledger_id: LedgerId
    digest: Digest
    size: int


@dataclass(frozen=True)
class ExtendPayload:
    ledger_id: LedgerId
    prev_digest: Digest
    prev_size: int
    new_digest: Digest
    new_size: int
    proof: ConsistencyProof


@dataclass(frozen=True)
class BatchPayload:
    ledger_id: LedgerId
    steps: tuple[ExtendPayload, ...]


Payload = Union[InitPayload, ExtendPayload, BatchPayload]


@dataclass(frozen=True)
class AnchorTxn:
    txn_id: AnchorTxnId
    address: ActorId
    submitted_ms: int
    payload: Payload


class AnchorLog:
    """Serialized total order of anchor transactions."""

    def __init__(self, confirmation_latency_ms: int = 0) -> None:
        self.confirmation_latency_ms = confirmation_latency_ms
        self._txns: list[AnchorTxn] = []

    def __len__(self) -> int:
        return len(self._txns)

    def submit(self, address: ActorId, payload: Payload, now_ms: int = 0) -> AnchorTxnId:
        txn = AnchorTxn(len(self._txns), address, now_ms, payload)
        self._txns.append(txn)
        return txn.txn_id

    def read_all(self, address: ActorId, now_ms: int | None = None) -> list[AnchorTxn]:
        """Confirmed transactions from ``address`` in submission order."""
        return [
            t for t in self._txns
            if t.address == address and self._confirmed(t, now_ms)
        ]

    def get(self, txn_id: AnchorTxnId, now_ms: int | None = None) -> AnchorTxn | None:
        if 0 <= txn_id < len(self._txns):
            txn = self._txns[txn_id]
            if self._confirmed(txn, now_ms):
                return txn
        return None

    def _confirmed(self, txn: AnchorTxn, now_ms: int | None) -> bool:
        return now_ms is None or txn.submitted_ms + self.confirmation_latency_ms <= now_ms

    def persist(self, path: str | Path) -> None:
        w = Writer()
        w.u64(self.confirmation_latency_ms)
        w.u32(len(self._txns))
        for txn in self._txns:
            write_txn(w, txn)
        Path(path).write_bytes(MAGIC + bytes([VERSION]) + w.getvalue())

    @classmethod
    def load(cls, path: str | Path) -> "AnchorLog":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise MalformedError("IO_ERROR", str(exc)) from exc
        if len(raw) < 5 or raw[:4] != MAGIC or raw[4] != VERSION:
            raise MalformedError("MALFORMED_FILE", f"{path}: not an anchor log")
        r = Reader(raw[5:])
        try:
            log = cls(confirmation_latency_ms=r.u64())
            count = r.u32()
            for index in range(count):
                txn = read_txn(r)
                if txn.txn_id != index:
                    raise MalformedError("MALFORMED_FILE", "txn ids out of order")
                log._txns.append(txn)
            r.expect_end()
        except MalformedError as exc:
            raise MalformedError("MALFORMED_FILE", str(exc)) from exc
        return log

    def equals(self, other: "AnchorLog") -> bool:
        return (
            self.confirmation_latency_ms == other.confirmation_latency_ms
            and self._txns == other._txns
        )


def write_payload(w: Writer, payload: Payload) -> None:
    if isinstance(payload, InitPayload):
        w.u8(TAG_INIT)
        w.fixed(payload.ledger_id, LEDGER_ID_BYTES)
        w.fixed(payload.digest, DIGEST_BYTES)
        w.u64(payload.size)
    elif isinstance(payload, ExtendPayload):
        w.u8(TAG_EXTEND)
        w.fixed(payload.ledger_id, LEDGER_ID_BYTES)
        w.fixed(payload.prev_digest, DIGEST_BYTES)
        w.u64(payload.prev_size)
        w.fixed(payload.new_digest, DIGEST_BYTES)
        w.u64(payload.new_size)
        protocol.write_consistency_proof(w, payload.proof)
    elif isinstance(payload, BatchPayload):
        w.u8(TAG_BATCH)
        w.fixed(payload.ledger_id, LEDGER_ID_BYTES)
        w.u32(len(payload.steps))
        for step in payload.steps:
            write_payload(w, step)
    else:
        raise TypeError(f"cannot encode {type(payload).__name__}")


def read_payload(r: Reader) -> Payload:
    tag = r.u8()
    if tag == TAG_INIT:
        return InitPayload(r.fixed(LEDGER_ID_BYTES), r.fixed(DIGEST_BYTES), r.u64())
    if tag == TAG_EXTEND:
        return ExtendPayload(
            r.fixed(LEDGER_ID_BYTES),
            r.fixed(DIGEST_BYTES),
            r.u64(),
            r.fixed(DIGEST_BYTES),
            r.u64(),
            protocol.read_consistency_proof(r),
        )
    if tag == TAG_BATCH:
        ledger_id = r.fixed(LEDGER_ID_BYTES)
        steps = []
        for _ in range(r.u32()):
            step = read_payload(r)
            if not isinstance(step, ExtendPayload) or step.ledger_id != ledger_id:
                raise MalformedError("MALFORMED", "batch steps must extend the batch ledger")
            steps.append(step)
        return BatchPayload(ledger_id, tuple(steps))
    raise MalformedError("MALFORMED", f"unknown payload tag {tag:#x}")


def write_txn(w: Writer, txn: AnchorTxn) -> None:
    w.u64(txn.txn_id)
    w.fixed(txn.address, DIGEST_BYTES)
    w.u64(txn.submitted_ms)
    write_payload(w, txn.payload)


def read_txn(r: Reader) -> AnchorTxn:
    return AnchorTxn(r.u64(), r.fixed(DIGEST_BYTES), r.u64(), read_payload(r))


def payload_to_json(payload: Payload) -> dict:
    if isinstance(payload, InitPayload):
        return {
            "type": "init",
            "ledger_id": payload.ledger_id.hex(),
            "digest": payload.digest.hex(),
            "size": payload.size,
        }
    if isinstance(payload, ExtendPayload):
        return {
            "type": "extend",
            "ledger_id": payload.ledger_id.hex(),
            "prev_digest": payload.prev_digest.hex(),
            "prev_size": payload.prev_size,
            "new_digest": payload.new_digest.hex(),
            "new_size": payload.new_size,
            "proof_path": [d.hex() for d in payload.proof.path],
        }
    return {
        "type": "batch",
        "ledger_id": payload.ledger_id.hex(),
        "steps": [payload_to_json(s) for s in payload.steps],
    }


def txn_to_json(txn: AnchorTxn) -> dict:
    return {
        "txn_id": txn.txn_id,
        "address": txn.address.hex(),
        "submitted_ms": txn.submitted_ms,
        "payload": payload_to_json(txn.payload),
    }
