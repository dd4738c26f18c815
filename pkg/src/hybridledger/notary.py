"""The authoritative history keeper.

Validates creation and extension requests, advances the single official
(digest, size) per ledger, anchors every step to the public log, and issues
signed receipts. In base mode it never sees block contents; the repository
and policy modes, and delayed notarization, are opt-in variations.

Concurrency: a global lock guards ledger id allocation and registry lookup;
a per-ledger lock serializes request handling for that ledger, so requests
for different ledgers may proceed concurrently.
"""

from __future__ import annotations

import threading
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Sequence

from . import anchor as anchor_mod
from . import hashtree, identity, protocol
from .anchor import AnchorLog, BatchPayload, ExtendPayload, InitPayload
from .errors import MalformedError, MalformedInputError, NotaryError
from .hashtree import Digest
from .identity import ActorId, KeyPair, PublicKey
from .protocol import (
    AuthorSet,
    CreationRequest,
    ExtensionRequest,
    LedgerId,
    Receipt,
)
from .wire import Reader, Writer

STATE_MAGIC = b"HYBN"
STATE_VERSION = 1

TAG_STATEMENT = 0x09
TAG_ACCESS = 0x0A
TAG_POLICY = 0x0B


def wall_clock_ms() -> int:
    return time.time_ns() // 1_000_000


@dataclass(frozen=True)
class Policy:
    """Ledger rules carried in plaintext as the entire content of block 0."""

    max_block_bytes: int | None = None
    min_signers: int | None = None
    allowed_content_tags: tuple[int, ...] | None = None

    def __post_init__(self) -> None:
        if self.max_block_bytes is not None and self.max_block_bytes <= 0:
            raise ValueError("max_block_bytes must be positive")
        if self.min_signers is not None and self.min_signers <= 0:
            raise ValueError("min_signers must be positive")


def encode_policy(policy: Policy) -> bytes:
    w = Writer()
    w.u8(TAG_POLICY)
    w.u8(1 if policy.max_block_bytes is not None else 0)
    if policy.max_block_bytes is not None:
        w.u64(policy.max_block_bytes)
    w.u8(1 if policy.min_signers is not None else 0)
    if policy.min_signers is not None:
        w.u32(policy.min_signers)
    w.u8(1 if policy.allowed_content_tags is not None else 0)
    if policy.allowed_content_tags is not None:
        w.u32(len(policy.allowed_content_tags))
        for tag in policy.allowed_content_tags:
            w.u8(tag)
    return w.getvalue()


def decode_policy(data: bytes) -> Policy:
    r = Reader(data)
    if r.u8() != TAG_POLICY:
        raise MalformedError("MALFORMED", "not a policy block")
    max_block_bytes = r.u64() if r.u8() == 1 else None
    min_signers = r.u32() if r.u8() == 1 else None
    tags = tuple(r.u8() for _ in range(r.u32())) if r.u8() == 1 else None
    r.expect_end()
    try:
        return Policy(max_block_bytes, min_signers, tags)
    except ValueError as exc:
        raise MalformedError("MALFORMED", str(exc)) from exc


@dataclass(frozen=True)
class NotaryConfig:
    keypair: KeyPair
    mode_repository: bool = False
    mode_policy: bool = False
    notarization_interval_ms: int | None = None  # None means immediate

    def __post_init__(self) -> None:
        if self.mode_policy and not self.mode_repository:
            raise ValueError("policy mode requires repository mode")

    @property
    def delayed(self) -> bool:
        return self.notarization_interval_ms is not None


@dataclass(frozen=True)
class CertifiedStatement:
    """Notary attestation that stored blocks hash into the official digest."""

    ledger_id: LedgerId
    digest: Digest
    size: int
    indices: tuple[int, ...]
    timestamp_ms: int
    signature: bytes = b""


def statement_signing_bytes(stmt: CertifiedStatement) -> bytes:
    w = Writer()
    w.u8(TAG_STATEMENT)
    w.fixed(stmt.ledger_id, protocol.LEDGER_ID_BYTES)
    w.fixed(stmt.digest, hashtree.DIGEST_BYTES)
    w.u64(stmt.size)
    w.u32(len(stmt.indices))
    for index in stmt.indices:
        w.u64(index)
    w.u64(stmt.timestamp_ms)
    return w.getvalue()


def verify_statement(stmt: CertifiedStatement, notary_key: PublicKey) -> bool:
    try:
        return identity.verify(notary_key, statement_signing_bytes(stmt), stmt.signature)
    except MalformedInputError:
        return False


@dataclass(frozen=True)
class AccessRequest:
    """Signed block-access request for the repository mode."""

    ledger_id: LedgerId
    indices: tuple[int, ...]
    requester_key: PublicKey
    signature: bytes = b""


def access_signing_bytes(req: AccessRequest) -> bytes:
    w = Writer()
    w.u8(TAG_ACCESS)
    w.fixed(req.ledger_id, protocol.LEDGER_ID_BYTES)
    w.u32(len(req.indices))
    for index in req.indices:
        w.u64(index)
    w.fixed(req.requester_key, identity.PUBLIC_KEY_BYTES)
    return w.getvalue()


def make_access_request(
    keypair: KeyPair, ledger_id: LedgerId, indices: Sequence[int]
) -> AccessRequest:
    req = AccessRequest(ledger_id, tuple(indices), keypair.public)
    return replace(req, signature=identity.sign(keypair.secret, access_signing_bytes(req)))


@dataclass
class LedgerRecord:
    ledger_id: LedgerId
    authors: AuthorSet
    digest: Digest
    size: int
    policy: Policy | None = None
    last_anchored_digest: Digest = b""
    last_anchored_size: int = 0
    pending_init: InitPayload | None = None
    pending_steps: list[ExtendPayload] = field(default_factory=list)
    next_seq: int = 0
    last_anchor_txn_id: int | None = None
    last_flush_ms: int = 0
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)


class Notary:
    def __init__(
        self,
        config: NotaryConfig,
        anchor_log: AnchorLog,
        clock: Callable[[], int] = wall_clock_ms,
    ) -> None:
        self.config = config
        self.anchor_log = anchor_log
        self.clock = clock
        self.records: dict[LedgerId, LedgerRecord] = {}
        self.block_store: dict[LedgerId, list[bytes]] = {}
        self._registry_lock = threading.Lock()
        self._anchor_lock = threading.Lock()

    @property
    def public_key(self) -> PublicKey:
        return self.config.keypair.public

    @property
    def address(self) -> ActorId:
        return identity.actor_id(self.public_key)

    # -- request handling ---------------------------------------------------

    def handle_create(
        self, request: CreationRequest, blocks: Sequence[bytes] | None = None
    ) -> Receipt:
        self._check_blocks_arg(blocks)
        if request.initial_size < 1:
            raise MalformedError("MALFORMED", "initial size must be >= 1")
        with self._registry_lock:
            if request.ledger_id in self.records:
                raise NotaryError("ID_IN_USE", request.ledger_id.hex())
        reason = self._validate_author_set(request)
        if reason:
            raise NotaryError("INVALID_AUTHOR_SET", reason)
        try:
            sig_ok = identity.verify(
                request.creator_key, protocol.signing_bytes(request), request.creator_sig
            )
        except MalformedInputError:
            sig_ok = False
        if not sig_ok:
            raise NotaryError("BAD_SIGNATURE", "creation request signature invalid")

        policy: Policy | None = None
        if self.config.mode_repository:
            if len(blocks) != request.initial_size:
                raise NotaryError("DIGEST_MISMATCH", "block count differs from request")
            if hashtree.root(list(blocks)) != request.initial_digest:
                raise NotaryError("DIGEST_MISMATCH", "blocks do not produce initial digest")
            if self.config.mode_policy:
                policy = self._require_policy_block(blocks)
                self._check_policy_blocks(policy, blocks[1:])

        with self._registry_lock:
            if request.ledger_id in self.records:
                raise NotaryError("ID_IN_USE", request.ledger_id.hex())
            record = LedgerRecord(
                ledger_id=request.ledger_id,
                authors=request.authors,
                digest=request.initial_digest,
                size=request.initial_size,
                policy=policy,
                last_anchored_digest=request.initial_digest,
                last_anchored_size=request.initial_size,
                last_flush_ms=self.clock(),
            )
            record.lock.acquire()
            self.records[request.ledger_id] = record
        try:
            init = InitPayload(request.ledger_id, request.initial_digest, request.initial_size)
            if self.config.delayed:
                record.pending_init = init
                anchor_ref = None
            else:
                anchor_ref = self._submit(init)
                record.last_anchor_txn_id = anchor_ref
            if self.config.mode_repository:
                self.block_store[request.ledger_id] = list(blocks)
            return self._issue_receipt(record, protocol.KIND_CREATION, request, anchor_ref)
        finally:
            record.lock.release()

    def handle_extend(
        self, request: ExtensionRequest, blocks: Sequence[bytes] | None = None
    ) -> Receipt:
        self._check_blocks_arg(blocks)
        with self._registry_lock:
            record = self.records.get(request.ledger_id)
        if record is None:
            raise NotaryError("UNKNOWN_LEDGER", request.ledger_id.hex())
        with record.lock:
            self._check_extension(record, request, blocks)
            step = ExtendPayload(
                request.ledger_id,
                request.prev_digest,
                request.prev_size,
                request.new_digest,
                request.new_size,
                request.proof,
            )
            if self.config.delayed:
                record.pending_steps.append(step)
                anchor_ref = None
            else:
                anchor_ref = self._submit(step)
                record.last_anchored_digest = request.new_digest
                record.last_anchored_size = request.new_size
                record.last_anchor_txn_id = anchor_ref
            record.digest = request.new_digest
            record.size = request.new_size
            if self.config.mode_repository:
                self.block_store.setdefault(request.ledger_id, []).extend(blocks)
            return self._issue_receipt(record, protocol.KIND_EXTENSION, request, anchor_ref)

    def _check_extension(
        self,
        record: LedgerRecord,
        request: ExtensionRequest,
        blocks: Sequence[bytes] | None,
    ) -> None:
        if (request.prev_digest, request.prev_size) != (record.digest, record.size):
            raise NotaryError("STALE_DIGEST", "official digest has moved on")
        if (
            request.proof.old_size != request.prev_size
            or request.proof.new_size != request.new_size
            or request.new_size <= request.prev_size
            or not hashtree.verify_consistency(
                request.prev_digest,
                request.prev_size,
                request.new_digest,
                request.new_size,
                request.proof,
            )
        ):
            raise NotaryError("INVALID_PROOF", "consistency proof rejected")
        self._check_signers(record, request)
        if self.config.mode_repository:
            stored = self.block_store.get(request.ledger_id, [])
            if len(blocks) != request.new_size - request.prev_size:
                raise NotaryError("DIGEST_MISMATCH", "block count differs from request")
            digests = [hashtree.leaf_hash(b) for b in stored] + [
                hashtree.leaf_hash(b) for b in blocks
            ]
            if hashtree.root_from_leaf_digests(digests) != request.new_digest:
                raise NotaryError("DIGEST_MISMATCH", "blocks do not produce new digest")
            if self.config.mode_policy and record.policy is not None:
                self._check_policy_blocks(record.policy, blocks)

    def _check_signers(self, record: LedgerRecord, request: ExtensionRequest) -> None:
        if not request.author_keys or len(request.author_keys) != len(request.author_sigs):
            raise NotaryError("UNAUTHORIZED", "signer keys and signatures must pair up")
        message = protocol.signing_bytes(request)
        for key, sig in zip(request.author_keys, request.author_sigs):
            if key not in record.authors:
                raise NotaryError("UNAUTHORIZED", "signer is not a ledger author")
            try:
                if not identity.verify(key, message, sig):
                    raise NotaryError("UNAUTHORIZED", "signature invalid")
            except MalformedInputError as exc:
                raise NotaryError("UNAUTHORIZED", str(exc)) from exc
        if self.config.mode_policy and record.policy and record.policy.min_signers:
            if len(set(request.author_keys)) < record.policy.min_signers:
                raise NotaryError(
                    "POLICY_VIOLATION",
                    f"policy requires {record.policy.min_signers} signers",
                )

    # -- delayed notarization -----------------------------------------------

    def flush(self, now_ms: int | None = None) -> list[int]:
        """Anchor every due pending batch; idempotent when nothing is due."""
        if not self.config.delayed:
            return []
        now = self.clock() if now_ms is None else now_ms
        interval = self.config.notarization_interval_ms
        txn_ids: list[int] = []
        with self._registry_lock:
            records = sorted(self.records.values(), key=lambda r: r.ledger_id)
        for record in records:
            with record.lock:
                if record.pending_init is None and not record.pending_steps:
                    continue
                if now - record.last_flush_ms < interval:
                    continue
                if record.pending_init is not None:
                    txn_ids.append(self._submit(record.pending_init, now))
                    record.last_anchor_txn_id = txn_ids[-1]
                    record.pending_init = None
                if record.pending_steps:
                    batch = BatchPayload(record.ledger_id, tuple(record.pending_steps))
                    txn_ids.append(self._submit(batch, now))
                    record.last_anchor_txn_id = txn_ids[-1]
                    last = record.pending_steps[-1]
                    record.last_anchored_digest = last.new_digest
                    record.last_anchored_size = last.new_size
                    record.pending_steps.clear()
                record.last_flush_ms = now
        return txn_ids

    # -- repository mode ----------------------------------------------------

    def certify_blocks(self, ledger_id: LedgerId, indices: Sequence[int]) -> CertifiedStatement:
        record = self._known(ledger_id)
        stored = self.block_store.get(ledger_id)
        if not self.config.mode_repository or stored is None:
            raise NotaryError("NOT_STORED", "no block repository for this ledger")
        for index in indices:
            if not 0 <= index < record.size or index >= len(stored):
                raise NotaryError("NOT_STORED", f"index {index}")
        stmt = CertifiedStatement(
            ledger_id, record.digest, record.size, tuple(indices), self.clock()
        )
        return replace(
            stmt,
            signature=identity.sign(self.config.keypair.secret, statement_signing_bytes(stmt)),
        )

    def serve_blocks(self, request: AccessRequest) -> list[bytes]:
        record = self._known(request.ledger_id)
        stored = self.block_store.get(request.ledger_id)
        if not self.config.mode_repository or stored is None:
            raise NotaryError("NOT_STORED", "no block repository for this ledger")
        try:
            sig_ok = identity.verify(
                request.requester_key, access_signing_bytes(request), request.signature
            )
        except MalformedInputError:
            sig_ok = False
        if not sig_ok or request.requester_key not in record.authors:
            raise NotaryError("UNAUTHORIZED", "access denied")
        for index in request.indices:
            if not 0 <= index < len(stored):
                raise NotaryError("NOT_STORED", f"index {index}")
        return [stored[i] for i in request.indices]

    # -- persistence ----------------------------------------------------------

    def save_state(self, path: str | Path) -> None:
        w = Writer()
        with self._registry_lock:
            records = sorted(self.records.values(), key=lambda r: r.ledger_id)
            w.u32(len(records))
            for record in records:
                with record.lock:
                    self._write_record(w, record)
        Path(path).write_bytes(STATE_MAGIC + bytes([STATE_VERSION]) + w.getvalue())

    def _write_record(self, w: Writer, record: LedgerRecord) -> None:
        w.fixed(record.ledger_id, protocol.LEDGER_ID_BYTES)
        w.u32(len(record.authors.keys))
        for key in record.authors.keys:
            w.fixed(key, identity.PUBLIC_KEY_BYTES)
        w.fixed(record.digest, hashtree.DIGEST_BYTES)
        w.u64(record.size)
        policy_bytes = encode_policy(record.policy) if record.policy else b""
        w.var_bytes(policy_bytes)
        w.fixed(record.last_anchored_digest, hashtree.DIGEST_BYTES)
        w.u64(record.last_anchored_size)
        w.u8(1 if record.pending_init else 0)
        if record.pending_init:
            anchor_mod.write_payload(w, record.pending_init)
        w.u32(len(record.pending_steps))
        for step in record.pending_steps:
            anchor_mod.write_payload(w, step)
        w.u64(record.next_seq)
        w.u64(record.last_flush_ms)
        blocks = self.block_store.get(record.ledger_id)
        w.u8(1 if blocks is not None else 0)
        if blocks is not None:
            w.u32(len(blocks))
            for block in blocks:
                w.var_bytes(block)

    @classmethod
    def load_state(
        cls,
        path: str | Path,
        config: NotaryConfig,
        anchor_log: AnchorLog,
        clock: Callable[[], int] = wall_clock_ms,
    ) -> "Notary":
        try:
            raw = Path(path).read_bytes()
        except OSError as exc:
            raise MalformedError("IO_ERROR", str(exc)) from exc
        if len(raw) < 5 or raw[:4] != STATE_MAGIC or raw[4] != STATE_VERSION:
            raise MalformedError("MALFORMED_FILE", f"{path}: not a notary snapshot")
        notary = cls(config, anchor_log, clock)
        r = Reader(raw[5:])
        try:
            for _ in range(r.u32()):
                record, blocks = cls._read_record(r)
                notary.records[record.ledger_id] = record
                if blocks is not None:
                    notary.block_store[record.ledger_id] = blocks
            r.expect_end()
        except MalformedError as exc:
            raise MalformedError("MALFORMED_FILE", str(exc)) from exc
        notary._reconcile()
        return notary

    @staticmethod
    def _read_record(r: Reader) -> tuple[LedgerRecord, list[bytes] | None]:
        ledger_id = r.fixed(protocol.LEDGER_ID_BYTES)
        keys = tuple(r.fixed(identity.PUBLIC_KEY_BYTES) for _ in range(r.u32()))
        try:
            authors = AuthorSet(keys)
        except ValueError as exc:
            raise MalformedError("MALFORMED", str(exc)) from exc
        digest = r.fixed(hashtree.DIGEST_BYTES)
        size = r.u64()
        policy_bytes = r.var_bytes()
        policy = decode_policy(policy_bytes) if policy_bytes else None
        last_anchored_digest = r.fixed(hashtree.DIGEST_BYTES)
        last_anchored_size = r.u64()
        pending_init = None
        if r.u8() == 1:
            payload = anchor_mod.read_payload(r)
            if not isinstance(payload, InitPayload):
                raise MalformedError("MALFORMED", "pending init payload expected")
            pending_init = payload
        steps = []
        for _ in range(r.u32()):
            payload = anchor_mod.read_payload(r)
            if not isinstance(payload, ExtendPayload):
                raise MalformedError("MALFORMED", "pending step payload expected")
            steps.append(payload)
        next_seq = r.u64()
        last_flush_ms = r.u64()
        blocks: list[bytes] | None = None
        if r.u8() == 1:
            blocks = [r.var_bytes() for _ in range(r.u32())]
        record = LedgerRecord(
            ledger_id=ledger_id,
            authors=authors,
            digest=digest,
            size=size,
            policy=policy,
            last_anchored_digest=last_anchored_digest,
            last_anchored_size=last_anchored_size,
            pending_init=pending_init,
            pending_steps=steps,
            next_seq=next_seq,
            last_flush_ms=last_flush_ms,
        )
        return record, blocks

    def _reconcile(self) -> None:
        """Trust the anchor log over the snapshot for what is already anchored."""
        anchored: dict[LedgerId, tuple[Digest, int, int]] = {}
        for txn in self.anchor_log.read_all(self.address):
            payload = txn.payload
            if isinstance(payload, InitPayload):
                anchored[payload.ledger_id] = (payload.digest, payload.size, txn.txn_id)
            elif isinstance(payload, ExtendPayload):
                anchored[payload.ledger_id] = (payload.new_digest, payload.new_size, txn.txn_id)
            elif isinstance(payload, BatchPayload) and payload.steps:
                last = payload.steps[-1]
                anchored[payload.ledger_id] = (last.new_digest, last.new_size, txn.txn_id)
        for record in self.records.values():
            state = anchored.get(record.ledger_id)
            if state is None:
                continue
            digest, size, txn_id = state
            record.last_anchor_txn_id = txn_id
            if size > record.last_anchored_size:
                record.last_anchored_digest = digest
                record.last_anchored_size = size
                if record.pending_init is not None:
                    record.pending_init = None
                record.pending_steps = [
                    s for s in record.pending_steps if s.prev_size >= size
                ]

    # -- internals ------------------------------------------------------------

    def _issue_receipt(self, record, kind, request, anchor_ref) -> Receipt:
        receipt = Receipt(
            kind=kind,
            request=request,
            timestamp_ms=self.clock(),
            anchor_ref=anchor_ref,
            notary_seq=record.next_seq,
            notary_sig=b"",
        )
        record.next_seq += 1
        signature = identity.sign(
            self.config.keypair.secret, protocol.signing_bytes(receipt)
        )
        return replace(receipt, notary_sig=signature)

    def _submit(self, payload, now_ms: int | None = None) -> int:
        with self._anchor_lock:
            return self.anchor_log.submit(
                self.address, payload, self.clock() if now_ms is None else now_ms
            )

    def _known(self, ledger_id: LedgerId) -> LedgerRecord:
        with self._registry_lock:
            record = self.records.get(ledger_id)
        if record is None:
            raise NotaryError("UNKNOWN_LEDGER", ledger_id.hex())
        return record

    def _check_blocks_arg(self, blocks) -> None:
        if self.config.mode_repository and blocks is None:
            raise ValueError("repository mode requires blocks alongside the request")
        if not self.config.mode_repository and blocks is not None:
            raise ValueError("base mode must not receive block contents")

    def _validate_author_set(self, request: CreationRequest) -> str | None:
        authors = request.authors
        if not authors.keys:
            return "author set is empty"
        if request.creator_key not in authors:
            return "creator is not a member of the author set"
        return None

    def _require_policy_block(self, blocks: Sequence[bytes]) -> Policy:
        try:
            return decode_policy(blocks[0])
        except MalformedError as exc:
            raise NotaryError("POLICY_VIOLATION", f"block 0 is not a policy: {exc}") from exc

    def _check_policy_blocks(self, policy: Policy, blocks: Sequence[bytes]) -> None:
        for block in blocks:
            if policy.max_block_bytes is not None and len(block) > policy.max_block_bytes:
                raise NotaryError("POLICY_VIOLATION", "block exceeds policy size limit")
            if policy.allowed_content_tags is not None:
                if not block or block[0] not in policy.allowed_content_tags:
                    raise NotaryError("POLICY_VIOLATION", "block content tag not allowed")
