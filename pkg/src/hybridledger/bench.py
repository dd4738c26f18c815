"""Desk-scale benchmark harness.

Unlike the simulator, this drives a real Notary instance with real threads
and a wall clock, partitioning ledgers across workers: requests for one
ledger are inherently serial (request k+1 needs receipt k), requests for
different ledgers exercise the notary's concurrent path. Notary handling
time is measured around the handle_extend call only, so node-side staging
and hashing costs are reported separately.

Delayed mode runs on a virtual clock (one tick per request) so that the
anchor-transaction count per ledger is an exact function of run duration
and flush interval.
"""

from __future__ import annotations

import statistics
import threading
import time

from . import hashtree, identity, protocol
from .anchor import AnchorLog, BatchPayload, ExtendPayload
from .hashtree import Digest
from .notary import Notary, NotaryConfig


def _make_blocks(count: int, block_bytes: int, salt: int) -> list[bytes]:
    return [
        (salt.to_bytes(4, "big") + i.to_bytes(4, "big") + b"\xab" * block_bytes)[:block_bytes]
        for i in range(count)
    ]


class _VirtualClock:
    def __init__(self) -> None:
        self.now = 0
        self._lock = threading.Lock()

    def advance(self, ms: int) -> int:
        with self._lock:
            self.now += ms
            return self.now

    def __call__(self) -> int:
        return self.now


def run_bench(
    blocks: int = 200,
    block_bytes: int = 1024,
    ledgers: int = 1,
    mode: str = "immediate",
    interval_ms: int = 1000,
    threads: int = 4,
    request_step_ms: int = 10,
) -> dict:
    """Run ``blocks`` single-block extensions spread round-robin over ``ledgers``."""
    clock = _VirtualClock()
    anchor_log = AnchorLog()
    notary_keypair = identity.generate_keypair(b"bench-notary".ljust(32, b"\x00"))
    config = NotaryConfig(
        keypair=notary_keypair,
        notarization_interval_ms=interval_ms if mode == "delayed" else None,
    )
    notary = Notary(config, anchor_log, clock)

    per_ledger = [blocks // ledgers + (1 if i < blocks % ledgers else 0) for i in range(ledgers)]
    keypair = identity.generate_keypair(b"bench-author".ljust(32, b"\x00"))

    # node-side hashing cost: leaf-hash the payload bytes, timed separately
    sample = _make_blocks(min(blocks, 32), block_bytes, salt=0)
    hash_t0 = time.perf_counter()
    for content in sample:
        hashtree.leaf_hash(content)
    hash_seconds = time.perf_counter() - hash_t0
    bytes_hashed = sum(len(c) for c in sample)

    ledger_states: list[dict] = []
    for i in range(ledgers):
        initial = _make_blocks(1, block_bytes, salt=1000 + i)
        digests = [hashtree.leaf_hash(b) for b in initial]
        request = protocol.CreationRequest(
            ledger_id=protocol.new_ledger_id(keypair.public, i.to_bytes(8, "big")),
            authors=protocol.AuthorSet.from_keys([keypair.public]),
            initial_digest=hashtree.root_from_leaf_digests(digests),
            initial_size=1,
            creator_key=keypair.public,
        )
        request = protocol.sign_creation(request, keypair.secret)
        receipt = notary.handle_create(request)
        ledger_states.append(
            {"ledger_id": request.ledger_id, "digests": digests, "receipts": [receipt]}
        )

    handle_times: list[float] = []
    receipt_sizes: list[int] = []
    times_lock = threading.Lock()

    def drive(worker_states: list[dict], counts: list[int]) -> None:
        local_times = []
        local_sizes = []
        for state, n in zip(worker_states, counts):
            for k in range(n):
                digests: list[Digest] = state["digests"]
                content = _make_blocks(1, block_bytes, salt=k)[0]
                new_digests = digests + [hashtree.leaf_hash(content)]
                request = protocol.ExtensionRequest(
                    ledger_id=state["ledger_id"],
                    prev_digest=hashtree.root_from_leaf_digests(digests),
                    prev_size=len(digests),
                    new_digest=hashtree.root_from_leaf_digests(new_digests),
                    new_size=len(new_digests),
                    proof=hashtree.prove_consistency(new_digests, len(digests)),
                    author_keys=(keypair.public,),
                )
                request = protocol.sign_extension(request, [keypair.secret])
                clock.advance(request_step_ms)
                t0 = time.perf_counter()
                receipt = notary.handle_extend(request)
                local_times.append(time.perf_counter() - t0)
                if mode == "delayed":
                    notary.flush()
                local_sizes.append(len(protocol.encode(receipt)))
                state["digests"] = new_digests
                state["receipts"].append(receipt)
        with times_lock:
            handle_times.extend(local_times)
            receipt_sizes.extend(local_sizes)

    worker_count = max(1, min(threads, ledgers))
    workers = []
    t_start = time.perf_counter()
    for w in range(worker_count):
        states = ledger_states[w::worker_count]
        counts = per_ledger[w::worker_count]
        thread = threading.Thread(target=drive, args=(states, counts))
        workers.append(thread)
        thread.start()
    for thread in workers:
        thread.join()
    wall_seconds = time.perf_counter() - t_start
    if mode == "delayed":
        # close the final window so nothing stays pending
        clock.advance(interval_ms)
        notary.flush()

    anchor_txns_per_ledger: dict[str, int] = {}
    extension_anchor_txns: dict[str, int] = {}
    for txn in anchor_log.read_all(notary.address):
        lid = txn.payload.ledger_id.hex()
        anchor_txns_per_ledger[lid] = anchor_txns_per_ledger.get(lid, 0) + 1
        if isinstance(txn.payload, (ExtendPayload, BatchPayload)):
            extension_anchor_txns[lid] = extension_anchor_txns.get(lid, 0) + 1

    chains_coherent = True
    for state in ledger_states:
        prev = None
        for seq, receipt in enumerate(state["receipts"]):
            if receipt.notary_seq != seq:
                chains_coherent = False
            if seq > 0 and receipt.prev_state() != prev:
                chains_coherent = False
            prev = receipt.new_state()

    from .auditor import audit_anchor

    anchor_coherent = audit_anchor(anchor_log, notary.address).all_coherent

    return {
        "anchor_coherent": anchor_coherent,
        "mode": mode,
        "chains_coherent": chains_coherent,
        "blocks": blocks,
        "block_bytes": block_bytes,
        "ledgers": ledgers,
        "threads": worker_count,
        "requests": len(handle_times),
        "wall_seconds": wall_seconds,
        "requests_per_second": len(handle_times) / sum(handle_times) if handle_times else 0.0,
        "handle_ms_median": statistics.median(handle_times) * 1000 if handle_times else 0.0,
        "handle_ms_total": sum(handle_times) * 1000,
        "node_hash_bytes_per_second": bytes_hashed / hash_seconds if hash_seconds else 0.0,
        "node_hash_seconds_per_block": hash_seconds / len(sample) if sample else 0.0,
        "receipt_bytes_min": min(receipt_sizes) if receipt_sizes else 0,
        "receipt_bytes_max": max(receipt_sizes) if receipt_sizes else 0,
        "receipt_count": len(receipt_sizes),
        "virtual_duration_ms": clock.now,
        "interval_ms": interval_ms if mode == "delayed" else None,
        "anchor_txns_per_ledger": anchor_txns_per_ledger,
        "extension_anchor_txns_per_ledger": extension_anchor_txns,
        "ledger_ids": [s["ledger_id"].hex() for s in ledger_states],
    }

