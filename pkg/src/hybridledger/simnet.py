"""Deterministic discrete-event network simulator.

A single priority queue on simulated milliseconds drives scripted node
actions, gossip dissemination, block fetches, notary flushes, and fault
injection. Ties break by insertion order and all randomness flows from one
seeded generator, so a (config, scenario) pair always reproduces the same
event trace, receipts, metrics, and anchor log bytes.
"""

from __future__ import annotations

import hashlib
import heapq
import json
import random
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from . import identity, ledgerstore, notary as notary_mod, protocol
from .anchor import AnchorLog, ExtendPayload, InitPayload
from .errors import HybridLedgerError, NodeError, NotaryError
from .identity import ActorId, KeyPair
from .ledgerstore import BlockItem, ExportArchive
from .node import (
    FetchAction,
    GossipAction,
    MisbehaviorProof,
    Node,
    ProofAction,
    PullReceiptsAction,
)
from .notary import Notary, NotaryConfig
from .protocol import LedgerId, Receipt
from .wire import Reader, Writer

NOTARY_FORK = "NOTARY_FORK"
NOTARY_UNAUTHORIZED_ACCEPT = "NOTARY_UNAUTHORIZED_ACCEPT"
ANCHOR_OMIT = "ANCHOR_OMIT"
DUPLICATE_INIT = "DUPLICATE_INIT"
NODE_TAMPER_BLOCK = "NODE_TAMPER_BLOCK"

FAULT_KINDS = (
    NOTARY_FORK,
    NOTARY_UNAUTHORIZED_ACCEPT,
    ANCHOR_OMIT,
    DUPLICATE_INIT,
    NODE_TAMPER_BLOCK,
)


@dataclass(frozen=True)
class FaultSpec:
    kind: str
    at_request: int | None = None  # 1-based extension request counter
    at_time_ms: int | None = None
    params: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class SimConfig:
    seed: int = 0
    node_count: int = 3
    fanout: int = 2
    latency_ms: tuple[int, int] = (20, 80)
    anchor_latency_ms: int = 0
    mode_repository: bool = False
    mode_policy: bool = False
    notarization_interval_ms: int | None = None
    faults: tuple[FaultSpec, ...] = ()

    def __post_init__(self) -> None:
        if self.node_count < 1:
            raise ValueError("node_count must be >= 1")
        if self.latency_ms[0] > self.latency_ms[1]:
            raise ValueError("latency range inverted")


@dataclass(frozen=True)
class ScriptAction:
    time_ms: int
    actor: str
    action: str
    params: Mapping = field(default_factory=dict)


@dataclass(frozen=True)
class Scenario:
    name: str
    config: SimConfig
    script: tuple[ScriptAction, ...]


@dataclass
class SimMetrics:
    receipt_propagation_rounds: dict[str, int] = field(default_factory=dict)
    receipt_propagation_ms: dict[str, int] = field(default_factory=dict)
    sync_delay_ms: dict[str, int] = field(default_factory=dict)
    receipt_bytes: dict[str, int] = field(default_factory=dict)
    message_count: int = 0

    def to_json(self) -> str:
        return json.dumps(
            {
                "message_count": self.message_count,
                "receipt_bytes": self.receipt_bytes,
                "receipt_propagation_ms": self.receipt_propagation_ms,
                "receipt_propagation_rounds": self.receipt_propagation_rounds,
                "sync_delay_ms": self.sync_delay_ms,
            },
            sort_keys=True,
        )


@dataclass
class SimResult:
    scenario: Scenario
    nodes: dict[str, Node]
    notary: Notary
    anchor_log: AnchorLog
    metrics: SimMetrics
    proofs: list[tuple[int, str, MisbehaviorProof]]  # (time, node name, proof)
    archives: list[tuple[str, ExportArchive]]  # (label, archive)
    events: list[dict]
    ledger_ids: dict[str, LedgerId]
    statements: list[notary_mod.CertifiedStatement]
    final_time_ms: int

    @property
    def node_list(self) -> list[Node]:
        return list(self.nodes.values())

    def emitted_proofs(self) -> list[MisbehaviorProof]:
        return [p for _, _, p in self.proofs]


def _derive_keypair(label: str, seed: int) -> KeyPair:
    material = hashlib.sha256(label.encode() + seed.to_bytes(8, "big")).digest()
    return identity.generate_keypair(material)


class _FaultyNotary(Notary):
    """Drop-in notary variant that misbehaves per the configured fault specs."""

    def __init__(self, config, anchor_log, clock, faults: Sequence[FaultSpec], sim) -> None:
        super().__init__(config, anchor_log, clock)
        self._faults = list(faults)
        self._sim = sim
        self._extend_count = 0

    def _fault_for_request(self) -> FaultSpec | None:
        for fault in self._faults:
            if fault.at_request == self._extend_count:
                return fault
        return None

    def handle_extend(self, request, blocks=None):
        self._extend_count += 1
        fault = self._fault_for_request()
        if fault is None:
            return super().handle_extend(request, blocks)
        if fault.kind == NOTARY_FORK:
            return self._forked_extend(request)
        if fault.kind == NOTARY_UNAUTHORIZED_ACCEPT:
            return self._unauthorized_extend(request)
        if fault.kind == ANCHOR_OMIT:
            return self._unanchored_extend(request)
        return super().handle_extend(request, blocks)

    def _forked_extend(self, request) -> Receipt:
        # accept a stale request, silently forking the receipt history; the
        # anchor is left untouched and the receipt reuses the last honest
        # anchor reference as cover
        record = self._known(request.ledger_id)
        with record.lock:
            self._sim.record_event(
                "notary_fault", {"kind": NOTARY_FORK, "ledger": request.ledger_id.hex()}
            )
            return self._issue_receipt(
                record, protocol.KIND_EXTENSION, request, record.last_anchor_txn_id
            )

    def _unauthorized_extend(self, request) -> Receipt:
        # skip the author-set and proof checks entirely
        record = self._known(request.ledger_id)
        with record.lock:
            self._sim.record_event(
                "notary_fault",
                {"kind": NOTARY_UNAUTHORIZED_ACCEPT, "ledger": request.ledger_id.hex()},
            )
            step = ExtendPayload(
                request.ledger_id,
                request.prev_digest,
                request.prev_size,
                request.new_digest,
                request.new_size,
                request.proof,
            )
            anchor_ref = None if self.config.delayed else self._submit(step)
            record.digest = request.new_digest
            record.size = request.new_size
            return self._issue_receipt(record, protocol.KIND_EXTENSION, request, anchor_ref)

    def _unanchored_extend(self, request) -> Receipt:
        record = self._known(request.ledger_id)
        with record.lock:
            self._check_extension(record, request, None)
            self._sim.record_event(
                "notary_fault", {"kind": ANCHOR_OMIT, "ledger": request.ledger_id.hex()}
            )
            record.digest = request.new_digest
            record.size = request.new_size
            # lie: point the receipt at the ledger's previous anchor txn
            return self._issue_receipt(
                record, protocol.KIND_EXTENSION, request, record.last_anchor_txn_id
            )

    def inject_duplicate_init(self, ledger_id: LedgerId) -> None:
        record = self._known(ledger_id)
        digest = hashlib.sha256(b"rewrite" + record.digest).digest()
        self._submit(InitPayload(ledger_id, digest, record.last_anchored_size or 1))
        self._sim.record_event(
            "notary_fault", {"kind": DUPLICATE_INIT, "ledger": ledger_id.hex()}
        )


class _TamperingNode(Node):
    """Serves one designated block with flipped content a limited number of times."""

    def __init__(self, *args, tamper: Mapping, sim=None, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self._tamper_index = tamper.get("index", 0)
        self._tamper_budget = tamper.get("times", 1)
        self._sim = sim

    def serve_blocks(self, lid, indices, requester):
        items = super().serve_blocks(lid, indices, requester)
        if self._tamper_budget <= 0:
            return items
        out = []
        for item in items:
            if item.index == self._tamper_index and item.entry.is_present:
                self._tamper_budget -= 1
                bad = bytes([item.entry.content[0] ^ 0xFF]) + item.entry.content[1:]
                entry = ledgerstore.BlockEntry(item.entry.leaf_digest, bad)
                out.append(BlockItem(item.index, entry, item.proof))
                if self._sim is not None:
                    self._sim.record_event(
                        "node_fault",
                        {"kind": NODE_TAMPER_BLOCK, "ledger": lid.hex(), "index": item.index},
                    )
            else:
                out.append(item)
        return out


class Simulation:
    def __init__(self, scenario: Scenario) -> None:
        self.scenario = scenario
        self.config = scenario.config
        self.rng = random.Random(self.config.seed)
        self.now = 0
        self._queue: list[tuple[int, int, Callable[[], None]]] = []
        self._seq = 0
        self.metrics = SimMetrics()
        self.events: list[dict] = []
        self.proofs: list[tuple[int, str, MisbehaviorProof]] = []
        self.archives: list[tuple[str, ExportArchive]] = []
        self.statements: list[notary_mod.CertifiedStatement] = []
        self.ledger_ids: dict[str, LedgerId] = {}
        self._receipt_holders: dict[str, set[str]] = {}
        self._receipt_issue: dict[str, tuple[int, int]] = {}  # key -> (t_issue, max_hop)
        self._pending_sync: dict[str, tuple[int, tuple[str, ...], int]] = {}
        self._build_world()

    # -- world construction ---------------------------------------------------

    def _build_world(self) -> None:
        cfg = self.config
        self.notary_keypair = _derive_keypair("notary", cfg.seed)
        self.anchor_log = AnchorLog(cfg.anchor_latency_ms)
        notary_config = NotaryConfig(
            keypair=self.notary_keypair,
            mode_repository=cfg.mode_repository,
            mode_policy=cfg.mode_policy,
            notarization_interval_ms=cfg.notarization_interval_ms,
        )
        notary_faults = [
            f
            for f in cfg.faults
            if f.kind in (NOTARY_FORK, NOTARY_UNAUTHORIZED_ACCEPT, ANCHOR_OMIT, DUPLICATE_INIT)
        ]
        if notary_faults:
            self.notary = _FaultyNotary(
                notary_config, self.anchor_log, lambda: self.now, notary_faults, self
            )
        else:
            self.notary = Notary(notary_config, self.anchor_log, lambda: self.now)

        keypairs = {
            f"node{i}": _derive_keypair(f"node{i}", cfg.seed) for i in range(cfg.node_count)
        }
        registry: dict[ActorId, bytes] = {
            identity.actor_id(kp.public): kp.public for kp in keypairs.values()
        }
        self.actor_names: dict[ActorId, str] = {
            identity.actor_id(kp.public): name for name, kp in keypairs.items()
        }
        self.nodes: dict[str, Node] = {}
        tamper_faults = {
            f.params.get("actor"): f for f in cfg.faults if f.kind == NODE_TAMPER_BLOCK
        }
        for name, kp in keypairs.items():
            peers = tuple(
                sorted(a for a in registry if a != identity.actor_id(kp.public))
            )
            if name in tamper_faults:
                self.nodes[name] = _TamperingNode(
                    kp,
                    self.notary_keypair.public,
                    notary=self.notary,
                    registry=registry,
                    peers=peers,
                    tamper=tamper_faults[name].params,
                    sim=self,
                )
            else:
                self.nodes[name] = Node(
                    kp,
                    self.notary_keypair.public,
                    notary=self.notary,
                    registry=registry,
                    peers=peers,
                )
        self.keypairs = keypairs

        for action in self.scenario.script:
            self._schedule(action.time_ms, lambda a=action: self._run_action(a))
        for fault in cfg.faults:
            if fault.kind == DUPLICATE_INIT and fault.at_time_ms is not None:
                self._schedule(
                    fault.at_time_ms,
                    lambda f=fault: self.notary.inject_duplicate_init(
                        self.ledger_ids[f.params["ledger"]]
                    ),
                )
        if cfg.notarization_interval_ms:
            horizon = max((a.time_ms for a in self.scenario.script), default=0)
            interval = cfg.notarization_interval_ms
            t = interval
            while t <= horizon + interval:
                self._schedule(t, lambda now=t: self.notary.flush(now))
                t += interval

    # -- event loop -------------------------------------------------------------

    def _schedule(self, time_ms: int, fn: Callable[[], None]) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (time_ms, self._seq, fn))

    def run(self) -> SimResult:
        while self._queue:
            time_ms, _, fn = heapq.heappop(self._queue)
            self.now = max(self.now, time_ms)
            fn()
            self._check_sync()
        return SimResult(
            scenario=self.scenario,
            nodes=self.nodes,
            notary=self.notary,
            anchor_log=self.anchor_log,
            metrics=self.metrics,
            proofs=self.proofs,
            archives=self.archives,
            events=self.events,
            ledger_ids=self.ledger_ids,
            statements=self.statements,
            final_time_ms=self.now,
        )

    def record_event(self, kind: str, detail: Mapping) -> None:
        self.events.append({"time_ms": self.now, "kind": kind, **detail})

    # -- script actions ----------------------------------------------------------

    def _run_action(self, action: ScriptAction) -> None:
        try:
            handler = getattr(self, f"_action_{action.action}", None)
            if handler is None:
                raise HybridLedgerError("SCRIPT_ERROR", f"unknown action {action.action!r}")
            handler(action.actor, dict(action.params))
        except (NotaryError, NodeError) as exc:
            self.record_event(
                "rejected",
                {"actor": action.actor, "action": action.action, "code": exc.code},
            )

    def _node(self, name: str) -> Node:
        if name not in self.nodes:
            raise HybridLedgerError("SCRIPT_ERROR", f"unknown actor {name!r}")
        return self.nodes[name]

    def _blocks(self, params: Mapping) -> list[bytes]:
        blocks = params["blocks"]
        return [b.encode() if isinstance(b, str) else bytes(b) for b in blocks]

    def _action_create(self, actor: str, params: Mapping) -> None:
        node = self._node(actor)
        authors = [self.keypairs[name].public for name in params["authors"]]
        nonce = self.rng.getrandbits(64).to_bytes(8, "big")
        replica, receipt = node.create_ledger(authors, self._blocks(params), nonce)
        self.ledger_ids[params["ledger"]] = replica.ledger_id
        self._register_receipt(receipt, actor)
        self._dispatch(actor, node.on_receipt(receipt))
        self.record_event(
            "created", {"actor": actor, "ledger": params["ledger"], "size": replica.official_size}
        )

    def _action_extend(self, actor: str, params: Mapping) -> None:
        node = self._node(actor)
        lid = self.ledger_ids[params["ledger"]]
        co_signers = [self.keypairs[name] for name in params.get("co_signers", [])]
        receipt = node.extend_ledger(lid, self._blocks(params), co_signers=co_signers)
        if receipt is None:
            self.record_event("stale_retry_queued", {"actor": actor, "ledger": params["ledger"]})
            return
        self._register_receipt(receipt, actor)
        self._dispatch(actor, node.on_receipt(receipt))
        self.record_event(
            "extended", {"actor": actor, "ledger": params["ledger"], "size": receipt.new_state()[1]}
        )

    def _action_rogue_extend(self, actor: str, params: Mapping) -> None:
        """A non-member fabricates an extension request from gossiped receipts."""
        node = self._node(actor)
        lid = self.ledger_ids[params["ledger"]]
        index = node.receipt_index.get(lid, {})
        newest = index[max(index)]
        prev_digest, prev_size = newest.new_state()
        fake_leaf = hashlib.sha256(b"forged" + bytes([prev_size])).digest()
        request = protocol.ExtensionRequest(
            ledger_id=lid,
            prev_digest=prev_digest,
            prev_size=prev_size,
            new_digest=hashlib.sha256(prev_digest + fake_leaf).digest(),
            new_size=prev_size + 1,
            proof=protocol.ConsistencyProof(prev_size, prev_size + 1, (fake_leaf,)),
            author_keys=(node.keypair.public,),
        )
        request = protocol.sign_extension(request, [node.keypair.secret])
        receipt = self.notary.handle_extend(request)
        self._register_receipt(receipt, actor)
        self._dispatch(actor, node.on_receipt(receipt))
        self.record_event("rogue_extended", {"actor": actor, "ledger": params["ledger"]})

    def _action_erase(self, actor: str, params: Mapping) -> None:
        node = self._node(actor)
        lid = self.ledger_ids[params["ledger"]]
        node.erase(lid, params["index"])
        self.record_event(
            "erased", {"actor": actor, "ledger": params["ledger"], "index": params["index"]}
        )

    def _action_export(self, actor: str, params: Mapping) -> None:
        node = self._node(actor)
        lid = self.ledger_ids[params["ledger"]]
        archive = node.export(lid, params.get("indices"))
        label = params.get("label", f"{params['ledger']}-{len(self.archives)}")
        self.archives.append((label, archive))
        self.record_event("exported", {"actor": actor, "ledger": params["ledger"], "label": label})

    def _action_certify(self, actor: str, params: Mapping) -> None:
        lid = self.ledger_ids[params["ledger"]]
        stmt = self.notary.certify_blocks(lid, params["indices"])
        self.statements.append(stmt)
        self.record_event("certified", {"actor": actor, "ledger": params["ledger"]})

    def _action_wipe(self, actor: str, params: Mapping) -> None:
        """Simulate local data loss: replica and staged entries vanish."""
        node = self._node(actor)
        lid = self.ledger_ids[params["ledger"]]
        node.wipe_ledger(lid)
        self.record_event("wiped", {"actor": actor, "ledger": params["ledger"]})

    def _action_recover(self, actor: str, params: Mapping) -> None:
        node = self._node(actor)
        lid = self.ledger_ids[params["ledger"]]
        replica = node.recover_from_repository(lid)
        self.record_event(
            "recovered",
            {"actor": actor, "ledger": params["ledger"], "size": replica.official_size},
        )

    def _action_audit_internal(self, actor: str, params: Mapping) -> None:
        node = self._node(actor)
        proofs = node.audit_internal(
            self.anchor_log,
            now_ms=self.now,
            delayed_interval_ms=self.config.notarization_interval_ms,
        )
        for proof in proofs:
            self._record_proof(actor, proof)

    # -- message plumbing -----------------------------------------------------------

    def _latency(self) -> int:
        lo, hi = self.config.latency_ms
        return self.rng.randint(lo, hi)

    def _dispatch(self, origin: str, actions) -> None:
        for action in actions:
            if isinstance(action, GossipAction):
                self._gossip(origin, action.receipt, action.hop)
            elif isinstance(action, FetchAction):
                self._send_block_request(origin, action)
            elif isinstance(action, PullReceiptsAction):
                self._send_receipt_pull(origin, action)
            elif isinstance(action, ProofAction):
                self._record_proof(origin, action.proof)

    def _send_receipt_pull(self, origin: str, pull: PullReceiptsAction) -> None:
        target_name = self.actor_names.get(pull.target)
        if target_name is None or target_name == origin:
            return
        self.metrics.message_count += 1
        self._schedule(
            self.now + self._latency(),
            lambda: self._serve_receipt_pull(target_name, origin, pull),
        )

    def _serve_receipt_pull(self, server: str, requester: str, pull: PullReceiptsAction) -> None:
        receipts = self.nodes[server].serve_receipts(pull.ledger_id, pull.seqs)
        if not receipts:
            return
        self.metrics.message_count += 1
        delay = self._latency()
        for receipt in receipts:
            self._schedule(
                self.now + delay,
                lambda w=protocol.encode(receipt): self._deliver_receipt(
                    requester, w, pull.hop + 1
                ),
            )

    def _record_proof(self, origin: str, proof: MisbehaviorProof) -> None:
        self.proofs.append((self.now, origin, proof))
        self.record_event(
            "proof", {"actor": origin, "proof_kind": proof.kind, "ledger": proof.ledger_id.hex()}
        )

    def _receipt_key(self, receipt: Receipt) -> str:
        return f"{receipt.ledger_id.hex()}:{receipt.notary_seq}:{receipt.new_state()[0].hex()[:8]}"

    def _register_receipt(self, receipt: Receipt, origin: str) -> None:
        key = self._receipt_key(receipt)
        if key in self._receipt_issue:
            return
        self._receipt_issue[key] = (receipt.timestamp_ms, 0)
        self._receipt_holders[key] = {origin}
        self.metrics.receipt_bytes[key] = len(protocol.encode(receipt))
        if self._covers_all(key):
            self._note_propagation(key, 0)
        participants = self._participants(receipt)
        if participants:
            self._pending_sync[key] = (receipt.timestamp_ms, participants, receipt.new_state()[1])

    def _participants(self, receipt: Receipt) -> tuple[str, ...]:
        if receipt.kind == protocol.KIND_CREATION:
            authors = receipt.request.authors.keys
        else:
            lid = receipt.ledger_id
            creation = None
            for node in self.nodes.values():
                creation = node.receipt_index.get(lid, {}).get(0)
                if creation is not None:
                    break
            if creation is None:
                return ()
            authors = creation.request.authors.keys
        names = []
        for key in authors:
            name = self.actor_names.get(identity.actor_id(key))
            if name is not None:
                names.append(name)
        return tuple(sorted(names))

    def _covers_all(self, key: str) -> bool:
        return len(self._receipt_holders.get(key, ())) >= len(self.nodes)

    def _note_propagation(self, key: str, hop: int) -> None:
        if key in self.metrics.receipt_propagation_rounds:
            return
        t_issue, _ = self._receipt_issue[key]
        self.metrics.receipt_propagation_rounds[key] = hop
        self.metrics.receipt_propagation_ms[key] = self.now - t_issue

    def _gossip(self, origin: str, receipt: Receipt, hop: int) -> None:
        node = self.nodes[origin]
        peers = list(node.peers)
        if not peers:
            return
        # one slot always goes to the ring successor (sorted actor ids): the
        # ring is a spanning cycle, so every receipt provably reaches every
        # node; the remaining slots are random picks for epidemic speed
        me = node.actor_id
        successor = next((p for p in peers if p > me), peers[0])
        fanout = min(self.config.fanout, len(peers))
        others = [p for p in peers if p != successor]
        targets = [successor] + self.rng.sample(others, min(fanout - 1, len(others)))
        wire = protocol.encode(receipt)  # messages travel in canonical encoding
        for target in targets:
            target_name = self.actor_names[target]
            self.metrics.message_count += 1
            delay = self._latency()
            self._schedule(
                self.now + delay,
                lambda w=wire, h=hop, tn=target_name: self._deliver_receipt(tn, w, h),
            )

    def _deliver_receipt(self, name: str, wire: bytes, hop: int) -> None:
        node = self.nodes[name]
        receipt = protocol.decode(wire)
        key = self._receipt_key(receipt)
        if key in self._receipt_holders and name not in self._receipt_holders[key]:
            self._receipt_holders[key].add(name)
            if self._covers_all(key):
                self._note_propagation(key, hop + 1)
        actions = node.on_receipt(receipt, hop + 1)
        self._dispatch(name, actions)

    def _send_block_request(self, origin: str, fetch: FetchAction) -> None:
        target_name = self.actor_names.get(fetch.target)
        if target_name is None or target_name == origin:
            return
        self.metrics.message_count += 1
        self._schedule(
            self.now + self._latency(),
            lambda: self._serve_block_request(target_name, origin, fetch),
        )

    def _serve_block_request(self, server: str, requester: str, fetch: FetchAction) -> None:
        node = self.nodes[server]
        requester_id = self.nodes[requester].actor_id
        try:
            items = node.serve_blocks(fetch.ledger_id, fetch.indices, requester_id)
        except NodeError as exc:
            self.record_event(
                "serve_refused", {"actor": server, "requester": requester, "code": exc.code}
            )
            return
        # transport-level confinement check: full content only to author-set members
        replica = node.replicas.get(fetch.ledger_id)
        member = requester_id in [
            identity.actor_id(k) for k in replica.authors.keys
        ]
        if any(i.entry.is_present for i in items) and not member:
            self.record_event(
                "confinement_violation", {"server": server, "requester": requester}
            )
        self.metrics.message_count += 1
        wire = Writer()
        wire.u32(len(items))
        for item in items:
            ledgerstore.write_block_item(wire, item)
        payload = wire.getvalue()
        self._schedule(
            self.now + self._latency(),
            lambda: self._deliver_blocks(requester, fetch.ledger_id, payload),
        )

    def _deliver_blocks(self, name: str, lid: LedgerId, payload: bytes) -> None:
        node = self.nodes[name]
        reader = Reader(payload)
        items = tuple(
            ledgerstore.read_block_item(reader) for _ in range(reader.u32())
        )
        try:
            verdicts, actions = node.ingest_blocks(lid, items)
        except NotaryError as exc:
            self.record_event("rejected", {"actor": name, "action": "retry", "code": exc.code})
            return
        rejected = sorted(i for i, ok in verdicts.items() if not ok)
        if rejected:
            self.record_event(
                "blocks_rejected", {"actor": name, "ledger": lid.hex(), "indices": rejected}
            )
        for action in actions:
            if isinstance(action, GossipAction):
                self._register_receipt(action.receipt, name)
                self.record_event("stale_retry_succeeded", {"actor": name})
        self._dispatch(name, actions)

    # -- convergence metrics ------------------------------------------------------

    def _check_sync(self) -> None:
        done = []
        for key, (t_issue, participants, size) in self._pending_sync.items():
            if all(self._holds(self.nodes[p], key, size) for p in participants):
                self.metrics.sync_delay_ms[key] = self.now - t_issue
                done.append(key)
        for key in done:
            del self._pending_sync[key]

    def _holds(self, node: Node, key: str, size: int) -> bool:
        lid = bytes.fromhex(key.split(":")[0])
        replica = node.replicas.get(lid)
        return replica is not None and replica.official_size >= size


def run(scenario: Scenario) -> SimResult:
    return Simulation(scenario).run()


# -- scenario corpus ---------------------------------------------------------------


def _script(*actions: tuple) -> tuple[ScriptAction, ...]:
    return tuple(ScriptAction(t, actor, action, params) for t, actor, action, params in actions)


def _names(n: int) -> list[str]:
    return [f"node{i}" for i in range(n)]


def scenario_corpus() -> list[Scenario]:
    """Named scenarios exercising every honest flow and every fault class."""
    scenarios: list[Scenario] = []

    scenarios.append(
        Scenario(
            name="honest-small",
            config=SimConfig(seed=1, node_count=2, latency_ms=(10, 30)),
            script=_script(
                (0, "node0", "create", {"ledger": "L", "authors": _names(2), "blocks": ["a0", "a1"]}),
                (200, "node0", "extend", {"ledger": "L", "blocks": ["b0"]}),
                (400, "node1", "extend", {"ledger": "L", "blocks": ["c0", "c1"]}),
                (900, "node1", "export", {"ledger": "L", "label": "full"}),
            ),
        )
    )

    medium_script = [
        (0, "node0", "create", {"ledger": "L", "authors": _names(5), "blocks": ["seed"]}),
    ]
    for k in range(10):
        actor = f"node{k % 5}"
        medium_script.append(
            (300 + 400 * k, actor, "extend", {"ledger": "L", "blocks": [f"blk-{k}"]})
        )
    medium_script.append((4_600, "node2", "export", {"ledger": "L", "label": "medium-full"}))
    scenarios.append(
        Scenario(
            name="honest-medium",
            config=SimConfig(seed=7, node_count=5, latency_ms=(15, 60)),
            script=_script(*medium_script),
        )
    )

    large_script = [
        (0, "node0", "create", {"ledger": "SHARED", "authors": _names(10), "blocks": ["root"]}),
        (100, "node12", "create", {"ledger": "SIDE", "authors": ["node12", "node13"], "blocks": ["s0"]}),
        (400, "node3", "extend", {"ledger": "SHARED", "blocks": ["x0", "x1"]}),
        (900, "node7", "extend", {"ledger": "SHARED", "blocks": ["y0"]}),
        (1400, "node13", "extend", {"ledger": "SIDE", "blocks": ["s1"]}),
        (2500, "node9", "export", {"ledger": "SHARED", "label": "large-full"}),
    ]
    scenarios.append(
        Scenario(
            name="honest-large",
            config=SimConfig(seed=11, node_count=20, latency_ms=(10, 50)),
            script=_script(*large_script),
        )
    )

    scenarios.append(
        Scenario(
            name="race",
            config=SimConfig(seed=3, node_count=2, latency_ms=(25, 40)),
            script=_script(
                (0, "node0", "create", {"ledger": "L", "authors": _names(2), "blocks": ["base"]}),
                (500, "node0", "extend", {"ledger": "L", "blocks": ["from-a"]}),
                (500, "node1", "extend", {"ledger": "L", "blocks": ["from-b"]}),
            ),
        )
    )

    scenarios.append(
        Scenario(
            name="erasure-export",
            config=SimConfig(seed=5, node_count=3, latency_ms=(10, 30)),
            script=_script(
                (0, "node0", "create", {"ledger": "L", "authors": _names(3), "blocks": ["keep-0", "secret-1"]}),
                (300, "node0", "extend", {"ledger": "L", "blocks": ["keep-2", "secret-3"]}),
                (900, "node0", "erase", {"ledger": "L", "index": 1}),
                (950, "node0", "erase", {"ledger": "L", "index": 3}),
                (1000, "node0", "export", {"ledger": "L", "label": "after-erasure"}),
            ),
        )
    )

    scenarios.append(
        Scenario(
            name="delayed-notarization",
            config=SimConfig(
                seed=9, node_count=3, latency_ms=(10, 30), notarization_interval_ms=5_000
            ),
            script=_script(
                (0, "node0", "create", {"ledger": "L", "authors": _names(3), "blocks": ["d0"]}),
                (400, "node0", "extend", {"ledger": "L", "blocks": ["d1"]}),
                (800, "node1", "extend", {"ledger": "L", "blocks": ["d2"]}),
                (1600, "node2", "extend", {"ledger": "L", "blocks": ["d3"]}),
                (11_000, "node1", "export", {"ledger": "L", "label": "delayed-full"}),
            ),
        )
    )

    scenarios.append(
        Scenario(
            name="repository-recovery",
            config=SimConfig(seed=13, node_count=2, latency_ms=(10, 30), mode_repository=True),
            script=_script(
                (0, "node0", "create", {"ledger": "L", "authors": _names(2), "blocks": ["r0", "r1"]}),
                (300, "node0", "extend", {"ledger": "L", "blocks": ["r2"]}),
                (600, "node0", "certify", {"ledger": "L", "indices": [0, 1, 2]}),
                (900, "node1", "wipe", {"ledger": "L"}),
                (1000, "node1", "recover", {"ledger": "L"}),
                (1200, "node1", "export", {"ledger": "L", "label": "recovered"}),
            ),
        )
    )

    policy_block = notary_mod.encode_policy(
        notary_mod.Policy(max_block_bytes=64, min_signers=2, allowed_content_tags=(0x50,))
    )
    scenarios.append(
        Scenario(
            name="policy-enforcement",
            config=SimConfig(
                seed=15, node_count=3, latency_ms=(10, 30), mode_repository=True, mode_policy=True
            ),
            script=_script(
                (0, "node0", "create", {
                    "ledger": "L",
                    "authors": _names(3),
                    "blocks": [policy_block, b"P-first"],
                }),
                (300, "node0", "extend", {
                    "ledger": "L", "blocks": [b"P-ok"], "co_signers": ["node1"],
                }),
                (600, "node1", "extend", {"ledger": "L", "blocks": [b"P-single-signer"]}),
                (900, "node2", "extend", {
                    "ledger": "L", "blocks": [b"Q-wrong-tag"], "co_signers": ["node0"],
                }),
                (1200, "node2", "extend", {
                    "ledger": "L",
                    "blocks": [b"P" + b"x" * 100],
                    "co_signers": ["node1"],
                }),
            ),
        )
    )

    scenarios.append(
        Scenario(
            name="notary-fork",
            config=SimConfig(
                seed=17,
                node_count=3,
                latency_ms=(100, 100),
                faults=(FaultSpec(NOTARY_FORK, at_request=2),),
            ),
            script=_script(
                (0, "node0", "create", {"ledger": "L", "authors": _names(3), "blocks": ["f0"]}),
                (500, "node0", "extend", {"ledger": "L", "blocks": ["f1"]}),
                (500, "node1", "extend", {"ledger": "L", "blocks": ["f2"]}),
            ),
        )
    )

    scenarios.append(
        Scenario(
            name="notary-unauthorized",
            config=SimConfig(
                seed=19,
                node_count=3,
                latency_ms=(20, 40),
                faults=(FaultSpec(NOTARY_UNAUTHORIZED_ACCEPT, at_request=2),),
            ),
            script=_script(
                (0, "node0", "create", {"ledger": "L", "authors": ["node0", "node1"], "blocks": ["u0"]}),
                (400, "node0", "extend", {"ledger": "L", "blocks": ["u1"]}),
                (1200, "node2", "rogue_extend", {"ledger": "L"}),
            ),
        )
    )

    scenarios.append(
        Scenario(
            name="anchor-omit",
            config=SimConfig(
                seed=21,
                node_count=3,
                latency_ms=(10, 30),
                faults=(FaultSpec(ANCHOR_OMIT, at_request=2),),
            ),
            script=_script(
                (0, "node0", "create", {"ledger": "L", "authors": _names(3), "blocks": ["o0"]}),
                (300, "node0", "extend", {"ledger": "L", "blocks": ["o1"]}),
                (600, "node1", "extend", {"ledger": "L", "blocks": ["o2"]}),
                (2000, "node2", "audit_internal", {}),
            ),
        )
    )

    scenarios.append(
        Scenario(
            name="duplicate-init",
            config=SimConfig(
                seed=23,
                node_count=2,
                latency_ms=(10, 30),
                faults=(FaultSpec(DUPLICATE_INIT, at_time_ms=700, params={"ledger": "L"}),),
            ),
            script=_script(
                (0, "node0", "create", {"ledger": "L", "authors": _names(2), "blocks": ["i0"]}),
                (300, "node0", "extend", {"ledger": "L", "blocks": ["i1"]}),
            ),
        )
    )

    scenarios.append(
        Scenario(
            name="node-tamper",
            config=SimConfig(
                seed=25,
                node_count=2,
                latency_ms=(10, 30),
                faults=(
                    FaultSpec(
                        NODE_TAMPER_BLOCK,
                        params={"actor": "node0", "index": 1, "times": 1},
                    ),
                ),
            ),
            script=_script(
                (0, "node0", "create", {"ledger": "L", "authors": _names(2), "blocks": ["t0"]}),
                (300, "node0", "extend", {"ledger": "L", "blocks": ["t1", "t2"]}),
            ),
        )
    )

    scenarios.append(
        Scenario(
            name="multi-ledger",
            config=SimConfig(seed=27, node_count=4, latency_ms=(10, 40)),
            script=_script(
                (0, "node0", "create", {"ledger": "A", "authors": ["node0", "node1"], "blocks": ["a"]}),
                (50, "node2", "create", {"ledger": "B", "authors": ["node2", "node3"], "blocks": ["b"]}),
                (400, "node1", "extend", {"ledger": "A", "blocks": ["a1"]}),
                (500, "node3", "extend", {"ledger": "B", "blocks": ["b1"]}),
                (1500, "node0", "export", {"ledger": "A", "label": "ledger-a"}),
                (1500, "node2", "export", {"ledger": "B", "label": "ledger-b"}),
            ),
        )
    )

    return scenarios


def get_scenario(name: str) -> Scenario | None:
    for scenario in scenario_corpus():
        if scenario.name == name:
            return scenario
    return None


HONEST_SCENARIOS = (
    "honest-small",
    "honest-medium",
    "honest-large",
    "race",
    "erasure-export",
    "delayed-notarization",
    "repository-recovery",
    "multi-ledger",
)

FAULT_SCENARIOS = {
    "notary-fork": NOTARY_FORK,
    "notary-unauthorized": NOTARY_UNAUTHORIZED_ACCEPT,
    "anchor-omit": ANCHOR_OMIT,
    "duplicate-init": DUPLICATE_INIT,
    "node-tamper": NODE_TAMPER_BLOCK,
}
