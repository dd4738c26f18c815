import dataclasses
import json

import pytest

from hybridledger import auditor, hashtree, identity, ledgerstore, protocol
from hybridledger.anchor import AnchorLog, ExtendPayload, InitPayload
from hybridledger.auditor import (
    BAD_INCLUSION,
    BAD_RECEIPT,
    BROKEN_CHAIN,
    CONTENT_MISMATCH,
    DUPLICATE_INIT,
    HISTORY_INCOHERENT,
    INVALID_PROOF,
    MALFORMED_TXN,
    RECEIPT_ANCHOR_MISMATCH,
    audit_anchor,
    verify_export,
    verify_misbehavior_proof,
)
from hybridledger.node import FORK, MisbehaviorProof


@pytest.fixture
def populated(make_node, notary, anchor_log):
    """Five honest single-author ledgers with a few extensions each."""
    node = make_node(0)
    replicas = []
    for i in range(5):
        replica, _ = node.create_ledger(
            [node.keypair.public], [b"genesis-%d" % i], nonce=bytes([i]) * 8
        )
        for k in range(i % 3):
            node.extend_ledger(replica.ledger_id, [b"ext-%d-%d" % (i, k)])
        replicas.append(replica)
    return node, replicas


class TestAuditAnchor:
    def test_honest_ledgers_coherent(self, populated, anchor_log, notary):
        _, replicas = populated
        report = audit_anchor(anchor_log, notary.address)
        assert len(report.ledgers) == 5
        assert report.all_coherent
        for replica in replicas:
            audit = report.for_ledger(replica.ledger_id)
            assert audit.final_state() == (replica.official_digest, replica.official_size)

    def test_duplicate_init(self, populated, anchor_log, notary):
        _, replicas = populated
        lid = replicas[0].ledger_id
        anchor_log.submit(
            notary.address, InitPayload(lid, hashtree.leaf_hash(b"rewrite"), 1)
        )
        report = audit_anchor(anchor_log, notary.address)
        audit = report.for_ledger(lid)
        assert not audit.coherent
        assert audit.violations[0].kind == DUPLICATE_INIT
        assert len(audit.violations[0].txn_ids) == 2

    def test_invalid_proof(self, populated, anchor_log, notary):
        _, replicas = populated
        replica = replicas[1]
        bogus = ExtendPayload(
            replica.ledger_id,
            replica.official_digest,
            replica.official_size,
            hashtree.leaf_hash(b"whatever"),
            replica.official_size + 1,
            hashtree.ConsistencyProof(
                replica.official_size, replica.official_size + 1, (hashtree.leaf_hash(b"junk"),)
            ),
        )
        anchor_log.submit(notary.address, bogus)
        audit = audit_anchor(anchor_log, notary.address).for_ledger(replica.ledger_id)
        assert [v.kind for v in audit.violations] == [INVALID_PROOF]

    def test_broken_chain(self, populated, anchor_log, notary):
        _, replicas = populated
        replica = replicas[2]
        # a valid proof over a history that does not match the official chain
        foreign = [hashtree.leaf_hash(b"foreign-%d" % i) for i in range(3)]
        payload = ExtendPayload(
            replica.ledger_id,
            hashtree.root_from_leaf_digests(foreign[:1]),
            1,
            hashtree.root_from_leaf_digests(foreign),
            3,
            hashtree.prove_consistency(foreign, 1),
        )
        anchor_log.submit(notary.address, payload)
        audit = audit_anchor(anchor_log, notary.address).for_ledger(replica.ledger_id)
        assert [v.kind for v in audit.violations] == [BROKEN_CHAIN]

    def test_extension_before_init(self, anchor_log, notary):
        orphan = [hashtree.leaf_hash(b"orphan-%d" % i) for i in range(2)]
        payload = ExtendPayload(
            b"\x42" * 16,
            hashtree.root_from_leaf_digests(orphan[:1]),
            1,
            hashtree.root_from_leaf_digests(orphan),
            2,
            hashtree.prove_consistency(orphan, 1),
        )
        anchor_log.submit(notary.address, payload)
        audit = audit_anchor(anchor_log, notary.address).for_ledger(b"\x42" * 16)
        assert [v.kind for v in audit.violations] == [MALFORMED_TXN]

    def test_other_addresses_ignored(self, populated, anchor_log, notary):
        _, replicas = populated
        stranger = identity.actor_id(identity.generate_keypair(b"\x77" * 32).public)
        anchor_log.submit(
            stranger, InitPayload(replicas[0].ledger_id, hashtree.leaf_hash(b"fake"), 1)
        )
        assert audit_anchor(anchor_log, notary.address).all_coherent

    def test_json_lines(self, populated, anchor_log, notary):
        report = audit_anchor(anchor_log, notary.address)
        lines = report.to_json_lines()
        assert len(lines) == 5
        for line in lines:
            record = json.loads(line)
            assert record["status"] == "coherent"
            assert record["violations"] == []


class TestVerifyExport:
    def test_honest_full_export(self, populated, anchor_log, notary_keypair):
        node, replicas = populated
        archive = node.export(replicas[2].ledger_id)
        assert verify_export(archive, anchor_log, notary_keypair.public) is None

    def test_content_flip_detected(self, populated, anchor_log, notary_keypair):
        node, replicas = populated
        archive = node.export(replicas[2].ledger_id)
        item = archive.items[0]
        flipped = bytes([item.entry.content[0] ^ 1]) + item.entry.content[1:]
        bad_entry = ledgerstore.BlockEntry(item.entry.leaf_digest, flipped)
        bad_items = (ledgerstore.BlockItem(item.index, bad_entry, item.proof),) + archive.items[1:]
        tampered = dataclasses.replace(archive, items=bad_items)
        assert verify_export(tampered, anchor_log, notary_keypair.public) == CONTENT_MISMATCH

    def test_wrong_ledger_log(self, populated, notary_keypair):
        node, replicas = populated
        archive = node.export(replicas[0].ledger_id)
        empty_log = AnchorLog()
        assert (
            verify_export(archive, empty_log, notary_keypair.public) == HISTORY_INCOHERENT
        )

    def test_forked_anchor_history(self, populated, anchor_log, notary, notary_keypair):
        node, replicas = populated
        replica = replicas[1]
        archive = node.export(replica.ledger_id)
        anchor_log.submit(
            notary.address, InitPayload(replica.ledger_id, hashtree.leaf_hash(b"zz"), 1)
        )
        assert (
            verify_export(archive, anchor_log, notary_keypair.public)
            == HISTORY_INCOHERENT
        )

    def test_bad_inclusion_proof(self, populated, anchor_log, notary_keypair):
        node, replicas = populated
        node.extend_ledger(replicas[0].ledger_id, [b"x1"])
        archive = node.export(replicas[0].ledger_id)
        a, b = archive.items[0], archive.items[1]
        swapped = (
            ledgerstore.BlockItem(a.index, a.entry, b.proof),
            ledgerstore.BlockItem(b.index, b.entry, a.proof),
        )
        tampered = dataclasses.replace(archive, items=swapped)
        assert verify_export(tampered, anchor_log, notary_keypair.public) == BAD_INCLUSION

    def test_truncated_receipt_chain(self, populated, anchor_log, notary_keypair):
        node, replicas = populated
        replica = replicas[2]  # has extensions
        archive = node.export(replica.ledger_id)
        truncated = dataclasses.replace(archive, receipts=archive.receipts[:-1])
        assert (
            verify_export(truncated, anchor_log, notary_keypair.public)
            == RECEIPT_ANCHOR_MISMATCH
        )

    def test_foreign_author_set(self, populated, anchor_log, notary_keypair, author_keypairs):
        node, replicas = populated
        archive = node.export(replicas[0].ledger_id)
        foreign = protocol.AuthorSet.from_keys([author_keypairs[2].public])
        tampered = dataclasses.replace(archive, author_set=foreign)
        assert verify_export(tampered, anchor_log, notary_keypair.public) == BAD_RECEIPT


class TestVerifyMisbehaviorProof:
    def _fork_pair(self, make_node, notary_keypair, author_keypairs):
        node = make_node(0)
        replica, creation = node.create_ledger(
            [author_keypairs[0].public], [b"base"], nonce=b"f" * 8
        )
        honest = node.extend_ledger(replica.ledger_id, [b"one"])

        rewrite = [hashtree.leaf_hash(b"base"), hashtree.leaf_hash(b"two")]
        request = protocol.ExtensionRequest(
            ledger_id=replica.ledger_id,
            prev_digest=honest.request.prev_digest,
            prev_size=honest.request.prev_size,
            new_digest=hashtree.root_from_leaf_digests(rewrite),
            new_size=2,
            proof=hashtree.prove_consistency(rewrite, 1),
            author_keys=(author_keypairs[0].public,),
        )
        request = protocol.sign_extension(request, [author_keypairs[0].secret])
        rival = protocol.Receipt(protocol.KIND_EXTENSION, request, 1, None, 2, b"")
        rival = dataclasses.replace(
            rival,
            notary_sig=identity.sign(notary_keypair.secret, protocol.signing_bytes(rival)),
        )
        return replica, honest, rival

    def test_fork_proof_accepted(self, make_node, notary_keypair, author_keypairs):
        replica, honest, rival = self._fork_pair(make_node, notary_keypair, author_keypairs)
        proof = MisbehaviorProof(FORK, replica.ledger_id, (honest, rival))
        assert verify_misbehavior_proof(proof, notary_keypair.public)

    def test_fabricated_fork_rejected(self, make_node, notary_keypair, author_keypairs):
        replica, honest, rival = self._fork_pair(make_node, notary_keypair, author_keypairs)
        impostor = identity.generate_keypair(b"\x13" * 32)
        resigned = dataclasses.replace(
            rival,
            notary_sig=identity.sign(impostor.secret, protocol.signing_bytes(rival)),
        )
        proof = MisbehaviorProof(FORK, replica.ledger_id, (honest, resigned))
        assert not verify_misbehavior_proof(proof, notary_keypair.public)

    def test_identical_receipts_rejected(self, make_node, notary_keypair, author_keypairs):
        replica, honest, _ = self._fork_pair(make_node, notary_keypair, author_keypairs)
        proof = MisbehaviorProof(FORK, replica.ledger_id, (honest, honest))
        assert not verify_misbehavior_proof(proof, notary_keypair.public)

    def test_disjoint_bases_rejected(self, make_node, notary_keypair, author_keypairs):
        node = make_node(0)
        replica, creation = node.create_ledger(
            [author_keypairs[0].public], [b"base"], nonce=b"g" * 8
        )
        r1 = node.extend_ledger(replica.ledger_id, [b"one"])
        r2 = node.extend_ledger(replica.ledger_id, [b"two"])
        proof = MisbehaviorProof(FORK, replica.ledger_id, (r1, r2))
        assert not verify_misbehavior_proof(proof, notary_keypair.public)
