import random

import pytest

from hybridledger import auditor, hashtree, ledgerstore, protocol
from hybridledger.errors import StoreError
from hybridledger.ledgerstore import BlockEntry

from naive_merkle import oracle_root


@pytest.fixture
def ledger(make_node):
    node = make_node(0)
    replica, receipt = node.create_ledger(
        [node.keypair.public], [b"block-0", b"block-1"], nonce=b"n" * 8
    )
    return node, replica


class TestStage:
    def test_round_trip_with_verifier(self, ledger):
        _, replica = ledger
        new_digest, new_size, proof = ledgerstore.stage_blocks(replica, [b"block-2"])
        assert new_size == 3
        assert hashtree.verify_consistency(
            replica.official_digest, replica.official_size, new_digest, new_size, proof
        )
        # staging does not touch official state
        assert replica.official_size == 2

    def test_single_block_on_single_block_ledger(self, make_node):
        node = make_node(0)
        replica, _ = node.create_ledger([node.keypair.public], [b"only"], nonce=b"m" * 8)
        _, new_size, _ = ledgerstore.stage_blocks(replica, [b"second"])
        assert new_size == 2

    def test_staged_digest_matches_oracle(self, ledger):
        _, replica = ledger
        new_digest, _, _ = ledgerstore.stage_blocks(replica, [b"block-2", b"block-3"])
        assert new_digest == oracle_root([b"block-0", b"block-1", b"block-2", b"block-3"])

    def test_empty_append(self, ledger):
        _, replica = ledger
        with pytest.raises(StoreError) as err:
            ledgerstore.stage_blocks(replica, [])
        assert err.value.code == "EMPTY_APPEND"


class TestCommit:
    def test_honest_commit_keeps_invariants(self, ledger, notary_keypair):
        node, replica = ledger
        node.extend_ledger(replica.ledger_id, [b"block-2"])
        replica.check_invariants()
        assert replica.official_size == 3

    def test_receipt_for_other_state_rejected(self, ledger, make_node, notary_keypair):
        node, replica = ledger
        receipt = node.extend_ledger(replica.ledger_id, [b"block-2"])
        # replica already committed this receipt; replaying it must fail
        with pytest.raises(StoreError) as err:
            ledgerstore.commit(replica, receipt, [b"block-2"], notary_keypair.public)
        assert err.value.code == "RECEIPT_MISMATCH"

    def test_three_extensions_sequence(self, ledger):
        node, replica = ledger
        for i in range(3):
            node.extend_ledger(replica.ledger_id, [b"extra-%d" % i])
        assert [r.notary_seq for r in replica.receipts] == [0, 1, 2, 3]
        replica.check_invariants()

    def test_wrong_blocks_rejected(self, ledger, notary, notary_keypair):
        node, replica = ledger
        new_digest, new_size, proof = ledgerstore.stage_blocks(replica, [b"real"])
        request = protocol.ExtensionRequest(
            replica.ledger_id,
            replica.official_digest,
            replica.official_size,
            new_digest,
            new_size,
            proof,
            (node.keypair.public,),
        )
        request = protocol.sign_extension(request, [node.keypair.secret])
        receipt = notary.handle_extend(request)
        with pytest.raises(StoreError):
            ledgerstore.commit(replica, receipt, [b"imposter"], notary_keypair.public)


class TestErase:
    def test_digest_unchanged(self, ledger):
        _, replica = ledger
        before = replica.official_digest
        ledgerstore.erase_block(replica, 1)
        assert replica.official_digest == before
        assert not replica.entries[1].is_present
        replica.check_invariants()

    def test_erase_everything(self, ledger):
        _, replica = ledger
        before = replica.official_digest
        for index in range(replica.official_size):
            ledgerstore.erase_block(replica, index)
        assert replica.official_digest == before
        assert hashtree.root_from_leaf_digests(replica.leaf_digests()) == before

    def test_already_omitted(self, ledger):
        _, replica = ledger
        ledgerstore.erase_block(replica, 0)
        with pytest.raises(StoreError) as err:
            ledgerstore.erase_block(replica, 0)
        assert err.value.code == "ALREADY_OMITTED"

    def test_out_of_range(self, ledger):
        _, replica = ledger
        with pytest.raises(StoreError) as err:
            ledgerstore.erase_block(replica, 99)
        assert err.value.code == "INDEX_OUT_OF_RANGE"

    def test_random_erasures_keep_exports_valid(
        self, ledger, anchor_log, notary_keypair
    ):
        node, replica = ledger
        node.extend_ledger(replica.ledger_id, [b"b2", b"b3", b"b4"])
        rng = random.Random(11)
        for index in rng.sample(range(5), 3):
            ledgerstore.erase_block(replica, index)
        archive = ledgerstore.make_export(replica, range(5))
        assert auditor.verify_export(archive, anchor_log, notary_keypair.public) is None


class TestExport:
    def test_full_export_round_trip(self, ledger, anchor_log, notary_keypair):
        _, replica = ledger
        archive = ledgerstore.make_export(replica, [0, 1])
        assert auditor.verify_export(archive, anchor_log, notary_keypair.public) is None

    def test_selected_indices_only(self, ledger, anchor_log, notary_keypair):
        node, replica = ledger
        node.extend_ledger(replica.ledger_id, [b"b2", b"b3"])
        archive = ledgerstore.make_export(replica, [0, 3])
        assert [item.index for item in archive.items] == [0, 3]
        assert auditor.verify_export(archive, anchor_log, notary_keypair.public) is None

    def test_export_with_erased_entry(self, ledger, anchor_log, notary_keypair):
        _, replica = ledger
        ledgerstore.erase_block(replica, 0)
        archive = ledgerstore.make_export(replica, [0, 1])
        assert not archive.items[0].entry.is_present
        assert auditor.verify_export(archive, anchor_log, notary_keypair.public) is None

    def test_out_of_range(self, ledger):
        _, replica = ledger
        with pytest.raises(StoreError):
            ledgerstore.make_export(replica, [7])


class TestArchiveFile:
    def test_file_round_trip(self, ledger, tmp_path):
        _, replica = ledger
        archive = ledgerstore.make_export(replica, [0, 1])
        path = tmp_path / "export.hyb"
        ledgerstore.write_archive(archive, path)
        assert path.read_bytes()[:5] == b"HYBX\x01"
        assert ledgerstore.read_archive(path) == archive

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "junk.hyb"
        path.write_bytes(b"JUNK\x01abc")
        with pytest.raises(Exception):
            ledgerstore.read_archive(path)

    def test_json_dump_fields(self, ledger):
        _, replica = ledger
        ledgerstore.erase_block(replica, 1)
        archive = ledgerstore.make_export(replica, [0, 1])
        rendered = ledgerstore.archive_to_json(archive)
        assert rendered["claimed_size"] == 2
        assert rendered["items"][0]["present"] is True
        assert rendered["items"][1]["present"] is False
        assert rendered["items"][1]["content"] is None


class TestEntryInvariants:
    def test_present_entry_digest(self):
        entry = BlockEntry.present(b"payload")
        assert entry.leaf_digest == hashtree.leaf_hash(b"payload")

    def test_replica_invariant_check_detects_corruption(self, ledger):
        _, replica = ledger
        replica.entries[0] = BlockEntry.present(b"swapped")
        with pytest.raises(StoreError):
            replica.check_invariants()
