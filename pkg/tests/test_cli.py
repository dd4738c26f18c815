import json
from pathlib import Path

import pytest

from hybridledger import cli, identity
from hybridledger.cli import EXIT_OK, EXIT_USAGE, EXIT_VERIFICATION_FAILED


def run_cli(*argv) -> int:
    return cli.main([str(a) for a in argv])


@pytest.fixture
def sim_out(tmp_path):
    out = tmp_path / "honest"
    assert run_cli("sim", "honest-small", "--out", out) == EXIT_OK
    return out


class TestSim:
    def test_writes_artifacts(self, sim_out):
        expected = {
            "anchor.log",
            "anchor.jsonl",
            "receipts.jsonl",
            "metrics.json",
            "events.jsonl",
            "proofs.jsonl",
            "notary.pub",
        }
        names = {p.name for p in sim_out.iterdir()}
        assert expected <= names
        assert any(n.startswith("export_") and n.endswith(".hyb") for n in names)

    def test_deterministic_outputs(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run_cli("sim", "honest-small", "--seed", 5, "--out", out1) == EXIT_OK
        assert run_cli("sim", "honest-small", "--seed", 5, "--out", out2) == EXIT_OK
        for name in ("anchor.log", "metrics.json", "receipts.jsonl", "events.jsonl"):
            assert (out1 / name).read_bytes() == (out2 / name).read_bytes()

    def test_fault_scenario_writes_proofs(self, tmp_path):
        out = tmp_path / "fork"
        assert run_cli("sim", "notary-fork", "--out", out) == EXIT_OK
        proofs = (out / "proofs.jsonl").read_text().strip().splitlines()
        assert proofs
        assert json.loads(proofs[0])["kind"] == "FORK"

    def test_unknown_scenario(self, tmp_path):
        assert run_cli("sim", "no-such-scenario", "--out", tmp_path / "x") == EXIT_USAGE

    def test_script_file(self, tmp_path):
        script = tmp_path / "custom.jsonl"
        lines = [
            json.dumps({"config": {"seed": 3, "node_count": 2, "latency_ms": [10, 20]}}),
            json.dumps({
                "time_ms": 0, "actor": "node0", "action": "create",
                "params": {"ledger": "L", "authors": ["node0", "node1"], "blocks": ["hello"]},
            }),
            json.dumps({
                "time_ms": 300, "actor": "node1", "action": "extend",
                "params": {"ledger": "L", "blocks": ["world"]},
            }),
        ]
        script.write_text("\n".join(lines) + "\n")
        out = tmp_path / "scripted"
        assert run_cli("sim", script, "--out", out) == EXIT_OK
        events = [json.loads(l) for l in (out / "events.jsonl").read_text().splitlines()]
        assert [e["kind"] for e in events] == ["created", "extended"]


class TestAudit:
    def test_honest_log_exit_zero(self, sim_out, capsys):
        code = run_cli("audit", sim_out / "anchor.log", "--notary-key", sim_out / "notary.pub")
        assert code == EXIT_OK
        record = json.loads(capsys.readouterr().out.strip().splitlines()[0])
        assert record["status"] == "coherent"

    def test_duplicate_init_exit_one(self, tmp_path, capsys):
        out = tmp_path / "dup"
        assert run_cli("sim", "duplicate-init", "--out", out) == EXIT_OK
        capsys.readouterr()  # drop the sim summary line
        code = run_cli("audit", out / "anchor.log", "--notary-key", out / "notary.pub")
        assert code == EXIT_VERIFICATION_FAILED
        lines = [json.loads(l) for l in capsys.readouterr().out.strip().splitlines()]
        bad = [l for l in lines if l["status"] != "coherent"]
        assert bad and bad[0]["violations"][0]["kind"] == "DUPLICATE_INIT"
        assert len(bad[0]["violations"][0]["txn_ids"]) == 2

    def test_truncated_log_exit_two(self, sim_out, tmp_path):
        broken = tmp_path / "broken.log"
        data = (sim_out / "anchor.log").read_bytes()
        broken.write_bytes(data[: len(data) - 3])
        code = run_cli("audit", broken, "--notary-key", sim_out / "notary.pub")
        assert code == EXIT_USAGE


class TestVerifyExport:
    def _archive(self, sim_out) -> Path:
        return next(p for p in sim_out.iterdir() if p.suffix == ".hyb")

    def test_honest_archive(self, sim_out):
        code = run_cli(
            "verify-export", self._archive(sim_out), sim_out / "anchor.log",
            "--notary-key", sim_out / "notary.pub",
        )
        assert code == EXIT_OK

    def test_flipped_content_rejected(self, sim_out, tmp_path, capsys):
        raw = bytearray(self._archive(sim_out).read_bytes())
        needle = b"a0"  # block content from the honest-small script
        pos = raw.find(needle)
        assert pos > 0
        raw[pos] ^= 0x01
        bad = tmp_path / "tampered.hyb"
        bad.write_bytes(bytes(raw))
        code = run_cli(
            "verify-export", bad, sim_out / "anchor.log",
            "--notary-key", sim_out / "notary.pub",
        )
        assert code == EXIT_VERIFICATION_FAILED
        assert json.loads(capsys.readouterr().out)["reason"] == "CONTENT_MISMATCH"

    def test_wrong_log_rejected(self, sim_out, tmp_path):
        other = tmp_path / "other"
        assert run_cli("sim", "multi-ledger", "--out", other) == EXIT_OK
        code = run_cli(
            "verify-export", self._archive(sim_out), other / "anchor.log",
            "--notary-key", other / "notary.pub",
        )
        assert code == EXIT_VERIFICATION_FAILED

    def test_malformed_archive(self, sim_out, tmp_path):
        junk = tmp_path / "junk.hyb"
        junk.write_bytes(b"not an archive")
        code = run_cli(
            "verify-export", junk, sim_out / "anchor.log",
            "--notary-key", sim_out / "notary.pub",
        )
        assert code == EXIT_USAGE


class TestBench:
    def test_tiny_bench_reports(self, capsys):
        code = run_cli(
            "bench", "--blocks", 6, "--block-bytes", 64, "--ledgers", 2, "--threads", 2
        )
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["requests"] == 6
        assert report["chains_coherent"] is True
        assert report["receipt_count"] == 6

    def test_zero_blocks_usage_error(self):
        assert run_cli("bench", "--blocks", 0) == EXIT_USAGE

    def test_hundred_ledgers_all_coherent(self, capsys):
        code = run_cli(
            "bench", "--blocks", 100, "--block-bytes", 64, "--ledgers", 100,
            "--threads", 4,
        )
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert len(report["ledger_ids"]) == 100
        assert report["chains_coherent"] is True
        assert report["anchor_coherent"] is True

    def test_delayed_bench_batches(self, capsys):
        code = run_cli(
            "bench", "--blocks", 10, "--block-bytes", 32, "--ledgers", 1,
            "--mode", "delayed", "--interval-ms", 50, "--threads", 1,
        )
        assert code == EXIT_OK
        report = json.loads(capsys.readouterr().out)
        assert report["receipt_count"] == 10
        per_ledger = report["extension_anchor_txns_per_ledger"]
        import math

        bound = math.ceil(report["virtual_duration_ms"] / report["interval_ms"])
        assert all(v <= bound for v in per_ledger.values())


class TestKeygen:
    def test_reproducible(self, tmp_path, capsys):
        seed = "ab" * 32
        out1, out2 = tmp_path / "k1", tmp_path / "k2"
        assert run_cli("keygen", "--out", out1, "--seed", seed) == EXIT_OK
        assert run_cli("keygen", "--out", out2, "--seed", seed) == EXIT_OK
        assert out1.read_text() == out2.read_text()
        assert identity.load_keypair(out1) == identity.load_keypair(out2)

    def test_bad_seed(self, tmp_path):
        assert run_cli("keygen", "--out", tmp_path / "k", "--seed", "zz") == EXIT_USAGE
