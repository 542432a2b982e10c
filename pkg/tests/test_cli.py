"""End-to-end CLI tests driven through main() with a temp data dir."""

import json

import pytest

import transportchain as tc
from transportchain.cli import main


@pytest.fixture
def data_dir(tmp_path):
    return str(tmp_path / "data")


def run(data_dir, *argv, expect=0, capsys=None):
    code = main(["--data-dir", data_dir, *argv])
    assert code == expect, f"{argv} -> exit {code}"
    if capsys is not None:
        return capsys.readouterr().out
    return None


def bootstrap(data_dir):
    run(data_dir, "network", "init", "--seed", "3")
    run(data_dir, "principal", "add", "--id", "orgA", "--kind", "organisation")
    run(data_dir, "principal", "add", "--id", "companyX", "--kind", "transport-company")
    run(data_dir, "principal", "add", "--id", "alice", "--kind", "employee",
        "--org", "orgA", "--role", "engineer")
    run(data_dir, "channel", "create", "--name", "c", "--org", "orgA",
        "--company", "companyX", "--balance", "orgA=800")
    run(data_dir, "contract", "deploy", "--channel", "c", "--type", "token",
        "--company", "companyX")
    run(data_dir, "escrow", "init", "--channel", "c", "--company", "companyX",
        "--credits", "1000", "--price", "500", "--price-list", "bus=2,train=5")
    run(data_dir, "escrow", "deposit-tokens", "--channel", "c",
        "--company", "companyX", "--amount", "1000")
    run(data_dir, "escrow", "deposit-payment", "--channel", "c",
        "--company", "companyX", "--amount", "500")
    run(data_dir, "contract", "deploy", "--channel", "c", "--type", "access")
    run(data_dir, "access", "delegate", "--channel", "c", "--caller", "orgA",
        "--parent", "root", "--grantee", "alice",
        "--conditions", '{"kind":"transport-types","allowed":["bus"]}')


class TestLifecycle:
    def test_init_twice_refused(self, data_dir):
        run(data_dir, "network", "init")
        run(data_dir, "network", "init", expect=2)

    def test_deploy_on_missing_channel_exit_2(self, data_dir):
        run(data_dir, "network", "init")
        run(data_dir, "contract", "deploy", "--channel", "nope", "--type", "access",
            expect=2)

    def test_trip_lifecycle(self, data_dir, capsys):
        bootstrap(data_dir)
        capsys.readouterr()  # drop bootstrap output
        out = run(data_dir, "trip", "request", "--channel", "c",
                  "--employee", "alice", "--type", "bus",
                  "--origin=-33.86,151.20", "--dest=-33.88,151.21",
                  "--max-cost", "25", "--trip-id", "t1", capsys=capsys)
        assert out.startswith("approved hold=h-t1")
        out = run(data_dir, "trip", "request", "--channel", "c",
                  "--employee", "alice", "--type", "taxi",
                  "--origin=-33.86,151.20", "--dest=-33.88,151.21",
                  "--max-cost", "10", "--trip-id", "t2", capsys=capsys)
        assert out.startswith("denied condition-failed:transport-types")
        out = run(data_dir, "trip", "finish", "--channel", "c",
                  "--trip-id", "t1", "--actual", "22", capsys=capsys)
        assert "finished trip=t1" in out
        out = run(data_dir, "balance", "--channel", "c", "--company", "companyX",
                  capsys=capsys)
        assert out.strip() == "pool=978 holds=0 spent=22"

    def test_state_survives_process_boundaries(self, data_dir, capsys):
        """Every `run` reloads from disk; the flow above already proves
        replay-based persistence, this checks the clock advances too."""
        bootstrap(data_dir)
        meta1 = json.loads(open(f"{data_dir}/meta.json").read())
        run(data_dir, "trip", "request", "--channel", "c", "--employee", "alice",
            "--type", "bus", "--origin=-33.86,151.20", "--dest=-33.88,151.21",
            "--max-cost", "5", "--trip-id", "tt", capsys=capsys)
        meta2 = json.loads(open(f"{data_dir}/meta.json").read())
        assert meta2["clock_ms"] > meta1["clock_ms"]


class TestLedgerCommands:
    def test_verify_ok_and_tamper(self, data_dir, tmp_path, capsys):
        bootstrap(data_dir)
        capsys.readouterr()  # drop bootstrap output
        out = run(data_dir, "ledger", "verify", "--channel", "c", capsys=capsys)
        assert out.startswith("OK ")
        export = tmp_path / "log.jsonl"
        run(data_dir, "ledger", "export", "--channel", "c", "--out", str(export),
            capsys=capsys)
        out = run(data_dir, "ledger", "verify", "--file", str(export), capsys=capsys)
        assert out.startswith("OK ")
        data = bytearray(export.read_bytes())
        data[len(data) // 2] ^= 1
        export.write_bytes(bytes(data))
        code = main(["--data-dir", data_dir, "ledger", "verify",
                     "--file", str(export)])
        assert code == 4
        assert capsys.readouterr().out.startswith("FAIL broken-hash-chain")


class TestScenarioCommand:
    def test_fixture_runs_and_writes_summary(self, data_dir, tmp_path, capsys):
        import importlib.resources as res
        fixture = res.files("transportchain") / "fixtures" / "single_trip.json"
        out_dir = tmp_path / "out"
        run(data_dir, "scenario", "run", str(fixture), "--out-dir", str(out_dir),
            "--events", capsys=capsys)
        summary = json.loads((out_dir / "summary.json").read_text())
        assert summary["trips"][0]["status"] == "finished"
        assert (out_dir / "blocks.orgA-chan.jsonl").exists()
        assert (out_dir / "events.orgA-chan.jsonl").exists()

    def test_malformed_scenario_exit_3(self, data_dir, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"name": "x"}')
        run(data_dir, "scenario", "run", str(bad), expect=3)
        err = capsys.readouterr().err
        assert "scenario-validation-error" in err

    def test_unparseable_json_reports_line(self, data_dir, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text('{"name": \n!')
        run(data_dir, "scenario", "run", str(bad), expect=3)
        assert "line 2" in capsys.readouterr().err


class TestBenchCommand:
    def test_small_bench_writes_outputs(self, data_dir, tmp_path, capsys):
        out_dir = tmp_path / "bench"
        run(data_dir, "bench", "run", "--rates", "100", "--tx", "200",
            "--reps", "1", "--employees", "5", "--out-dir", str(out_dir),
            "--no-figures", "--quiet", capsys=capsys)
        assert (out_dir / "metrics.csv").exists()
        assert (out_dir / "plot_data.json").exists()

    def test_bad_rates_exit_3(self, data_dir, capsys):
        run(data_dir, "bench", "run", "--rates", "100,100", expect=3)
