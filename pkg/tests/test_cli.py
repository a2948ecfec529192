import json
import os

import pandas as pd
import pytest

from sps_ems.cli import build_parser, main
from sps_ems.config.loader import CONFIG_ENV, load_config, parse_config
from sps_ems.pipeline.orchestrator import LOG_COLUMNS


@pytest.fixture(autouse=True)
def _no_env_config(monkeypatch):
    monkeypatch.delenv(CONFIG_ENV, raising=False)
    monkeypatch.delenv("SPS_EMS_QP_DUMP_DIR", raising=False)


def _write(tmp_path, doc):
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


class TestParser:
    def test_subcommands(self):
        ap = build_parser()
        args = ap.parse_args(["compare", "--scenario", "scenario-1", "--scenario", "scenario-3", "--jobs", "2"])
        assert args.command == "compare"
        assert args.scenario == ["scenario-1", "scenario-3"]
        assert args.jobs == 2
        assert ap.parse_args(["run"]).out == "results"

    def test_unknown_subcommand_exits(self):
        with pytest.raises(SystemExit):
            build_parser().parse_args(["plot"])


class TestValidateConfig:
    def test_prints_resolved_table(self, capsys):
        assert main(["validate-config"]) == 0
        out = capsys.readouterr().out
        assert "system.pcm.capacity_as" in out
        assert "72000" in out
        assert "Config OK" in out

    def test_dump_round_trips(self, capsys):
        assert main(["validate-config", "--dump"]) == 0
        doc = json.loads(capsys.readouterr().out)
        assert parse_config(doc) == load_config()

    def test_bad_config_exits_2(self, tmp_path, capsys):
        code = main(["validate-config", "--config", _write(tmp_path, {"system": {"pgm": {"p_maxx": 1.0}}})])
        assert code == 2
        err = capsys.readouterr().err
        assert "CONFIG ERROR" in err
        assert "system.pgm.p_maxx" in err

    def test_env_var_config(self, tmp_path, monkeypatch, capsys):
        monkeypatch.setenv(CONFIG_ENV, _write(tmp_path, {"mpc": {"horizon": 9}}))
        assert main(["validate-config", "--dump"]) == 0
        assert json.loads(capsys.readouterr().out)["mpc"]["horizon"] == 9


class TestRun:
    def test_dispatch_run_writes_log(self, tmp_path, capsys):
        out = tmp_path / "out"
        code = main(["run", "--scenario", "scenario-2", "--mode", "dispatch", "--out", str(out), "--quiet"])
        assert code == 0
        df = pd.read_csv(out / "scenario-2.csv", keep_default_na=False)
        assert list(df.columns) == list(LOG_COLUMNS)
        assert len(df) == 121
        assert (out / "scenario-2-mpc.csv").exists()
        assert "SCENARIO-2" in capsys.readouterr().out

    def test_unknown_scenario_exits_2(self, tmp_path, capsys):
        code = main(["run", "--scenario", "scenario-5", "--mode", "dispatch", "--out", str(tmp_path)])
        assert code == 2
        assert "scenario" in capsys.readouterr().err

    def test_solver_failure_exits_1_with_partial_log(self, tmp_path, capsys):
        cfg = _write(tmp_path, {"mpc": {"tolerances": {"max_iter": 1, "polish": False, "eps_abs": 1e-12, "eps_rel": 1e-12}}})
        out = tmp_path / "out"
        code = main(["run", "--config", cfg, "--mode", "dispatch", "--out", str(out), "--quiet"])
        assert code == 1
        assert "ERROR" in capsys.readouterr().err
        assert (out / "scenario-1.csv").exists()


class TestCompareAndExport:
    def test_compare_then_export(self, tmp_path, capsys):
        out = tmp_path / "out"
        assert main(["compare", "--mode", "dispatch", "--out", str(out), "--quiet"]) == 0
        report = json.loads((out / "comparison.json").read_text(encoding="utf-8"))
        assert report["orderings"]["final_q_loss"][0] == "scenario-2"
        assert report["orderings"]["max_soc_deviation"][0] == "scenario-3"
        assert all(v["status"] == "pass" for v in report["verdicts"])
        assert (out / "comparison.md").exists()
        dat = sorted(p for p in os.listdir(out) if p.endswith(".dat"))
        assert len(dat) == 7
        stdout = capsys.readouterr().out
        assert "==== COMPARISON ====" in stdout

        before = (out / "fig9-soc.dat").read_bytes()
        os.remove(out / "fig9-soc.dat")
        assert main(["export-figures", "--out", str(out), "--quiet"]) == 0
        assert (out / "fig9-soc.dat").read_bytes() == before

    def test_export_without_logs_exits_1(self, tmp_path, capsys):
        assert main(["export-figures", "--out", str(tmp_path)]) == 1
        assert "not found" in capsys.readouterr().err

    def test_repeated_compare_is_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        for out in (a, b):
            assert main(["compare", "--mode", "dispatch", "--out", str(out), "--quiet"]) == 0
        names = sorted(os.listdir(a))
        assert names == sorted(os.listdir(b))
        for name in names:
            if name.endswith((".csv", ".json", ".dat")):
                assert (a / name).read_bytes() == (b / name).read_bytes(), name
