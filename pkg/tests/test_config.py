import json

import pytest

from sps_ems.config.loader import (
    CONFIG_ENV,
    AppConfig,
    build_run_spec,
    config_document,
    load_config,
    parse_config,
    resolved_parameter_table,
)
from sps_ems.errors import ConfigError


def _write(tmp_path, doc, name="cfg.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc), encoding="utf-8")
    return str(path)


class TestDefaults:
    def test_packaged_default_matches_model_defaults(self, monkeypatch):
        monkeypatch.delenv(CONFIG_ENV, raising=False)
        cfg = load_config()
        ref = AppConfig()
        assert cfg.system == ref.system
        assert cfg.mpc == ref.mpc
        assert cfg.degradation == ref.degradation
        assert cfg.load_profile == ref.load_profile
        assert cfg.run.t_final == 120.0

    def test_document_round_trip(self, monkeypatch):
        monkeypatch.delenv(CONFIG_ENV, raising=False)
        cfg = load_config()
        assert parse_config(config_document(cfg)) == cfg

    def test_derived_quantities_in_table(self, monkeypatch):
        monkeypatch.delenv(CONFIG_ENV, raising=False)
        rows = {name: value for name, value, _ in resolved_parameter_table(load_config())}
        assert rows["system.pcm.capacity_as"] == 72000.0
        assert rows["mpc.power_base"] == 28e6
        assert rows["mpc.q0_ref"] == 0.75


class TestOverrides:
    def test_partial_document_keeps_other_defaults(self, tmp_path):
        cfg = load_config(_write(tmp_path, {"system": {"pcm": {"capacity_ahr": 40.0}}, "run": {"mode": "dispatch"}}))
        assert cfg.system.pcm.capacity_as == 144000.0
        assert cfg.system.pgm.p_max == 28e6
        assert build_run_spec(cfg).mode == "dispatch"

    def test_env_var_is_used_without_flag(self, tmp_path, monkeypatch):
        monkeypatch.setenv(CONFIG_ENV, _write(tmp_path, {"mpc": {"horizon": 7}}))
        assert load_config().mpc.horizon == 7

    def test_flag_beats_env_var(self, tmp_path, monkeypatch):
        monkeypatch.setenv(CONFIG_ENV, _write(tmp_path, {"mpc": {"horizon": 7}}, "env.json"))
        assert load_config(_write(tmp_path, {"mpc": {"horizon": 3}}, "flag.json")).mpc.horizon == 3

    def test_scenario_override(self):
        spec = build_run_spec(AppConfig(), scenario="scenario-3", mode="dispatch", seed=4)
        assert (spec.scenario, spec.mode, spec.seed) == ("scenario-3", "dispatch", 4)
        assert spec.resolved_mpc().gamma_q == 1000.0


class TestDiagnostics:
    def test_unknown_key_suggests_field(self, tmp_path):
        with pytest.raises(ConfigError) as ei:
            load_config(_write(tmp_path, {"system": {"pgm": {"p_maxx": 1.0}}}))
        diag = ei.value.diagnostics
        assert any(d.startswith("system.pgm.p_maxx") and "did you mean 'p_max'" in d for d in diag)

    def test_inconsistent_soc_band(self, tmp_path):
        with pytest.raises(ConfigError) as ei:
            load_config(_write(tmp_path, {"system": {"pcm": {"soc_min": 0.9}}}))
        assert any(d.startswith("system.pcm") for d in ei.value.diagnostics)

    def test_every_bad_field_reported(self, tmp_path):
        with pytest.raises(ConfigError) as ei:
            load_config(_write(tmp_path, {"mpc": {"horizon": 0, "ts": -1.0}}))
        paths = {d.split(":")[0] for d in ei.value.diagnostics}
        assert {"mpc.horizon", "mpc.ts"} <= paths

    def test_timing_checked_against_run_section(self, tmp_path):
        with pytest.raises(ConfigError) as ei:
            load_config(_write(tmp_path, {"mpc": {"ts": 0.5}}))
        assert all(d.startswith("run") for d in ei.value.diagnostics)

    def test_unknown_scenario(self):
        with pytest.raises(ConfigError):
            build_run_spec(AppConfig(), scenario="scenario-7")

    def test_not_json(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text("{ not json", encoding="utf-8")
        with pytest.raises(ConfigError):
            load_config(str(path))

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(str(tmp_path / "nope.json"))
