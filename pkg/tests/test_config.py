from pathlib import Path

import pytest

from citykpi import config
from citykpi.config import ConfigError

ROOT = Path(__file__).resolve().parents[1]
DEMO = ROOT / "demos" / "city.yaml"


def test_empty_document_gets_defaults():
    cfg = config.parse("")
    assert cfg["seed"] == 0
    assert cfg["radio"]["carrier_frequency"] == 28e9
    assert cfg["channel"]["model"] == "CI"
    assert cfg["validate"]["tolerance_ks"] == 0.05


def test_unknown_key_names_path_and_line():
    text = "seed: 1\nradio:\n  bandwidth: 1.0e8\n  bandwith: 2.0e8\n"
    with pytest.raises(ConfigError) as err:
        config.parse(text)
    assert err.value.path == "radio.bandwith" and err.value.line == 4
    assert "line 4" in str(err.value)


def test_type_and_choice_errors():
    with pytest.raises(ConfigError, match="seed"):
        config.parse("seed: many\n")
    with pytest.raises(ConfigError, match="channel.model"):
        config.parse("channel:\n  model: XY\n")
    with pytest.raises(ConfigError) as err:
        config.parse("seed: [1\n")
    assert err.value.line is not None


def test_env_overrides_win_over_file():
    env = {"CITYKPI_SWEEP__REPLICATIONS": "7", "CITYKPI_SEED": "99", "HOME": "/x"}
    ov = config.env_overrides(env)
    assert ov == {("seed",): 99, ("sweep", "replications"): 7}
    cfg = config.parse("seed: 1\nsweep:\n  replications: 2\n", ov)
    assert cfg["seed"] == 99 and cfg["sweep"]["replications"] == 7
    with pytest.raises(ConfigError):
        config.parse("", config.env_overrides({"CITYKPI_SWEEP__REPLICATES": "3"}))


def test_load_reports_raw_bytes_and_overrides(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_bytes(b"seed: 5\n")
    cfg, raw, ov = config.load(p, {"CITYKPI_CITY__HORIZON": "30"})
    assert raw == b"seed: 5\n" and cfg["city"]["horizon"] == 30
    assert ov == {("city", "horizon"): 30}
    with pytest.raises(ConfigError):
        config.load(tmp_path / "missing.yaml", {})


def test_demo_config_builds_objects():
    cfg, _, _ = config.load(DEMO, {})
    grid = config.sweep_grid(cfg)
    assert grid.replications == cfg["sweep"]["replications"]
    scn = config.scenario(cfg)
    ids = [e.entity_id for e in scn.entities]
    assert len(ids) == len(set(ids))
    assert {s.cell_id for s in scn.sites} == {"A", "B", "C"}
    assert set(scn.profiles) == {"car", "bus"}


def test_domain_errors_surface_as_config_errors():
    bad = "profiles:\n  s: {rate: -1.0, size: 100}\n"
    with pytest.raises(ConfigError):
        config.traffic_profiles(config.parse(bad))
    with pytest.raises(ConfigError, match="city.sites"):
        config.scenario(config.parse(""))


def test_overlay_forms(tmp_path):
    a, b = tmp_path / "a.yaml", tmp_path / "b.yaml"
    a.write_text("- {kind: CellOutage, target: A, span: [0, 10]}\n")
    b.write_text("injections:\n  - {kind: CellOutage, target: A, span: [0, 10]}\n")
    assert config.load_overlay(a)[0] == config.load_overlay(b)[0]
    (tmp_path / "c.yaml").write_text("injection: []\n")
    with pytest.raises(ConfigError):
        config.load_overlay(tmp_path / "c.yaml")
    (tmp_path / "d.yaml").write_text("")
    assert config.load_overlay(tmp_path / "d.yaml")[0] == []


def test_reference_page_is_current():
    page = config.reference()
    assert "| `sweep.replications` |" in page
    assert (ROOT / "docs" / "configuration.md").read_text() == page
