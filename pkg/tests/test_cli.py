import hashlib
import json
import os
from pathlib import Path

import pytest

from citykpi import cli

ROOT = Path(__file__).resolve().parents[1]
CITY = ROOT / "demos" / "city.yaml"
SMALL = {"CITYKPI_SWEEP__REPLICATIONS": "4", "CITYKPI_SWEEP__DURATION": "1.0",
         "CITYKPI_VALIDATE__REPLICATIONS": "2", "CITYKPI_VALIDATE__DURATION": "1.0",
         "CITYKPI_CITY__HORIZON": "120.0"}


def manifest(out):
    return json.loads((Path(out) / cli.MANIFEST).read_text())


def with_out(argv, out):
    argv = list(argv)
    argv[argv.index("--out") + 1] = str(out)
    return argv


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    """Run every stage once; yields the root directory and {stage: argv}."""
    root = tmp_path_factory.mktemp("pipe")
    overlay = root / "outage.yaml"
    overlay.write_text("- {kind: CellOutage, target: B, span: [0.0, 120.0]}\n")
    stages = {
        "sweep": ["sweep", "--config", str(CITY), "--out", str(root / "sweep")],
        "fit": ["fit", "--config", str(CITY), "--sweep", str(root / "sweep"), "--out", str(root / "fit")],
        "train": ["train", "--table", str(root / "fit" / "table.csv"), "--out", str(root / "train")],
        "urban": ["urban", "--config", str(CITY), "--out", str(root / "urban")],
        "run": ["run", "--config", str(CITY), "--models", str(root / "train" / "models.json"),
                "--intervals", str(root / "urban" / "intervals.csv"), "--out", str(root / "run")],
        "whatif": ["whatif", "--config", str(CITY), "--models", str(root / "train" / "models.json"),
                   "--overlay", str(overlay), "--out", str(root / "whatif")],
        "validate": ["validate", "--config", str(CITY), "--models", str(root / "train" / "models.json"),
                     "--tolerance-ks", "1.0", "--tolerance-mean", "10.0", "--out", str(root / "validate")],
    }
    saved = dict(os.environ)
    os.environ.update(SMALL)
    try:
        for argv in stages.values():
            assert cli.main(argv) == cli.EXIT_OK, argv
        yield root, stages
    finally:
        os.environ.clear()
        os.environ.update(saved)


@pytest.mark.parametrize("stage", ["sweep", "fit", "train", "urban", "run", "whatif", "validate"])
def test_rerun_is_byte_identical(pipeline, stage, tmp_path, monkeypatch):
    root, stages = pipeline
    for k, v in SMALL.items():
        monkeypatch.setenv(k, v)
    first = manifest(root / stage)
    assert cli.main(with_out(first["argv"], tmp_path)) == cli.EXIT_OK
    second = manifest(tmp_path)
    assert first["outputs"] and second["outputs"] == first["outputs"]
    for rel, digest in first["outputs"].items():
        assert hashlib.sha256((tmp_path / rel).read_bytes()).hexdigest() == digest


def test_manifest_contents(pipeline):
    root, _ = pipeline
    m = manifest(root / "run")
    assert m["config_sha256"] == hashlib.sha256(CITY.read_bytes()).hexdigest()
    assert m["command"] == "run" and m["seed"] == 11 and m["version"]
    assert m["env_overrides"]["city__horizon"] == 120.0
    assert set(m["outputs"]) == {"packets.csv", "report.json", "cells.csv"}
    for path, digest in m["inputs"].items():
        assert hashlib.sha256(Path(path).read_bytes()).hexdigest() == digest
    assert not [p for p in (root / "run").iterdir() if p.name.startswith(".manifest-")]


def test_whatif_outputs(pipeline):
    root, _ = pipeline
    deltas = json.loads((root / "whatif" / "deltas.json").read_text())
    base = json.loads((root / "whatif" / "baseline" / "report.json").read_text())
    assert deltas["cells"]["B"]["drop_rate"] == pytest.approx(1.0 - base["network"]["B"]["drop_rate"])
    assert deltas["cells"]["A"]["drop_rate"] == 0.0


def test_seed_flag_changes_outputs(pipeline, tmp_path, monkeypatch):
    root, stages = pipeline
    for k, v in SMALL.items():
        monkeypatch.setenv(k, v)
    argv = with_out(stages["run"], tmp_path) + ["--seed", "12"]
    assert cli.main(argv) == cli.EXIT_OK
    assert manifest(tmp_path)["seed"] == 12
    assert manifest(tmp_path)["outputs"]["packets.csv"] != manifest(root / "run")["outputs"]["packets.csv"]


def test_exit_codes(pipeline, tmp_path, capsys):
    root, _ = pipeline
    bad = tmp_path / "bad.yaml"
    bad.write_text("seed: 1\nsweep:\n  replicates: 3\n")
    assert cli.main(["sweep", "--config", str(bad), "--out", str(tmp_path / "a")]) == cli.EXIT_CONFIG
    assert "line 3" in capsys.readouterr().err
    assert cli.main(["urban", "--out", str(tmp_path / "b")]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--table", str(tmp_path / "none.csv"), "--out", str(tmp_path / "c")]) == cli.EXIT_DATA
    garbage = tmp_path / "garbage.csv"
    garbage.write_text("a,b\n1,2\n")
    assert cli.main(["train", "--table", str(garbage), "--out", str(tmp_path / "d")]) == cli.EXIT_DATA
    strict = ["validate", "--config", str(CITY), "--models", str(root / "train" / "models.json"),
              "--tolerance-ks", "0.0", "--out", str(tmp_path / "e")]
    assert cli.main(strict) == cli.EXIT_VALIDATION
    assert (tmp_path / "e" / "validation.json").exists() and (tmp_path / "e" / cli.MANIFEST).exists()


def test_manifest_write_is_atomic(tmp_path, monkeypatch):
    m = cli.RunManifest("x", [], None, 0, "0")
    m.write(tmp_path)
    before = (tmp_path / cli.MANIFEST).read_bytes()

    def boom(*a, **k):
        raise RuntimeError("disk full")

    monkeypatch.setattr(cli.json, "dump", boom)
    with pytest.raises(RuntimeError):
        cli.RunManifest("y", [], None, 1, "0").write(tmp_path)
    assert (tmp_path / cli.MANIFEST).read_bytes() == before
    assert [p.name for p in tmp_path.iterdir()] == [cli.MANIFEST]
