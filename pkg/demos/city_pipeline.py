"""Three-cell avenue, end to end through the command line.

Runs sweep -> fit -> train -> urban -> run -> whatif -> validate on
demos/city.yaml and prints what each stage produced. Takes under half a
minute. Usage:

    python demos/city_pipeline.py [OUT_DIR]
"""
import json
import sys
import tempfile
from pathlib import Path

from citykpi import cli

HERE = Path(__file__).resolve().parent


def us(ms):
    return "n/a" if ms is None else f"{ms * 1e3:+.2f} us"  # null when nothing was delivered


def stage(*argv):
    code = cli.main([str(a) for a in argv])
    print(f"$ citykpi {' '.join(map(str, argv))}\n  -> exit {code}")
    return code


def main(out):
    out = Path(out)
    cfg = HERE / "city.yaml"
    models = out / "train" / "models.json"

    stage("sweep", "--config", cfg, "--out", out / "sweep")
    stage("fit", "--config", cfg, "--sweep", out / "sweep", "--out", out / "fit")
    stage("train", "--table", out / "fit" / "table.csv", "--out", out / "train")
    stage("urban", "--config", cfg, "--out", out / "urban")
    stage("run", "--config", cfg, "--models", models, "--intervals", out / "urban" / "intervals.csv",
          "--out", out / "run")

    report = json.loads((out / "run" / "report.json").read_text())
    print("\nper-cell network KPIs")
    for cell, m in sorted(report["network"].items()):
        print(f"  {cell}: {m['packets']:6d} packets  drop {m['drop_rate']:.3f}  "
              f"p95 delay {m['p95_delay_ms'] * 1e3:.1f} us")
    v = report["vertical"]
    print(f"bad-experience fraction: {v['bad_entity_days']}/{v['entity_days']} = {v['bad_experience_fraction']:.3f}")

    for name in ("outage", "flood"):
        stage("whatif", "--config", cfg, "--models", models, "--overlay", HERE / f"{name}.yaml",
              "--out", out / f"whatif-{name}")
        deltas = json.loads((out / f"whatif-{name}" / "deltas.json").read_text())
        for cell, d in sorted(deltas["cells"].items()):
            print(f"  {name} {cell}: d(drop) {d['drop_rate']:+.3f}  d(mean delay) {us(d['mean_delay_ms'])}")

    # the coarse 3 x 2 demo grid is not expected to meet the default KS tolerance
    code = stage("validate", "--config", cfg, "--models", models, "--out", out / "validate")
    for e in json.loads((out / "validate" / "validation.json").read_text())["entries"]:
        print(f"  {e['kpi']:16s} KS {e['ks_distance']:.3f}  mean error {e['mean_error']:+.3f}  "
              f"{'ok' if e['passed'] else 'outside tolerance'}")
    return 0 if code in (cli.EXIT_OK, cli.EXIT_VALIDATION) else code


if __name__ == "__main__":
    if len(sys.argv) > 1:
        sys.exit(main(sys.argv[1]))
    with tempfile.TemporaryDirectory() as tmp:
        sys.exit(main(tmp))
