import json
import subprocess
import sys

import pytest

from raid import formats
from raid.cli import main
from raid.encoder import encode_model

from conftest import stump_model

SEED7 = ["--set", "gen.seed = 7", "--set", "gen.duration_us = 1000000"]


def run_all(d, *extra):
    assert main(["all", "--out-dir", str(d), *SEED7, *extra]) == 0


def test_full_pipeline_twice_identical(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    run_all(a)
    run_all(b)
    for name in ["trace.csv", "model.txt", "entries.txt", "eval.txt", "sweep.txt",
                 "run/digests.log", "run/flows.txt", "run/stats.txt", "run/controller.log"]:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    manifest = json.loads((a / "run" / "manifest.json").read_text())
    assert manifest["subcommand"] == "run" and manifest["seed"] == 7
    assert set(manifest["inputs"]) == {"trace", "entries"}
    assert len(manifest["inputs"]["trace"]["sha256"]) == 64
    report = formats.load_kv((a / "eval.txt").read_text(), "#raid-eval v1")
    assert report["published.accuracy"] == "0.947"
    assert float(report["accuracy"]) >= 0.9


def test_eval_perfect_predictions(tmp_path):
    run_all(tmp_path)
    flows = formats.load_flows((tmp_path / "run" / "flows.txt").read_text())
    truths = {}
    for p in formats.load_trace((tmp_path / "trace.csv").read_text()):
        truths.setdefault(p.tuple, p.truth_label)
    for f in flows:
        if f.final in ("Benign", "Malicious"):
            f.final = truths[f.tuple].value
    perfect = tmp_path / "perfect.txt"
    formats.write_atomic(perfect, formats.dump_flows(flows))
    out = tmp_path / "eval_perfect.txt"
    assert main(["eval", "--flows", str(perfect), "--trace", str(tmp_path / "trace.csv"), "--out", str(out)]) == 0
    assert formats.load_kv(out.read_text(), "#raid-eval v1")["accuracy"] == "1.000000"


def test_encode_refuses_unverified(tmp_path, monkeypatch):
    from raid import cli
    from raid.encoder import VerificationReport

    model = tmp_path / "m.txt"
    model.write_text(formats.dump_model(stump_model()))
    monkeypatch.setattr(cli, "verify_encoding", lambda *a, **k: VerificationReport(False, (0,) * 6, "injected"))
    out = tmp_path / "e.txt"
    assert main(["encode", "--model", str(model), "--out", str(out)]) == 1
    assert not out.exists()


def test_exit_codes(tmp_path):
    assert main(["gen", "--out", str(tmp_path / "t.csv"), "--set", "gen.bogus = 1"]) == 2
    assert main(["gen", "--out", str(tmp_path / "t.csv"), "--config", str(tmp_path / "none.cfg")]) == 2
    bad = tmp_path / "bad.csv"
    bad.write_text("#raid-trace v1\nnot,a,record\n")
    assert main(["train", "--trace", str(bad), "--out", str(tmp_path / "m.txt")]) == 1
    assert not (tmp_path / "m.txt").exists()
    entries = tmp_path / "e.txt"
    entries.write_text(formats.dump_entries(encode_model(stump_model())).replace("201 ", "300 "))
    good = tmp_path / "g.csv"
    good.write_text("#raid-trace v1\n")
    assert main(["run", "--trace", str(good), "--entries", str(entries), "--out-dir", str(tmp_path / "r")]) == 1
    assert not (tmp_path / "r").exists()


def test_config_file_and_module_entry(tmp_path):
    cfg = tmp_path / "c.cfg"
    cfg.write_text("preset = low\ngen.duration_us = 200000\n")
    out = tmp_path / "t.csv"
    proc = subprocess.run(
        [sys.executable, "-m", "raid", "gen", "--config", str(cfg), "--out", str(out)], capture_output=True, text=True
    )
    assert proc.returncode == 0, proc.stderr
    assert out.read_text().startswith("#raid-trace v1\n")
    assert json.loads((tmp_path / "t.csv.manifest.json").read_text())["config_path"] == str(cfg)


@pytest.mark.parametrize("preset", ["moderate", "high"])
def test_pipeline_composes_for_presets(tmp_path, preset):
    assert main(["all", "--out-dir", str(tmp_path), "--load", preset,
                 "--set", f"preset = {preset}", "--set", "gen.duration_us = 1000000"]) == 0
    assert (tmp_path / "eval.txt").exists()


def test_bench_command(tmp_path):
    run_all(tmp_path)
    out = tmp_path / "bench.txt"
    assert main(["bench", "--trace", str(tmp_path / "trace.csv"), "--entries", str(tmp_path / "entries.txt"),
                 "--repetitions", "1", "--out", str(out)]) == 0
    kv = formats.load_kv(out.read_text(), "#raid-bench v1")
    assert float(kv["sustained_pps"]) > 0 and "p999_ns" in kv
