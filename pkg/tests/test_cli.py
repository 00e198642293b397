from __future__ import annotations

import json
import os
import subprocess
import sys

import pytest

from latte.cli import main
from latte.train import checkpoint_dir, train

from conftest import tiny_run


def run_cli(capsys, *args):
    code = main(list(args))
    out = capsys.readouterr()
    return code, out.out, out.err


def test_analyze_xl_preset(capsys):
    code, out, _ = run_cli(capsys, "analyze", "--paper-config", "xl", "--variants", "1,2", "--format", "json")
    assert code == 0
    rows = json.loads(out)["reports"]
    assert abs(rows[0]["params"] / 673.68e6 - 1) < 0.02
    strip = [{k: v for k, v in r.items() if k != "variant"} for r in rows]
    assert strip[0] == strip[1]


def test_analyze_text_and_json_agree(capsys, tmp_path):
    code, text, _ = run_cli(capsys, "analyze", "--paper-config", "s", "--json", str(tmp_path / "r.json"))
    assert code == 0
    rows = json.loads((tmp_path / "r.json").read_text())["reports"]
    lines = text.strip().splitlines()[1:]
    assert len(lines) == len(rows) == 4
    for line, r in zip(lines, rows):
        variant, params, params_m, gflops, pr, fr = line.split()
        assert int(variant) == r["variant"] and int(params) == r["params"]
        assert float(params_m) == round(r["params"] / 1e6, 2)
        assert float(gflops) == round(r["flops_forward"] / 1e9, 2)
        assert float(pr) == round(r["param_ratio"], 4) and float(fr) == round(r["flop_ratio"], 4)


def test_analyze_from_config_file(capsys, tmp_path):
    run = tiny_run(tmp_path)
    run.save(tmp_path / "run.json")
    code, out, _ = run_cli(capsys, "analyze", "--config", str(tmp_path / "run.json"), "--variants", "1,3", "--format", "json")
    assert code == 0 and [r["variant"] for r in json.loads(out)["reports"]] == [1, 3]


@pytest.mark.parametrize("variants", ["1,5", "0", "a,b", ""])
def test_invalid_variant_exits_2(capsys, variants):
    code, _, err = run_cli(capsys, "analyze", "--paper-config", "xl", "--variants", variants)
    assert code == 2 and "error" in err


def test_train_exit_codes(capsys, tmp_path):
    (tmp_path / "bad.json").write_text('{"steps": -1}')
    assert run_cli(capsys, "train", "--config", str(tmp_path / "bad.json"))[0] == 2
    assert run_cli(capsys, "train", "--config", str(tmp_path / "absent.json"))[0] == 4
    good = tiny_run(tmp_path / "run", steps=2)
    good.save(tmp_path / "good.json")
    code, out, _ = run_cli(capsys, "train", "--config", str(tmp_path / "good.json"))
    assert code == 0 and "step 2" in out


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_train_divergence_exits_3(capsys, tmp_path):
    run = tiny_run(tmp_path / "run", steps=3)
    d = run.to_dict()
    d["optim"]["lr"] = 1e30
    (tmp_path / "nan.json").write_text(json.dumps(d))
    code, _, err = run_cli(capsys, "train", "--config", str(tmp_path / "nan.json"))
    assert code == 3 and "step" in err


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli_run")
    run = tiny_run(out, steps=3)
    train(run)
    return checkpoint_dir(run, 3)


def test_sample_same_seed_byte_identical(capsys, trained, tmp_path):
    for name in ("a", "b"):
        code, out, _ = run_cli(capsys, "sample", "--ckpt", str(trained), "--count", "3", "--seed", "4", "--out", str(tmp_path / name))
        assert code == 0
    files = sorted(p.relative_to(tmp_path / "a") for p in (tmp_path / "a").rglob("*.pgm"))
    assert len(files) == 3 * 2
    for f in files:
        assert (tmp_path / "a" / f).read_bytes() == (tmp_path / "b" / f).read_bytes()
    report = json.loads((tmp_path / "a" / "report.json").read_text())
    assert len(report["samples"]) == 3 and report["weights"] == "ema"
    assert all("temporal_coherence" in s for s in report["samples"])


def test_sample_count_zero(capsys, trained, tmp_path):
    code, out, _ = run_cli(capsys, "sample", "--ckpt", str(trained), "--count", "0", "--out", str(tmp_path / "z"))
    assert code == 0
    report = json.loads((tmp_path / "z" / "report.json").read_text())
    assert report["samples"] == [] and report["count"] == 0


def test_sample_missing_checkpoint(capsys, tmp_path):
    assert run_cli(capsys, "sample", "--ckpt", str(tmp_path / "nope"), "--count", "1")[0] == 4


def test_verify_filter_runs_only_that_suite(capsys):
    code, out, _ = run_cli(capsys, "verify", "--filter", "invariants")
    lines = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert code == 0 and lines and all(" invariants/" in l for l in lines)
    assert run_cli(capsys, "verify", "--filter", "nosuch")[0] == 2


def test_verify_grad_suite_passes(capsys):
    code, out, _ = run_cli(capsys, "verify", "--filter", "grad")
    lines = [l for l in out.splitlines() if l.startswith(("PASS", "FAIL"))]
    assert code == 0 and all(" grad/" in l for l in lines)


def test_verify_mutation_names_softmax():
    env = {**os.environ, "LATTE_MUTATION": "softmax"}
    proc = subprocess.run(
        [sys.executable, "-m", "latte.cli", "verify", "--filter", "grad"], env=env, capture_output=True, text=True
    )
    assert proc.returncode == 1
    failing = proc.stderr.strip().splitlines()[-1]
    assert "grad/op:softmax" in failing
