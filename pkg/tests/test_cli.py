import io
import json
import logging
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from cotondet import cli
from oracles import exhaustive_match, oracle_class_aps
from test_data import tree_digest, write_dataset
from test_graph import TOY

FIX = Path(__file__).parent / "fixtures"
EVAL = FIX / "eval"
GOLDEN = FIX / "golden"


def run(argv):
    out = io.StringIO()
    code = cli.main(argv, out=out)
    return code, out.getvalue()


def read_kv(text):
    return dict(ln.split("=", 1) for ln in text.splitlines() if "=" in ln)


def _fixture_tuples():
    gts, dets = [], []
    for p in sorted((EVAL / "gt").glob("*.txt")):
        for ln in p.read_text().splitlines():
            f = ln.split()
            gts.append((p.stem, int(f[0]), tuple(map(float, f[1:]))))
    for p in sorted((EVAL / "pred").glob("*.txt")):
        for ln in p.read_text().splitlines():
            f = ln.split()
            dets.append((p.stem, int(f[0]), float(f[1]), tuple(map(float, f[2:]))))
    return dets, gts


# -- eval ----------------------------------------------------------------------


def test_fixture_expectations_reproduce_from_oracle():
    exp = json.loads((EVAL / "expected.json").read_text())
    dets, gts = _fixture_tuples()
    assert len(gts) == exp["num_gt"] == 7 and len(dets) == exp["num_dets"]
    ts = [round(0.5 + 0.05 * k, 2) for k in range(10)]
    aps = oracle_class_aps(dets, gts, ts)
    for c, v in aps.items():
        assert v[0.5] == pytest.approx(exp["per_class"][str(c)]["AP50"], abs=1e-12)
        assert np.mean([v[t] for t in ts]) == pytest.approx(exp["per_class"][str(c)]["AP50-95"], abs=1e-12)
    assert sum(j >= 0 for j in exhaustive_match(dets, gts, 0.5)) == exp["matched_at_50"]


def test_eval_matches_oracle_values(tmp_path):
    exp = json.loads((EVAL / "expected.json").read_text())
    code, _ = run(["eval", "--pred", str(EVAL / "pred"), "--gt", str(EVAL / "gt"), "--out", str(tmp_path / "r.kv")])
    assert code == 0
    kv = read_kv((tmp_path / "r.kv").read_text())
    assert float(kv["mAP50"]) == pytest.approx(exp["mAP50"], abs=1e-6)
    assert float(kv["mAP50-95"]) == pytest.approx(exp["mAP50-95"], abs=1e-6)
    names = {"0": "Ripe_Boll", "1": "Open_Boll", "2": "Square"}
    for c, v in exp["per_class"].items():
        assert float(kv[f"class.{names[c]}.AP50"]) == pytest.approx(v["AP50"], abs=1e-6)
        assert float(kv[f"class.{names[c]}.AP50-95"]) == pytest.approx(v["AP50-95"], abs=1e-6)
        assert int(kv[f"class.{names[c]}.num_gt"]) == v["num_gt"]
    assert int(kv["TP"]) + int(kv["FN"]) == exp["num_gt"]


def test_eval_golden_output(tmp_path):
    run(["eval", "--pred", str(EVAL / "pred"), "--gt", str(EVAL / "gt"), "--out", str(tmp_path / "r.kv")])
    assert (tmp_path / "r.kv").read_text() == (GOLDEN / "eval_micro.kv").read_text()


def test_eval_warns_on_missing_predictions(caplog):
    with caplog.at_level(logging.WARNING, logger="cotondet"):
        code, out = run(["eval", "--pred", str(EVAL / "pred"), "--gt", str(EVAL / "gt")])
    assert code == 0
    assert "no predictions for c" in caplog.text
    assert "missing_predictions=1" in out
    assert out.splitlines()[0].split() == ["class", "P", "R", "AP50", "AP50-95"]


def test_eval_custom_thresholds_and_classes(tmp_path):
    (tmp_path / "names.txt").write_text("a\nb\nc\nd\ne\nf\n")
    code, _ = run(["eval", "--pred", str(EVAL / "pred"), "--gt", str(EVAL / "gt"), "--classes",
                   str(tmp_path / "names.txt"), "--iou-thresholds", "0.5", "--out", str(tmp_path / "r.kv")])
    assert code == 0
    kv = read_kv((tmp_path / "r.kv").read_text())
    assert kv["mAP50"] == kv["mAP50-95"]
    assert "class.a.AP50" in kv


def test_eval_unparsable_file_names_it(tmp_path, capsys):
    (tmp_path / "gt").mkdir()
    (tmp_path / "pred").mkdir()
    (tmp_path / "gt" / "x.txt").write_text("0 0.5 0.5 0.2 0.2\n")
    (tmp_path / "pred" / "x.txt").write_text("0 0.9 0.5 0.5 0.2\n")
    code, _ = run(["eval", "--pred", str(tmp_path / "pred"), "--gt", str(tmp_path / "gt")])
    assert code == 1
    err = capsys.readouterr().err
    assert "x.txt" in err and "line 1" in err


def test_eval_exit_codes(tmp_path, capsys):
    assert run(["eval", "--pred", str(tmp_path / "nope"), "--gt", str(EVAL / "gt")])[0] == 2
    assert run(["eval", "--pred", str(EVAL / "pred"), "--gt", str(EVAL / "gt"), "--iou-thresholds", "0.5,x"])[0] == 1
    assert run(["eval", "--pred", str(EVAL / "pred"), "--gt", str(EVAL / "gt"), "--iou-thresholds", "1.5"])[0] == 1
    (tmp_path / "few.txt").write_text("a\nb\n")
    assert run(["eval", "--pred", str(EVAL / "pred"), "--gt", str(EVAL / "gt"), "--classes", str(tmp_path / "few.txt")])[0] == 1


def test_unknown_flag_prints_usage(capsys):
    with pytest.raises(SystemExit) as e:
        cli.main(["eval", "--bogus"])
    assert e.value.code == 1
    assert "usage:" in capsys.readouterr().err
    with pytest.raises(SystemExit) as e:
        cli.main([])
    assert e.value.code == 1


def test_console_entry_point_exit_code(tmp_path):
    r = subprocess.run([sys.executable, "-m", "cotondet.cli", "losses", "--pairs", str(tmp_path / "none.txt")],
                       capture_output=True, text=True)
    assert r.returncode == 2
    assert "none.txt" in r.stderr


# -- flops ---------------------------------------------------------------------


@pytest.mark.parametrize("name", ["cotonet", "yolo11s-baseline"])
def test_flops_golden(tmp_path, name):
    code, out = run(["flops", "--config", name, "--out", str(tmp_path / "f.kv")])
    assert code == 0
    assert (tmp_path / "f.kv").read_text() == (GOLDEN / f"flops_{name}.kv").read_text()
    assert "note: gflops=" in out


def test_flops_preset_name_and_file_agree(tmp_path):
    from cotondet import graph
    _, by_name = run(["flops", "--config", "cotonet"])
    _, by_file = run(["flops", "--config", str(graph.preset_path("cotonet"))])
    assert by_name == by_file


def test_flops_input_size_scales(tmp_path):
    (tmp_path / "toy.cfg").write_text(TOY)
    kv64 = read_kv(run(["flops", "--config", str(tmp_path / "toy.cfg")])[1])
    kv128 = read_kv(run(["flops", "--config", str(tmp_path / "toy.cfg"), "--input-size", "128"])[1])
    assert kv64["parameters"] == kv128["parameters"] == "1392"
    assert int(kv128["flops"]) == 4 * int(kv64["flops"])


def test_flops_missing_config():
    assert run(["flops", "--config", "no-such-model"])[0] == 2


def test_flops_bad_config(tmp_path):
    (tmp_path / "bad.cfg").write_text("0 Conv c2=16\n")
    assert run(["flops", "--config", str(tmp_path / "bad.cfg")])[0] == 1


# -- forward-check -------------------------------------------------------------


def test_forward_check_is_deterministic(tmp_path):
    (tmp_path / "toy.cfg").write_text(TOY)
    argv = ["forward-check", "--config", str(tmp_path / "toy.cfg"), "--seed", "3"]
    a, b = run(argv), run(argv)
    assert a == b and a[0] == 0
    other = run(["forward-check", "--config", str(tmp_path / "toy.cfg"), "--seed", "4"])[1]
    assert read_kv(other)["digest"] != read_kv(a[1])["digest"]
    lines = a[1].splitlines()
    assert lines[1].split() == ["input", "Input", "1x3x64x64"]
    assert lines[-3].split() == ["2", "SCDown", "1x32x16x16"]


def test_forward_check_backend_flag(tmp_path):
    from cotondet.numerics import backend
    (tmp_path / "toy.cfg").write_text(TOY)
    argv = ["forward-check", "--config", str(tmp_path / "toy.cfg"), "--input-size", "32"]
    # Digests may differ across backends by summation order; shape tables must not.
    tables = {run(["--backend", b, *argv])[1].rsplit("digest", 1)[0] for b in backend.available()}
    assert len(tables) == 1


# -- losses --------------------------------------------------------------------


def test_losses_table_against_golden():
    code, out = run(["losses", "--pairs", str(FIX / "pairs.txt")])
    assert code == 0
    got = [ln.split() for ln in out.splitlines()[1:]]
    want = [ln.split() for ln in (GOLDEN / "losses.txt").read_text().splitlines()[1:]]
    assert len(got) == len(want) == 4
    for g, w in zip(got, want):
        assert g[:7] == w[:7]
        if w[7] == "singular":
            assert g[7] == "singular"
        else:
            assert float(g[7]) < 1e-6


def test_losses_coincident_pair_is_zero():
    row = run(["losses", "--pairs", str(FIX / "pairs.txt")])[1].splitlines()[2].split()
    assert row[1] == "1.000000"
    assert all(float(v) == 0.0 for v in row[2:7])


def test_losses_malformed_line(tmp_path, capsys):
    (tmp_path / "p.txt").write_text("0.5 0.5 0.2 0.2 0.5 0.5 0.2\n")
    assert run(["losses", "--pairs", str(tmp_path / "p.txt")])[0] == 1
    assert "line 1" in capsys.readouterr().err
    (tmp_path / "p.txt").write_text("0.5 0.5 -0.2 0.2 0.5 0.5 0.2 0.2\n")
    assert run(["losses", "--pairs", str(tmp_path / "p.txt")])[0] == 1


def test_losses_theta_out_of_range():
    assert run(["losses", "--pairs", str(FIX / "pairs.txt"), "--theta", "9"])[0] == 1


# -- augment -------------------------------------------------------------------


def test_augment_runs_twice_identically(tmp_path):
    manifest = write_dataset(tmp_path / "src", n=3)
    for name in ("o1", "o2"):
        code, out = run(["augment", "--manifest", str(manifest), "--out", str(tmp_path / name), "--seed", "5"])
        assert code == 0
        assert out.startswith("written=21 skipped=0")
    assert tree_digest(tmp_path / "o1") == tree_digest(tmp_path / "o2")


def test_augment_with_spec_file(tmp_path):
    manifest = write_dataset(tmp_path / "src", n=2)
    (tmp_path / "spec.json").write_text(json.dumps({"variants": [["flip_h"], ["random_crop"]], "seed": 1}))
    code, out = run(["augment", "--manifest", str(manifest), "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "o")])
    assert code == 0
    assert out.startswith("written=6 ")
    assert len((tmp_path / "o" / "manifest.txt").read_text().splitlines()) == 6


def test_augment_errors(tmp_path):
    assert run(["augment", "--manifest", str(tmp_path / "none.txt"), "--out", str(tmp_path / "o")])[0] == 2
    manifest = write_dataset(tmp_path / "src", n=1)
    (tmp_path / "spec.json").write_text(json.dumps({"variants": [["spin"]]}))
    assert run(["augment", "--manifest", str(manifest), "--spec", str(tmp_path / "spec.json"), "--out", str(tmp_path / "o")])[0] == 1
