import json
import subprocess
import sys

import pytest

from hshmm.checkpoint import hyper_block_digest
from hshmm.cli import main
from hshmm.config import RunConfig

SMALL = ["--n-utterances", "6", "--n-units", "3", "--embedding-dim", "3", "--seed", "1"]
FAST = ["--n-samples", "1", "--gradient-steps", "5", "--learning-rate", "0.02", "--threads", "1"]


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    data, s1, s2, dec = (str(root / d) for d in ("data", "s1", "s2", "dec"))
    assert main(["synth", "--out", data] + SMALL) == 0
    assert main(["train-hyper", f"src0={data}/src0.tsv", f"src1={data}/src1.tsv", "--out", s1,
                 "--config", f"{data}/config.json", "--supervised-iterations", "2"] + FAST) == 0
    assert main(["discover", f"{data}/target.tsv", "--checkpoint", f"{s1}/model.hshm",
                 "--out", s2, "--unsupervised-iterations", "2", "--n-units", "4"]) == 0
    assert main(["decode", f"{data}/target.tsv", "--checkpoint", f"{s2}/model.hshm",
                 "--out", dec]) == 0
    return root


def test_pipeline_eval(pipeline, capsys):
    capsys.readouterr()
    assert main(["eval", str(pipeline / "data/target.ali"), str(pipeline / "dec/units.ali")]) == 0
    res = json.loads(capsys.readouterr().out)
    assert 0 <= res["nmi"] <= 100 and 0 <= res["fscore"] <= 1


def test_eval_reference_against_itself(pipeline, capsys):
    ali = str(pipeline / "data/target.ali")
    capsys.readouterr()
    assert main(["eval", ali, ali]) == 0
    res = json.loads(capsys.readouterr().out)
    assert res["nmi"] == pytest.approx(100.0) and res["fscore"] == 1.0


def test_run_directories_echo_config(pipeline):
    s1 = RunConfig.load(pipeline / "s1/config.json")
    assert s1.feature_dim == 2 and s1.embedding_dim == 3 and s1.gradient_steps == 5
    assert s1.supervised_iterations == 2
    s2 = RunConfig.load(pipeline / "s2/config.json")
    # discover starts from the checkpoint's configuration
    assert s2.gradient_steps == 5 and s2.n_units == 4
    lines = (pipeline / "s1/train.jsonl").read_text().splitlines()
    assert [json.loads(x)["iteration"] for x in lines] == [0, 1, 2]


def test_discover_leaves_hyper_block_alone(pipeline):
    assert hyper_block_digest(pipeline / "s1/model.hshm") == \
        hyper_block_digest(pipeline / "s2/model.hshm")


def test_decoded_labels(pipeline):
    text = (pipeline / "dec/units.ali").read_text().split()
    labels = {t for t in text if t.startswith("au")}
    assert labels and labels <= {"au0", "au1", "au2", "au3"}


def test_export_embeddings(pipeline, tmp_path):
    out = tmp_path / "emb.tsv"
    assert main(["export-embeddings", "--checkpoint", str(pipeline / "s2/model.hshm"),
                 "--out", str(out)]) == 0
    rows = [r.split("\t") for r in out.read_text().splitlines()]
    assert [r[0] for r in rows] == ["src0", "src1", "target"]
    assert all(len(r) == 5 for r in rows)      # name, 2 means, 2 log-variances


def test_usage_errors_exit_1(capsys):
    assert main([]) == 1
    assert main(["train-hyper"]) == 1
    assert main(["eval", "a"]) == 1
    assert main(["synth", "--out", "x", "--n-units", "many"]) == 1


def test_data_errors_exit_2(tmp_path, capsys):
    assert main(["eval", str(tmp_path / "missing.ali"), str(tmp_path / "missing.ali")]) == 2
    (tmp_path / "bad.hshm").write_bytes(b"garbage")
    assert main(["export-embeddings", "--checkpoint", str(tmp_path / "bad.hshm")]) == 2
    assert "bad magic" in capsys.readouterr().err
    assert main(["synth", "--out", str(tmp_path / "s"), "--n-units", "0"]) == 2


def test_bad_config_value_exits_2(pipeline, tmp_path):
    assert main(["train-hyper", str(pipeline / "data/src0.tsv"), "--out", str(tmp_path),
                 "--learning-rate", "-1"]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hshmm.cli", "synth", "--out", str(tmp_path),
                           "--n-utterances", "2"], capture_output=True)
    assert proc.returncode == 0
    assert (tmp_path / "target.ali").exists()
