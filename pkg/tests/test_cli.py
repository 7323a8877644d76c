import csv
import json
import shutil

import numpy as np
import pytest

from downscale_uq.cli import derive_seed, run

TINY = {
    "synth": {"n_lat": 8, "n_lon": 8, "n_samples": 60},
    "train": {"max_epochs": 2, "batch_size": 16, "widths": [4, 8]},
    "mechanisms": {"dnn": {"T": 100, "sampler": "ddim", "ddim_steps": 10, "time_dim": 128}},
    "members": 2,
    "eval_samples": 4,
    "replicates": 50,
}
KINDS = ("snn", "qnn", "vnn", "dnn")


def call(root, *argv):
    return run([*argv, "--config", str(root / "cfg.json"), "--out", str(root / "run")])


@pytest.fixture(scope="module")
def pipeline(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "cfg.json").write_text(json.dumps(TINY))
    assert call(root, "synth") == 0
    for k in KINDS:
        assert call(root, "train", "--model", k) == 0
    for w in range(1, 7):
        assert call(root, "calibrate", "--lead-week", str(w)) == 0
        for k in KINDS:
            assert call(root, "generate", "--model", k, "--lead-week", str(w)) == 0
            assert call(root, "verify", "--model", k, "--lead-week", str(w)) == 0
    assert call(root, "report") == 0
    return root


def read_values(path):
    with open(path) as fh:
        return np.array([float(r["value"]) for r in csv.DictReader(fh)])


def test_summary_layout(pipeline):
    res = json.loads((pipeline / "run" / "summary.json").read_text())["results"]
    assert sorted(res) == sorted(KINDS)
    for k in KINDS:
        assert sorted(res[k]) == [str(w) for w in range(1, 7)]
        for w in res[k].values():
            assert sorted(w) == ["crps", "mse", "ssr"]
            assert all(np.isfinite(e["model"]) for e in w.values())


def test_member_counts(pipeline):
    meta = {k: json.loads((pipeline / "run" / f"verify_{k}_w1.json").read_text())["members"] for k in KINDS}
    assert meta == {"snn": 40, "qnn": 20, "vnn": 40, "dnn": 40}


def test_verify_identity(pipeline):
    bench = pipeline / "run" / "benchmark_w2.gfld"
    assert call(pipeline, "verify", "--model", "snn", "--lead-week", "2", "--ensemble", str(bench)) == 0
    for name in ("mse", "crps", "ssr"):
        assert np.all(read_values(pipeline / "run" / f"delta_snn_w2_{name}.csv") == 0.0)
    # restore the model verify output for other tests
    assert call(pipeline, "verify", "--model", "snn", "--lead-week", "2") == 0


def test_bootstrap_byte_identical(pipeline):
    args = ("bootstrap", "--model", "qnn", "--lead-week", "1", "--replicates", "1000", "--seed", "7")
    out = pipeline / "run"
    assert call(pipeline, *args) == 0
    first = {p.name: p.read_bytes() for p in out.glob("bootstrap_qnn_w1*")}
    assert call(pipeline, *args) == 0
    second = {p.name: p.read_bytes() for p in out.glob("bootstrap_qnn_w1*")}
    assert len(first) == 4 and first == second
    summary = json.loads(first["bootstrap_qnn_w1.json"])
    assert all(0 <= summary[s]["p_value"] <= 1 for s in ("mse", "crps", "ssr"))


def test_eof_and_spectrum(pipeline):
    assert call(pipeline, "eof", "--model", "vnn") == 0
    assert call(pipeline, "spectrum", "--model", "vnn", "--anomaly-spectrum") == 0
    with open(pipeline / "run" / "eof_vnn_w1.csv") as fh:
        assert len(list(csv.DictReader(fh))) > 1
    with open(pipeline / "run" / "spectrum_vnn_w1.csv") as fh:
        assert len(list(csv.DictReader(fh))) == 5


def test_rerun_idempotent(pipeline):
    out = pipeline / "run"
    before = (out / "ens_dnn_w3.gfld").read_bytes(), (out / "verify_dnn_w3.json").read_bytes()
    assert call(pipeline, "generate", "--model", "dnn", "--lead-week", "3") == 0
    assert call(pipeline, "verify", "--model", "dnn", "--lead-week", "3") == 0
    assert before == ((out / "ens_dnn_w3.gfld").read_bytes(), (out / "verify_dnn_w3.json").read_bytes())


class TestExitCodes:
    def test_usage(self):
        with pytest.raises(SystemExit) as e:
            run(["train"])
        assert e.value.code == 2
        with pytest.raises(SystemExit) as e:
            run(["verify", "--model", "snn", "--lead-week", "9"])
        assert e.value.code == 2

    def test_missing_input(self, tmp_path, capsys):
        assert run(["train", "--model", "snn", "--out", str(tmp_path)]) == 3
        assert "missing input" in capsys.readouterr().err
        assert run(["synth", "--config", str(tmp_path / "nope.json")]) == 3

    def test_config_errors(self, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"sead": 1}))
        assert run(["synth", "--config", str(bad)]) == 4
        assert "unknown config keys" in capsys.readouterr().err
        bad.write_text("{not json")
        assert run(["synth", "--config", str(bad)]) == 4
        bad.write_text(json.dumps({"mechanisms": {"dnn": {"T": 150}}}))
        assert run(["train", "--model", "dnn", "--config", str(bad), "--out", str(tmp_path)]) == 4

    def test_mechanism_mismatch(self, pipeline, tmp_path):
        root = tmp_path
        shutil.copytree(pipeline / "run", root / "run")
        (root / "cfg.json").write_text(json.dumps(TINY))
        shutil.rmtree(root / "run" / "models" / "snn")
        shutil.copytree(root / "run" / "models" / "qnn", root / "run" / "models" / "snn")
        assert call(root, "generate", "--model", "snn") == 5

    def test_format_error(self, pipeline, tmp_path):
        root = tmp_path
        shutil.copytree(pipeline / "run", root / "run")
        (root / "cfg.json").write_text(json.dumps(TINY))
        (root / "run" / "x.gfld").write_bytes(b"NOTAFIELD")
        assert call(root, "train", "--model", "snn") == 6

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence(self, pipeline, tmp_path):
        root = tmp_path
        shutil.copytree(pipeline / "run", root / "run")
        cfg = dict(TINY, train=dict(TINY["train"], lr=1e200))
        (root / "cfg.json").write_text(json.dumps(cfg))
        assert call(root, "train", "--model", "snn") == 7


def test_named_substreams():
    assert derive_seed(0, "train") == derive_seed(0, "train")
    assert len({derive_seed(0, n) for n in ("train", "sample", "bootstrap", "synth")}) == 4
    assert derive_seed(0, "sample", 1) != derive_seed(0, "sample", 2)
