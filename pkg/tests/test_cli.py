"""Command-line contract: artifacts and exit codes."""

import csv
import json
import subprocess
import sys

import numpy as np
import pytest

from tensordict.cli import main, parse_plant

TOY = "\n".join([
    "the cat sat on the mat", "a cat sat on a mat", "the dog sat on the rug",
    "stocks fell sharply today", "markets fell sharply again", "stocks rose sharply today",
]) + "\n"


@pytest.fixture
def toy_corpus(tmp_path):
    p = tmp_path / "toy.txt"
    p.write_text(TOY, encoding="utf-8")
    return p


class TestDecompose:
    def test_simple_pinned_seed(self, tmp_path, capsys):
        out = tmp_path / "dec"
        assert main(["decompose", "--mode", "simple", "--d", "10", "--seed", "7",
                     "--out", str(out)]) == 0
        with open(out / "trace.csv") as fh:
            rows = list(csv.DictReader(fh))
        assert float(rows[-1]["recon_error"]) <= 0.05
        rep = json.loads((out / "report.json").read_text())
        assert rep["iterations"] <= 10000 and rep["converged"]
        assert np.loadtxt(out / "components.csv", delimiter=",").shape == (10, 10)

    def test_reproducible(self, tmp_path):
        for name in ("a", "b"):
            main(["decompose", "--mode", "simple", "--d", "4", "--seed", "1",
                  "--out", str(tmp_path / name)])
        assert (tmp_path / "a" / "components.csv").read_bytes() == \
            (tmp_path / "b" / "components.csv").read_bytes()

    def test_nonconvergence_exit_2(self, tmp_path):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sgd": {"iters": 5, "stop_at": None}, "tolerance": 1e-6}))
        assert main(["decompose", "--mode", "ica", "--d", "4", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 2

    def test_missing_config(self, tmp_path):
        assert main(["decompose", "--mode", "simple", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path / "o")]) == 1

    def test_unknown_key_rejected(self, tmp_path, capsys):
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"sgd": {"eta": 0.01}, "learning_rate": 1}))
        assert main(["decompose", "--mode", "simple", "--config", str(cfg),
                     "--out", str(tmp_path / "o")]) == 1
        assert "learning_rate" in capsys.readouterr().err

    def test_bad_arguments_exit_1(self):
        with pytest.raises(SystemExit) as info:
            main(["decompose", "--mode", "power"])
        assert info.value.code == 1


class TestLearnFilters:
    def test_planted_with_baseline(self, tmp_path):
        out = tmp_path / "lf"
        code = main(["learn-filters", "--n", "8", "--L", "2", "--seed", "1",
                     "--plant", "n=8,L=2,act=poisson:0.5,N=100000", "--baseline", "altmin",
                     "--out", str(out)])
        assert code in (0, 2)
        rep = json.loads((out / "report.json").read_text())
        assert rep["ct"]["recovery_error"] < rep["altmin"]["recovery_error"]
        for name in ("filters_ct.csv", "filters_altmin.csv", "trace_ct.csv", "trace_altmin.csv"):
            assert (out / name).exists()
        with open(out / "trace_ct.csv") as fh:
            assert "recovery_error" in next(csv.reader(fh))

    def test_from_input_file(self, tmp_path):
        from tensordict.convals import FilterBank
        from tensordict.cumulant import ActivationSpec, synth_conv_ica

        rng = np.random.default_rng(0)
        X, _ = synth_conv_ica(FilterBank.random(2, 6, rng), ActivationSpec(), 2000, rng)
        X.save(tmp_path / "data.dtns")
        cfg = tmp_path / "c.json"
        cfg.write_text(json.dumps({"als": {"max_iters": 10}}))
        code = main(["learn-filters", "--L", "2", "--input", str(tmp_path / "data.dtns"),
                     "--config", str(cfg), "--out", str(tmp_path / "o")])
        assert code in (0, 2)
        assert np.loadtxt(tmp_path / "o" / "filters_ct.csv", delimiter=",").shape == (2, 6)

    def test_L_ge_n(self, tmp_path, capsys):
        assert main(["learn-filters", "--n", "4", "--L", "4", "--plant", "n=4,L=4",
                     "--out", str(tmp_path / "o")]) == 1
        assert "requires nL<n² or L<n" in capsys.readouterr().err

    def test_missing_out(self):
        assert main(["learn-filters", "--plant", "n=8,L=2,N=1000"]) == 1

    def test_parse_plant(self):
        assert parse_plant("n=8,L=2,act=poisson:0.5,N=1e5") == \
            {"n": 8, "L": 2, "act": "poisson:0.5", "N": 100000}


class TestEmbed:
    def test_train_apply(self, tmp_path, toy_corpus):
        model = tmp_path / "model"
        assert main(["embed", "train", "--corpus", str(toy_corpus), "--k", "4", "--n", "5",
                     "--L", "3", "--out", str(model), "--seed", "0"]) == 0
        e1, e2 = tmp_path / "e1.csv", tmp_path / "e2.csv"
        for e in (e1, e2):
            assert main(["embed", "apply", "--model", str(model), "--corpus", str(toy_corpus),
                         "--out", str(e)]) == 0
        rows = e1.read_text().splitlines()
        assert len(rows) == 6 and len(rows[0].split(",")) == 4 * 3 * 2
        assert e1.read_bytes() == e2.read_bytes()

    def test_pairs(self, tmp_path, toy_corpus):
        model = tmp_path / "model"
        main(["embed", "train", "--corpus", str(toy_corpus), "--k", "2", "--n", "4", "--L", "1",
              "--out", str(model)])
        pairs = tmp_path / "pairs.txt"
        pairs.write_text("the cat sat\tthe dog sat\na cat\ta cat\n", encoding="utf-8")
        out = tmp_path / "p.csv"
        assert main(["embed", "apply", "--model", str(model), "--corpus", str(pairs), "--pairs",
                     "--out", str(out)]) == 0
        rows = [list(map(float, r.split(","))) for r in out.read_text().splitlines()]
        assert len(rows[0]) == 2 * 2 * 1 * 2
        assert rows[1][4:] == [0.0] * 4

    def test_sts_discretize(self, capsys):
        assert main(["embed", "apply", "--sts-discretize", "2.3", "--range", "0:5"]) == 0
        assert capsys.readouterr().out.strip() == "0,0,0.7,0.3,0,0"

    def test_untrained_model(self, tmp_path, toy_corpus):
        assert main(["embed", "apply", "--model", str(tmp_path / "none"),
                     "--corpus", str(toy_corpus), "--out", str(tmp_path / "e.csv")]) == 1


class TestBenchmarkCommand:
    def test_only_filter_and_exit(self, tmp_path, capsys):
        code = main(["benchmark", "--only", "6,7", "--out", str(tmp_path / "b")])
        assert code == 0
        rep = json.loads((tmp_path / "b" / "report.json").read_text())
        assert [c["id"] for c in rep["criteria"]] == [6, 7]

    def test_bad_only(self, tmp_path):
        assert main(["benchmark", "--only", "nonsense", "--out", str(tmp_path / "b")]) == 1

    def test_failure_exit_3(self, tmp_path, monkeypatch):
        import tensordict.benchmark as bm

        failing = bm.CriterionResult(6, "forced failure", "conv", False, {})
        monkeypatch.setitem(bm.RUNNERS, 6, lambda: failing)
        assert main(["benchmark", "--only", "6", "--out", str(tmp_path / "b")]) == 3


class TestEntryPoint:
    def test_module_help(self):
        res = subprocess.run([sys.executable, "-m", "tensordict.cli", "--help"],
                             capture_output=True, text=True)
        assert res.returncode == 0 and "decompose" in res.stdout

    def test_threads_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("TENSORDICT_THREADS", "1")
        assert main(["embed", "apply", "--sts-discretize", "3", "--range", "0:5"]) == 0
        monkeypatch.setenv("TENSORDICT_THREADS", "0")
        assert main(["embed", "apply", "--sts-discretize", "3", "--range", "0:5"]) == 1
