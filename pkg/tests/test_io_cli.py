import json

import numpy as np
import pytest

from weaklabel import LabelModel, SourceGraph, flat_task, io
from weaklabel.cli import main
from weaklabel.errors import InputError, InvalidCell
from weaklabel.synthetic import hierarchical_model, hierarchical_task, zoo


def _run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


def _err(stderr):
    lines = stderr.strip().splitlines()
    assert len(lines) == 1
    return json.loads(lines[0])


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert main(["--seed", "3", "synth", "--model", "dependent-pair", "--n", "5000", "--out-dir", str(d)]) == 0
    return d


class TestFormats:
    def test_task_graph_roundtrip(self):
        g = hierarchical_task()
        assert io.task_graph_from_dict(json.loads(json.dumps(io.task_graph_to_dict(g)))) == g

    def test_source_graph_roundtrip(self):
        g = hierarchical_model().source_graph
        back = io.source_graph_from_dict(json.loads(json.dumps(io.source_graph_to_dict(g))))
        assert io.source_graph_to_dict(back) == io.source_graph_to_dict(g)

    @pytest.mark.parametrize("fmt", ["csv", "binary"])
    def test_labels_roundtrip(self, tmp_path, fmt):
        gtm = hierarchical_model()
        L, _ = gtm.sample(300, 0)
        path = tmp_path / f"labels.{fmt}"
        (io.write_labels_binary if fmt == "binary" else io.write_labels_csv)(path, L, 2)
        back = io.read_labels(path, gtm.spaces, 2, fmt)
        assert np.array_equal(back.codes, L.codes)

    def test_csv_columns(self, tmp_path):
        gtm = zoo()[0]
        L, _ = gtm.sample(5, 0)
        io.write_labels_csv(tmp_path / "l.csv", L, 1)
        header = (tmp_path / "l.csv").read_text().splitlines()[0]
        assert header == "source_1_task_1,source_2_task_1,source_3_task_1"

    def test_invalid_cell(self, tmp_path):
        gtm = zoo()[0]
        (tmp_path / "l.csv").write_text("source_1_task_1,source_2_task_1,source_3_task_1\n1,2,7\n")
        with pytest.raises(InvalidCell):
            io.read_labels_csv(tmp_path / "l.csv", gtm.spaces, 1)

    def test_truncated_binary(self, tmp_path):
        (tmp_path / "l.bin").write_bytes(b"\x01\x00")
        with pytest.raises(InputError):
            io.read_labels_binary(tmp_path / "l.bin", zoo()[0].spaces, 1)

    def test_gold_roundtrip(self, tmp_path):
        gtm = hierarchical_model()
        _, y = gtm.sample(100, 0)
        io.write_gold_csv(tmp_path / "g.csv", y, gtm.fs)
        assert np.array_equal(io.read_gold_csv(tmp_path / "g.csv", gtm.fs), y)

    def test_model_roundtrip(self, tmp_path):
        gtm = zoo()[3]
        model = LabelModel(gtm.task_graph, gtm.source_graph).fit_moments(gtm.expected_moments, gtm.balance)
        io.write_model(tmp_path / "m.json", model)
        back = io.read_model(tmp_path / "m.json")
        assert back.params.max_abs_diff(model.params) == 0.0
        combos, _ = gtm.enumerate_joint()
        assert np.array_equal(back.predict_proba(combos), model.predict_proba(combos))

    def test_model_schema(self):
        with pytest.raises(InputError):
            io.model_from_dict({"schema": "other"})


class TestCLI:
    def _graphs(self, tmp_path, m):
        (tmp_path / "t.json").write_text(json.dumps(io.task_graph_to_dict(flat_task(2))))
        (tmp_path / "s.json").write_text(json.dumps(io.source_graph_to_dict(SourceGraph(m))))
        return tmp_path / "t.json", tmp_path / "s.json"

    def test_check_exit_codes(self, tmp_path, capsys):
        t, s = self._graphs(tmp_path, 3)
        code, out, _ = _run(capsys, "check", "--tasks", t, "--sources", s)
        assert code == 0 and json.loads(out)["solvable"]
        t, s = self._graphs(tmp_path, 2)
        code, _, err = _run(capsys, "check", "--tasks", t, "--sources", s)
        assert code == 1 and _err(err)["error"] == "NotIdentifiable"
        (tmp_path / "bad.json").write_text("{not json")
        code, _, err = _run(capsys, "check", "--tasks", t, "--sources", tmp_path / "bad.json")
        assert code == 2 and _err(err)["exit"] == 2

    def test_usage_error(self, capsys):
        assert main(["fit"]) == 2
        capsys.readouterr()

    def test_synth_deterministic(self, tmp_path, synth_dir):
        assert main(["--seed", "3", "synth", "--model", "dependent-pair", "--n", "5000",
                     "--out-dir", str(tmp_path)]) == 0
        for name in ("labels.csv", "gold.csv", "moments.json", "sources.json"):
            assert (tmp_path / name).read_bytes() == (synth_dir / name).read_bytes()

    def test_fit_predict(self, tmp_path, synth_dir, capsys):
        d = synth_dir
        args = ["--tasks", d / "tasks.json", "--sources", d / "sources.json"]
        code, _, err = _run(capsys, "fit", *args, "--labels", d / "labels.csv",
                            "--balance", d / "balance.json", "--out", tmp_path / "m.json")
        assert code == 0, err
        doc = json.loads((tmp_path / "m.json").read_text())
        assert doc["schema"] == io.MODEL_SCHEMA and doc["report"]["subproblems"][0]["converged"]
        code, _, _ = _run(capsys, "predict", "--model", tmp_path / "m.json", "--labels", d / "labels.csv",
                          "--out", tmp_path / "p.csv")
        assert code == 0
        # delegation: identical to the library posterior
        model = io.read_model(tmp_path / "m.json")
        L = io.read_labels(d / "labels.csv", model.spaces, 1)
        io.write_predictions(tmp_path / "q.csv", model.predict(L), model.fs)
        assert (tmp_path / "p.csv").read_bytes() == (tmp_path / "q.csv").read_bytes()
        # rerun is byte-identical
        _run(capsys, "fit", *args, "--labels", d / "labels.csv", "--balance", d / "balance.json",
             "--out", tmp_path / "m2.json")
        assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()

    def test_fit_population_moments(self, tmp_path, synth_dir, capsys):
        d = synth_dir
        code, _, err = _run(capsys, "fit", "--tasks", d / "tasks.json", "--sources", d / "sources.json",
                            "--moments", d / "moments.json", "--balance", d / "balance.json",
                            "--out", tmp_path / "m.json")
        assert code == 0, err
        doc = json.loads((tmp_path / "m.json").read_text())
        truth = json.loads((d / "truth.json").read_text())
        assert doc["cliques"] == truth["cliques"]
        err = max(np.abs(np.array(a) - np.array(b)).max() for a, b in zip(doc["tables"], truth["tables"]))
        assert err < 1e-6

    def test_fit_dev_gold_and_threads(self, tmp_path, synth_dir, capsys):
        d = synth_dir
        base = ["fit", "--tasks", d / "tasks.json", "--sources", d / "sources.json", "--labels", d / "labels.csv",
                "--dev-gold", d / "gold.csv"]
        assert _run(capsys, "--threads", "1", *base, "--out", tmp_path / "a.json")[0] == 0
        assert _run(capsys, "--threads", "4", *base, "--out", tmp_path / "b.json")[0] == 0
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_fit_constant_column(self, tmp_path, capsys):
        t, s = self._graphs(tmp_path, 3)
        rows = "\n".join(f"1,{1 + i % 2},{1 + (i // 2) % 2}" for i in range(400))
        (tmp_path / "l.csv").write_text("source_1_task_1,source_2_task_1,source_3_task_1\n" + rows + "\n")
        code, _, err = _run(capsys, "fit", "--tasks", t, "--sources", s, "--labels", tmp_path / "l.csv",
                            "--balance", "[0.5, 0.5]", "--out", tmp_path / "m.json")
        assert code == 1 and _err(err)["error"] == "DegenerateCovariance"

    def test_class_balance(self, tmp_path, capsys):
        main(["synth", "--model", "skewed", "--n", "20000", "--out-dir", str(tmp_path)])
        code, out, _ = _run(capsys, "class-balance", "--tasks", tmp_path / "tasks.json",
                            "--sources", tmp_path / "sources.json", "--labels", tmp_path / "labels.csv")
        assert code == 0
        assert np.abs(np.array(json.loads(out)["p"]) - [0.8, 0.2]).max() < 0.03

    def test_binary_format(self, tmp_path, capsys):
        main(["synth", "--model", "independent-3", "--n", "2000", "--format", "binary", "--out-dir", str(tmp_path)])
        code, _, err = _run(capsys, "fit", "--tasks", tmp_path / "tasks.json", "--sources", tmp_path / "sources.json",
                            "--labels", tmp_path / "labels.bin", "--format", "binary",
                            "--balance", "[0.6, 0.4]", "--out", tmp_path / "m.json")
        assert code == 0, err

    def test_experiment(self, tmp_path, capsys):
        code, out, _ = _run(capsys, "experiment", "--kind", "scaling", "--model", "independent-3",
                            "--n-grid", "1000,16000", "--trials", "3", "--out", tmp_path / "e.csv")
        assert code == 0 and json.loads(out)["slope"] < 0
        assert (tmp_path / "e.csv").read_text().startswith("n,trial,err")
