import configparser
import json

import pytest

from privcdr.cli import AggregationError, _check_comparable, main
from privcdr.config import ConfigError, parse_config
from privcdr.evaluation import MetricsDocument, MetricsSummary, read_metrics_document

CONFIG = """
[experiment]
seed = 1
out = {out}

[synthetic]
n_users = 40
n_items_a = 30
n_items_b = 30

[dataset]
k_core = 3

[train]
epochs = 2
batch_size = 128
eval_negatives = 15
id_dim = 8
proj_dim = 8
hidden_dim = 16
dim = 8
predictor_hidden = 8
{train_extra}

[sweep]
lambda = 0.1, 0, 0.1
"""


@pytest.fixture
def workdir(tmp_path):
    def make(train_extra=""):
        path = tmp_path / "exp.ini"
        path.write_text(CONFIG.format(out=tmp_path / "out", train_extra=train_extra))
        return path
    return make


def run(*argv):
    return main([str(a) for a in argv])


def manifest(path):
    cp = configparser.ConfigParser()
    cp.read(path)
    return cp


def test_missing_config_names_path(tmp_path, capsys):
    missing = tmp_path / "nope.ini"
    assert run("train", "--config", missing) != 0
    assert str(missing) in capsys.readouterr().err


def test_train_without_prepare_fails(workdir, capsys):
    assert run("train", "--config", workdir()) != 0
    assert "privcdr prepare" in capsys.readouterr().err


def test_prepare_manifest_and_rerun(workdir, tmp_path, capsys):
    cfg = workdir()
    assert run("prepare", "--config", cfg) == 0
    first = capsys.readouterr().out
    cp = manifest(tmp_path / "out" / "prepared" / "manifest.ini")
    for d in "AB":
        assert cp.getint(d, "users") == 40 and cp.getint(d, "test") == 40
        density = cp.getfloat(d, "density")
        total = cp.getint(d, "training") + cp.getint(d, "test")
        assert density == pytest.approx(total / (40 * cp.getint(d, "items")))
    assert run("prepare", "--config", cfg) == 0
    second = capsys.readouterr().out
    hash_line = lambda s: [x for x in s.splitlines() if x.startswith("manifest_sha256")]  # noqa: E731
    assert hash_line(first) == hash_line(second) and hash_line(first)


def test_gen_data_then_prepare_from_files(workdir, tmp_path):
    raw = tmp_path / "raw"
    assert run("gen-data", "--config", workdir(), "--out", raw) == 0
    cfg = tmp_path / "files.ini"
    cfg.write_text(f"[experiment]\nout = {tmp_path / 'o2'}\n[dataset]\npath = {raw}\nk_core = 3\n")
    assert run("prepare", "--config", cfg) == 0
    assert (tmp_path / "o2" / "prepared" / "A.visual.p2ft").exists()


def test_train_evaluate_export(workdir, tmp_path):
    cfg = workdir()
    out = tmp_path / "out"
    assert run("prepare", "--config", cfg) == 0
    assert run("train", "--config", cfg) == 0
    assert run("evaluate", "--config", cfg) == 0
    trained = (out / "train" / "metrics.ini").read_text()
    assert (out / "eval" / "metrics.ini").read_text() == trained
    assert run("export-embeddings", "--config", cfg) == 0
    sep = json.loads((out / "embeddings" / "separation.json").read_text())
    assert {"common_cross", "specific_cross", "gap", "within_A", "within_B"} == set(sep)
    # a changed config must not be evaluated against old checkpoints
    assert run("evaluate", "--config", cfg, "--ablate", "rev") != 0


def test_ablate_obf_flag_records_none(workdir, tmp_path):
    cfg = workdir()
    assert run("prepare", "--config", cfg) == 0
    assert run("train", "--config", cfg, "--ablate", "obf") == 0
    doc = read_metrics_document(tmp_path / "out" / "train" / "metrics.ini")
    assert doc.lambda_used is None


def test_sweep_sorted_and_single_point(workdir, tmp_path):
    cfg = workdir()
    out = tmp_path / "out"
    assert run("prepare", "--config", cfg) == 0
    assert run("sweep", "--config", cfg, "--param", "lambda") == 0
    series = (out / "sweep-lambda" / "series.tsv").read_text().splitlines()
    assert series[0].split("\t")[0] == "lambda"
    assert [float(r.split("\t")[0]) for r in series[1:]] == [0.0, 0.1]
    table = (out / "sweep-lambda" / "table.txt").read_text().splitlines()
    assert len(table) == 2 + 2

    # a one-point grid at the training value reproduces the train command
    one = tmp_path / "one.ini"
    one.write_text(cfg.read_text().replace("lambda = 0.1, 0, 0.1", "lambda = 0.01"))
    assert run("sweep", "--config", one, "--param", "lambda") == 0
    assert run("train", "--config", one) == 0
    point = read_metrics_document(out / "sweep-lambda" / "lambda=0.01" / "metrics.ini")
    trained = read_metrics_document(out / "train" / "metrics.ini")
    assert point.summaries == trained.summaries and point.config_hash == trained.config_hash


def test_ablate_table_shape(workdir, tmp_path):
    cfg = workdir("epochs = 1")
    cfg.write_text(cfg.read_text().replace("epochs = 2\n", ""))
    assert run("prepare", "--config", cfg) == 0
    assert run("ablate", "--config", cfg) == 0
    lines = (tmp_path / "out" / "ablate" / "series.tsv").read_text().splitlines()
    header, rows = lines[0].split("\t"), [line.split("\t") for line in lines[1:]]
    assert header == ["variant", "lambda", "HR@10_A", "NDCG@10_A", "HR@10_B", "NDCG@10_B"]
    assert len(rows) == 9 and [r[0] for r in rows][:2] == ["full", "w/o rev"]
    lam = {r[0]: r[1] for r in rows}
    assert lam["w/o obf"] == "none" and lam["full"] == "0.01"


def doc(seed, base):
    s = {d: MetricsSummary(d, 10, 0.5, 0.2, 10) for d in "AB"}
    return MetricsDocument(seed, "h", 0.01, s, {} if base is None else {"base_hash": base})


def test_mixed_aggregation_refused():
    _check_comparable([doc(0, "x"), doc(0, "x")])
    with pytest.raises(AggregationError):
        _check_comparable([doc(0, "x"), doc(0, "y")])
    with pytest.raises(AggregationError):
        _check_comparable([doc(0, "x"), doc(1, "x")])
    with pytest.raises(AggregationError):
        _check_comparable([doc(0, None)])


def test_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        parse_config("[experiment]\nseed = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[synthetic]\n[train]\nbogus = 1\n")
    with pytest.raises(ConfigError):
        parse_config("[synthetic]\n[sweep]\nlambda =\n")
    exp = parse_config("[synthetic]\nn_users = 12\n[train]\nablate = obf, rev\n[sweep]\ndim = 8, 4\n", tmp_path)
    assert exp.synthetic.n_users == 12 and exp.train.ablate == {"obf", "rev"} and exp.grids["dim"] == (8, 4)
