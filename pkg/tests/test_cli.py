import json
import os
import warnings

import numpy as np
import pytest

from homoscale import cli
from homoscale.errors import MissingFile, ParseError, ValidationError


def files(d):
    out = {}
    for root, _, names in os.walk(d):
        for n in names:
            p = os.path.join(root, n)
            out[os.path.relpath(p, d)] = open(p, "rb").read()
    return out


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    d = tmp_path_factory.mktemp("gen")
    assert cli.main(["gen", "--n", "2", "--count", "2", "--seed", "3", "--out", str(d)]) == 0
    return d


def write(path, doc):
    path.write_text(json.dumps(doc))
    return str(path)


@pytest.mark.filterwarnings("ignore:record")
def test_parse_manifest_basics(tmp_path):
    assert cli.parse_manifest(write(tmp_path / "m.json", [])) == []
    rec = {"source": "a.png", "target": "b.png", "category": "RE-L", "points": [[0, 0, 1, 1]] * 3}
    with pytest.raises(ValidationError, match="record 0"):
        cli.parse_manifest(write(tmp_path / "m.json", [rec]))
    rec["points"] = [[i, 2 * i, i + 1, i] for i in range(4)]
    with pytest.warns(UserWarning):
        recs = cli.parse_manifest(write(tmp_path / "m.json", [rec]))
    assert recs[0].points.shape == (4, 4) and recs[0].id == "0000"
    with pytest.raises(ValidationError, match="category"):
        cli.parse_manifest(write(tmp_path / "m.json", [dict(rec, category="XX")]))
    with pytest.raises(ValidationError, match="duplicate"):
        cli.parse_manifest(write(tmp_path / "m.json", [dict(rec, id="a"), dict(rec, id="a")]))
    (tmp_path / "bad.json").write_text('[\n  {"source": }\n]')
    with pytest.raises(ParseError, match=r"bad.json:2:\d+"):
        cli.parse_manifest(str(tmp_path / "bad.json"))
    with pytest.raises(MissingFile):
        cli.parse_manifest(str(tmp_path / "none.json"))


def test_manifest_round_trip(data, tmp_path):
    recs = cli.parse_manifest(str(data / "manifest.json"))
    assert len(recs) == 2 and recs[0].category == "synthetic" and recs[0].chain
    cli.write_manifest(recs, str(tmp_path / "m.json"))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        back = cli.parse_manifest(str(tmp_path / "m.json"))
    for a, b in zip(recs, back):
        assert a.to_dict() == b.to_dict()


def test_gen_is_deterministic(data, tmp_path):
    assert cli.main(["gen", "--n", "2", "--count", "2", "--seed", "3", "--out", str(tmp_path)]) == 0
    assert files(tmp_path) == files(data)
    chain = json.loads((data / "chain_0000.json").read_text())
    assert len(chain["gts"]) == 2 and len(chain["images"]) == 3


def test_eval_ground_truth_and_plot(data, tmp_path):
    out = tmp_path / "ev"
    rc = cli.main(["eval", str(data / "manifest.json"), "--estimates", f"gt={data / 'ground_truth.json'}", "--out", str(out)])
    assert rc == 0
    rows = (out / "records.csv").read_text().splitlines()
    gt = [r for r in rows if r.startswith("gt/")]
    assert len(gt) == 2 and all(float(r.split(",")[-1]) < 1e-6 for r in gt)
    assert "I3x3" in (out / "report.txt").read_text()
    assert cli.main(["plot", str(out / "robustness.csv"), "--out", str(tmp_path / "r.svg")]) == 0
    assert (tmp_path / "r.svg").read_bytes().startswith(b"<?xml")


def test_estimate_self_pairs(data, tmp_path):
    recs = cli.parse_manifest(str(data / "manifest.json"))
    self_recs = []
    for r in recs:
        pts = r.points.copy()
        pts[:, 2:] = pts[:, :2]
        self_recs.append(cli.Record(r.id, r.source, r.source, "synthetic", pts))
    (tmp_path / "self").mkdir()
    for r in recs:
        os.link(data / r.source, tmp_path / "self" / r.source)
    cli.write_manifest(self_recs, str(tmp_path / "self" / "manifest.json"))
    out = tmp_path / "est"
    assert cli.main(["estimate", str(tmp_path / "self" / "manifest.json"), "--out", str(out)]) == 0
    pme = [float(r.split(",")[-1]) for r in (out / "pme.csv").read_text().splitlines()[1:]]
    assert len(pme) == 2 and max(pme) < 0.1
    pair = json.loads((out / "pairs" / f"{recs[0].id}.json").read_text())
    assert len(pair["diagnostics"]["levels"]) == 4


def test_train_writes_traces(data, tmp_path):
    out = tmp_path / "tr"
    rc = cli.main(["train", str(data / "manifest.json"), "--init", "gt-noise", "--iters", "5", "--mu", "0.1", "--log", "--out", str(out)])
    assert rc == 0
    trace = (out / "chain_0000_trace.csv").read_text().splitlines()
    assert trace[0].startswith("step,L_sup") and len(trace) >= 2
    res = json.loads((out / "chain_0000_result.json").read_text())
    assert res["iterations"] <= 5 and len(res["bridges"]) == 2
    assert set(json.loads((out / "estimates.json").read_text())) == {"chain_0000", "chain_0001"}


def test_error_record(tmp_path, capsys):
    assert cli.main(["estimate", str(tmp_path / "missing.json"), "--out", str(tmp_path)]) == 2
    err = json.loads(capsys.readouterr().err.strip())
    assert err["error"] and "missing.json" in err["message"]


def test_config_precedence(tmp_path):
    cfg_file = write(tmp_path / "c.json", {"estimator": {"radius": 3, "ratio": 0.7}, "optimizer": {"mu": 0.5}, "seed": 9})
    args = cli.parser().parse_args(["train", "m.json", "--config", cfg_file, "--radius", "5"])
    cfg = cli.build_config(args)
    assert (cfg.est.radius, cfg.est.ratio, cfg.opt.mu, cfg.seed) == (5, 0.7, 0.5, 9)
    cfg = cli.build_config(cli.parser().parse_args(["train", "m.json", "--lambda-w", "2.5"]))
    assert cfg.loss.lambda_w == 2.5 and cfg.seed == cli.DEFAULT_SEED


def test_thread_cap(monkeypatch):
    monkeypatch.setenv("HOMOSCALE_THREADS", "1")
    assert cli.workers() == 1
    monkeypatch.setenv("HOMOSCALE_THREADS", "x")
    with pytest.raises(ValidationError):
        cli.workers()
