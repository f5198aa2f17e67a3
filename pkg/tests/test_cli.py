import json

import numpy as np
import pytest

from proplab.cli import main
from proplab.events import read_events_csv
from proplab.models import CalibratedModel

RAW_HEADER = "date,timestamp_ms,price,bid,ask,volume,flags\n"


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    """Synthetic events, calibrated models and a diagnostics directory."""
    d = tmp_path_factory.mktemp("cli")
    ev = d / "ev.csv"
    assert main(["synth", "-o", str(ev), "--generator", "hdim2", "--events", "3000", "--days", "4",
                 "--sign-memory", "0.7", "--seed", "5", "--noise", "1e-4", "--kernel-length", "12"]) == 0
    assert main(["calibrate", str(ev), "-o", str(d / "models"), "--model", "all",
                 "--split", "odd", "--max-lag", "12", "--no-smooth"]) == 0
    return d


def test_ingest_valid_and_malformed(tmp_path, capsys):
    rows = [
        "2020-01-02,1000,10.02,10.00,10.02,100,",
        "2020-01-02,1500,abc,10.00,10.02,100,",
        "2020-01-02,2000,9.99,9.99,10.01,100,",
        "2020-01-02,3000,10.03,10.01,10.03,100,",
    ]
    raw = tmp_path / "raw.csv"
    raw.write_text(RAW_HEADER + "\n".join(rows) + "\n")
    out = tmp_path / "ev.csv"
    assert main(["ingest", str(raw), "-o", str(out), "--trim-minutes", "0", "--instrument-id", "X"]) == 0
    assert "rejected_malformed: 1" in capsys.readouterr().out
    assert read_events_csv(out).n_events == 3
    summary = json.loads(out.with_suffix(".summary.json").read_text())
    assert summary["report"]["rejected_malformed"] == 1


@pytest.mark.parametrize("content", ["", "timestamp_ms,price\n1,2\n"])
def test_ingest_bad_input_exit_2(tmp_path, content):
    raw = tmp_path / "raw.csv"
    raw.write_text(content)
    assert main(["ingest", str(raw), "-o", str(tmp_path / "o.csv")]) == 2


def test_ingest_bad_config_exit_2(tmp_path):
    raw = tmp_path / "raw.csv"
    raw.write_text(RAW_HEADER + "2020-01-02,1000,10.02,10.00,10.02,100,\n")
    cfg = tmp_path / "c.ini"
    cfg.write_text("[ingest]\ntrim_minutes = soon\n")
    assert main(["ingest", str(raw), "-o", str(tmp_path / "o.csv"), "--config", str(cfg)]) == 2
    cfg.write_text("not an ini file")
    assert main(["ingest", str(raw), "-o", str(tmp_path / "o.csv"), "--config", str(cfg)]) == 2


def test_calibrate_all_writes_five_models(workdir):
    names = sorted(p.stem for p in (workdir / "models").glob("*.json"))
    assert names == ["calibration", "cim2", "hdim2", "hdim2star", "tim1", "tim2"]
    m = CalibratedModel.from_json(workdir / "models" / "hdim2.json")
    assert m.L == 12 and m.meta["split"] == "odd"
    report = json.loads((workdir / "models" / "calibration.json").read_text())
    assert report["days"] == 2
    assert report["models"]["hdim2"]["condition"] > 1


def test_calibrate_single_kind(workdir, tmp_path):
    assert main(["calibrate", str(workdir / "ev.csv"), "-o", str(tmp_path), "--model", "hdim2",
                 "--max-lag", "8"]) == 0
    assert sorted(p.name for p in tmp_path.iterdir()) == ["calibration.json", "hdim2.json"]


def test_max_lag_too_large_exit_2(workdir, tmp_path):
    assert main(["calibrate", str(workdir / "ev.csv"), "-o", str(tmp_path), "--max-lag", "5000"]) == 2


def test_unknown_model_and_usage_exit_2(workdir, tmp_path):
    assert main(["calibrate", str(workdir / "ev.csv"), "-o", str(tmp_path), "--model", "tim3"]) == 2
    assert main(["calibrate"]) == 2
    assert main(["frobnicate"]) == 2


def test_singular_system_exit_3(tmp_path):
    from proplab.events import InstrumentData, write_events_csv
    from proplab.synth import FlowSpec, generate

    data = generate(FlowSpec(T=400, days=2, seed=1))
    # every trade buys: the sign correlation matrix is rank one
    days = [type(d).from_returns(d.date, np.ones(len(d)), np.ones(len(d), int), d.ret * 0 + 1e-4)
            for d in data.days]
    ev = tmp_path / "const.csv"
    write_events_csv(ev, InstrumentData("C", tuple(days)))
    assert main(["calibrate", str(ev), "-o", str(tmp_path / "m"), "--model", "tim1",
                 "--split", "none", "--max-lag", "5"]) == 3


def test_config_file_and_override(workdir, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[calibrate]\nmodel = tim1\nmax_lag = 6\nsplit = none\n")
    out = tmp_path / "a"
    assert main(["calibrate", str(workdir / "ev.csv"), "-o", str(out), "--config", str(cfg)]) == 0
    assert CalibratedModel.from_json(out / "tim1.json").L == 6
    out = tmp_path / "b"
    assert main(["calibrate", str(workdir / "ev.csv"), "-o", str(out), "--config", str(cfg),
                 "--max-lag", "4"]) == 0
    assert CalibratedModel.from_json(out / "tim1.json").L == 4


def test_config_keys_are_case_insensitive(workdir, tmp_path):
    cfg = tmp_path / "c.ini"
    cfg.write_text("[diagnose]\nN = 20,40\nmetric = impact\nbins = 9\n")
    out = tmp_path / "diag"
    assert main(["diagnose", str(workdir / "ev.csv"), "--models", str(workdir / "models"),
                 "--model", "cim2", "-o", str(out), "--config", str(cfg)]) == 0
    curves = json.loads((out / "cim2_impact.json").read_text())["curves"]
    assert sorted(curves) == ["20", "40"]


def test_simulate_predicted_csv(workdir, tmp_path):
    out = tmp_path / "pred.csv"
    assert main(["simulate", str(workdir / "ev.csv"), "--models", str(workdir / "models"),
                 "--model", "hdim2,tim2", "-o", str(out)]) == 0
    header = [l for l in out.read_text().splitlines() if not l.startswith("#")][0]
    assert header.endswith("r_hat_hdim2,r_hat_tim2")


def test_diagnose_missing_model_exit_2(workdir, tmp_path):
    ev = str(workdir / "ev.csv")
    assert main(["diagnose", ev, "--model-file", str(tmp_path / "nope.json"), "-o", str(tmp_path)]) == 2
    assert main(["diagnose", ev, "--models", str(tmp_path / "nodir"), "-o", str(tmp_path)]) == 2
    assert main(["diagnose", ev, "--models", str(workdir / "models"), "-o", str(tmp_path),
                 "--metric", "colour"]) == 2


def test_diagnose_bundles(workdir, tmp_path):
    out = tmp_path / "diag"
    assert main(["diagnose", str(workdir / "ev.csv"), "--models", str(workdir / "models"),
                 "-o", str(out), "--metric", "impact,signature,bias", "--N", "50",
                 "--bins", "11", "--max-lag", "12", "--signature-lag", "100", "--plot-data"]) == 0
    for model in ("tim1", "tim2", "hdim2", "hdim2star", "cim2"):
        for metric in ("impact", "signature", "bias"):
            assert (out / f"{model}_{metric}.csv").exists()
            assert (out / f"{model}_{metric}.json").exists()
            assert (out / f"{model}_{metric}.dat").exists()
    assert (out / "data_impact.csv").exists()
    head = (out / "hdim2_bias.csv").read_text().splitlines()[0]
    assert head.split(",") == ["lag", "key", "value", "stderr"]
    assert json.loads((out / "hdim2_impact.json").read_text())["curves"]["50"]["bins"] <= 11
    assert main(["report", str(out)]) == 0
    assert (out / "report.json").exists()


def test_report_empty_dir_exit_2(tmp_path):
    assert main(["report", str(tmp_path)]) == 2


def test_pipeline_deterministic(tmp_path):
    def run(d):
        ev = d / "ev.csv"
        assert main(["synth", "-o", str(ev), "--generator", "tim2", "--events", "2000", "--days", "4",
                     "--sign-memory", "0.7", "--seed", "3", "--kernel-length", "8", "--noise", "1e-4"]) == 0
        assert main(["calibrate", str(ev), "-o", str(d / "m"), "--max-lag", "8"]) == 0
        assert main(["diagnose", str(ev), "--models", str(d / "m"), "-o", str(d / "diag"),
                     "--N", "10,20,40,80", "--max-lag", "8", "--signature-lag", "50"]) == 0
        return {p.relative_to(d): p.read_bytes() for p in sorted(d.rglob("*")) if p.is_file()}

    (tmp_path / "a").mkdir()
    (tmp_path / "b").mkdir()
    a, b = run(tmp_path / "a"), run(tmp_path / "b")
    assert a.keys() == b.keys() and len(a) > 20
    for k in a:
        assert a[k] == b[k], k
