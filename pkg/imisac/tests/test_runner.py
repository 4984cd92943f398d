import csv
import json
import math
import os

import pytest

from imisac.exception import HeterogeneousResults, ScenarioValidationError, UnknownCommand
from imisac.runner import (
    PLOT_KINDS,
    BeamPatternSeries,
    emit_plotdata,
    error_document,
    main,
    realize,
    run,
)
from imisac.settings import SCHEMA_KEY, scenario_from_dict


@pytest.fixture(autouse=True)
def clean_env(monkeypatch):
    for name in ("IMISAC_SEED", "IMISAC_OUT", "IMISAC_THREADS", "IMISAC_LOG_LEVEL"):
        monkeypatch.delenv(name, raising=False)


def _ris_doc(num_elements=4, **sections):
    doc = {
        SCHEMA_KEY: 1,
        "architecture": {
            "kind": "RIS",
            "carrier_frequency": 28e9,
            "elements_per_layer": num_elements,
        },
        "channel": {
            "model": "los",
            "users": [[1.0, 0.0, 20.0]],
            "pathloss": False,
            "noise_power": 0.5,
            "targets": [[30.0, 0.0]],
            "beam_grid": [-90.0, 90.0, 19],
        },
        "optimizer": {"max_iters": 20, "num_starts": 1},
    }
    doc.update(sections)
    return doc


def _write(tmp_path, doc, name="scenario.json"):
    path = tmp_path / name
    path.write_text(json.dumps(doc))
    return str(path)


def _read_json(path):
    with open(path, encoding="utf-8") as f:
        return json.load(f)


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return list(csv.DictReader(f))


def test_single_element_rate(tmp_path):
    doc = _ris_doc(num_elements=1)
    doc["channel"]["users"] = [[0.0, 0.0, 10.0]]
    out = tmp_path / "out"
    assert main(["simulate", "--config", _write(tmp_path, doc), "--out", str(out)]) == 0
    result = _read_json(out / "simulate_result.json")
    assert result["command"] == "simulate"
    run_doc = result["runs"][0]
    assert run_doc["seed"] == 0
    assert run_doc["result"]["sum_rate"] == pytest.approx(math.log2(1.0 + 1.0 / 0.5), abs=1e-12)
    assert os.path.exists(out / "timers.json")


def test_simulate_bytes_repeat(tmp_path):
    doc = _ris_doc()
    doc["architecture"]["state"] = "random"
    config = _write(tmp_path, doc)
    for name in ("a", "b"):
        assert main(["simulate", "--config", config, "--out", str(tmp_path / name), "--seed", "5"]) == 0
    first = (tmp_path / "a" / "simulate_result.json").read_bytes()
    second = (tmp_path / "b" / "simulate_result.json").read_bytes()
    assert first == second
    assert _read_json(tmp_path / "a" / "simulate_result.json")["runs"][0]["seed"] == 5


def test_threads_do_not_change_results(tmp_path):
    config = scenario_from_dict(_ris_doc(seeds=[0, 1]))
    serial = run("optimize", config.with_overrides(output_dir=str(tmp_path / "serial")), threads=1)
    pooled = run("optimize", config.with_overrides(output_dir=str(tmp_path / "pooled")), threads=2)
    with open(serial["result"], "rb") as a, open(pooled["result"], "rb") as b:
        assert a.read() == b.read()
    doc = _read_json(serial["result"])
    assert [r["seed"] for r in doc["runs"]] == [0, 1]
    trace = doc["runs"][0]["trace"]
    assert trace["objective_trace"] == sorted(trace["objective_trace"])


def test_simulate_beampattern_csv(tmp_path):
    out = tmp_path / "out"
    main(["simulate", "--config", _write(tmp_path, _ris_doc()), "--out", str(out)])
    rows = _read_csv(out / "simulate_beampattern.csv")
    assert len(rows) == 19
    assert list(rows[0].keys()) == ["angle_deg", "power", "label"]
    assert float(rows[0]["angle_deg"]) == -90.0
    assert rows[0]["label"] == "seed=0"


def test_estimate_command(tmp_path):
    doc = _ris_doc(estimation={"slots": 6, "slot_counts": [4, 6]})
    out = tmp_path / "out"
    assert main(["estimate", "--config", _write(tmp_path, doc), "--out", str(out)]) == 0
    run_doc = _read_json(out / "estimate_result.json")["runs"][0]
    user = run_doc["users"][0]
    assert user["num_slots"] == 6
    assert user["num_unknowns"] == 4
    assert user["nmse"] < 1e-18
    assert [p["num_slots"] for p in run_doc["nmse_vs_slots"]] == [4, 6]
    rows = _read_csv(out / "estimate_nmse_vs_T.csv")
    assert [int(r["num_slots"]) for r in rows] == [4, 6]


def test_waveform_command(tmp_path):
    doc = _ris_doc(waveform={"num_slots": 4})
    out = tmp_path / "out"
    assert main(["waveform", "--config", _write(tmp_path, doc), "--out", str(out)]) == 0
    run_doc = _read_json(out / "waveform_result.json")["runs"][0]
    assert run_doc["design"]["num_slots"] == 4
    assert len(run_doc["design"]["sequences"]) == 4
    assert set(run_doc["leakage"]) >= {"comm_power", "sense_power"}
    labels = {r["label"] for r in _read_csv(out / "waveform_beampattern.csv")}
    assert labels == {"k=0,seed=0", "k=1,seed=0"}


def test_sweep_command(tmp_path):
    doc = _ris_doc(sweep={"values": [2, 4]})
    out = tmp_path / "out"
    assert main(["sweep", "--config", _write(tmp_path, doc), "--out", str(out)]) == 0
    runs = _read_json(out / "sweep_result.json")["runs"]
    assert [r["elements_per_layer"] for r in runs] == [2, 4]
    rows = _read_csv(out / "sweep_se_vs_elements.csv")
    assert [int(r["total_elements"]) for r in rows] == [2, 4]
    assert list(rows[0].keys()) == list(PLOT_KINDS["se_vs_elements"][1])


def test_pareto_command(tmp_path):
    doc = _ris_doc(sweep={"weights": [0.0, 1.0]})
    out = tmp_path / "out"
    assert main(["pareto", "--config", _write(tmp_path, doc), "--out", str(out)]) == 0
    points = _read_json(out / "pareto_result.json")["runs"][0]["points"]
    assert [p["weight"] for p in points] == [0.0, 1.0]
    assert len(_read_csv(out / "pareto_pareto.csv")) == 2


def test_pareto_without_weights_fails(tmp_path):
    out = tmp_path / "out"
    assert main(["pareto", "--config", _write(tmp_path, _ris_doc()), "--out", str(out)]) == 1
    error = _read_json(out / "error.json")["error"]
    assert error["code"] == "validation_error"
    assert {"field": "sweep.weights", "message": "a Pareto sweep needs weights"} in error["details"]["errors"]


def test_invalid_scenario_writes_error(tmp_path):
    doc = _ris_doc()
    del doc["channel"]
    out = tmp_path / "out"
    assert main(["simulate", "--config", _write(tmp_path, doc), "--out", str(out)]) == 1
    error = _read_json(out / "error.json")["error"]
    assert error["code"] == "validation_error"
    assert error["details"]["errors"][0]["field"] == "channel"
    assert not os.path.exists(out / "simulate_result.json")


def test_parse_error_without_out(tmp_path, capsys):
    path = tmp_path / "broken.yaml"
    path.write_text("architecture: [\n")
    assert main(["simulate", "--config", str(path)]) == 1
    doc = json.loads(capsys.readouterr().err)
    assert doc["error"]["code"] == "parse_error"


def test_unknown_command(tmp_path):
    out = tmp_path / "out"
    assert main(["render", "--config", _write(tmp_path, _ris_doc()), "--out", str(out)]) == 1
    assert _read_json(out / "error.json")["error"]["code"] == "unknown_command"
    with pytest.raises(UnknownCommand):
        run("render", scenario_from_dict(_ris_doc()))


def test_env_overrides_apply(tmp_path, monkeypatch):
    out = tmp_path / "env_out"
    monkeypatch.setenv("IMISAC_OUT", str(out))
    monkeypatch.setenv("IMISAC_SEED", "3")
    assert main(["simulate", "--config", _write(tmp_path, _ris_doc())]) == 0
    assert _read_json(out / "simulate_result.json")["runs"][0]["seed"] == 3


def test_bad_threads(tmp_path):
    out = tmp_path / "out"
    args = ["simulate", "--config", _write(tmp_path, _ris_doc()), "--out", str(out), "--threads", "0"]
    assert main(args) == 1
    assert _read_json(out / "error.json")["error"]["details"]["errors"][0]["field"] == "threads"


def test_error_document_shape():
    doc = error_document(HeterogeneousResults("mixed"))
    assert doc == {"error": {"code": "heterogeneous_results", "message": "mixed", "details": {}}}


def test_emit_plotdata(tmp_path):
    path = str(tmp_path / "beam.csv")
    series = [
        BeamPatternSeries("a", ((0.0, 1.0), (10.0, 0.5))),
        BeamPatternSeries("b", ((0.0, 2.0),)),
    ]
    assert emit_plotdata(series, "beampattern", path) == 3
    with open(path, encoding="utf-8") as f:
        lines = f.read().splitlines()
    assert lines[0] == "angle_deg,power,label"
    assert lines[1] == "0.0,1.0,a"


def test_emit_plotdata_rejects_mixed_records(tmp_path):
    path = str(tmp_path / "mixed.csv")
    with pytest.raises(HeterogeneousResults):
        emit_plotdata([BeamPatternSeries("a", ()), object()], "beampattern", path)
    with pytest.raises(HeterogeneousResults):
        emit_plotdata([], "beampattern", path)
    with pytest.raises(HeterogeneousResults):
        emit_plotdata([BeamPatternSeries("a", ())], "histogram", path)


def test_optimize_trace_csv(tmp_path):
    out = tmp_path / "out"
    assert main(["optimize", "--config", _write(tmp_path, _ris_doc()), "--out", str(out)]) == 0
    trace = _read_json(out / "optimize_result.json")["runs"][0]["trace"]["objective_trace"]
    rows = _read_csv(out / "optimize_trace.csv")
    assert list(rows[0].keys()) == ["iter", "objective", "seed", "label"]
    assert [int(r["iter"]) for r in rows] == list(range(len(trace)))
    assert [float(r["objective"]) for r in rows] == pytest.approx(trace)


def test_waveform_harmonics_csv(tmp_path):
    doc = _ris_doc(waveform={"num_slots": 4})
    out = tmp_path / "out"
    assert main(["waveform", "--config", _write(tmp_path, doc), "--out", str(out)]) == 0
    rows = _read_csv(out / "waveform_harmonics.csv")
    assert list(rows[0].keys()) == ["element", "k", "re", "im", "seed"]
    assert len(rows) == 4 * 4
    assert {int(r["k"]) for r in rows} == {0, 1, 2, 3}
    # unit-modulus sequences put unit power across the harmonics of each element
    for n in range(4):
        power = sum(float(r["re"]) ** 2 + float(r["im"]) ** 2 for r in rows if int(r["element"]) == n)
        assert power == pytest.approx(1.0, abs=1e-9)


def test_channel_export_csv(tmp_path):
    doc = _ris_doc(num_elements=3)
    doc["channel"]["users"] = [[1.0, 0.0, 20.0], [-1.0, 0.0, 20.0]]
    out = tmp_path / "plain"
    assert main(["simulate", "--config", _write(tmp_path, doc), "--out", str(out)]) == 0
    assert not os.path.exists(out / "simulate_channels.csv")

    doc["channel"]["export_channels"] = True
    exported = tmp_path / "exported"
    assert main(["simulate", "--config", _write(tmp_path, doc), "--out", str(exported)]) == 0
    rows = _read_csv(exported / "simulate_channels.csv")
    assert list(rows[0].keys()) == ["seed", "user", "re_0", "im_0", "re_1", "im_1", "re_2", "im_2"]
    assert [int(r["user"]) for r in rows] == [0, 1]
    config = scenario_from_dict(doc)
    H = realize(config, 0).channels.H
    assert float(rows[1]["im_2"]) == pytest.approx(H[1, 2].imag, rel=1e-12)
    plain_hash = _read_json(out / "simulate_result.json")["config_hash"]
    assert _read_json(exported / "simulate_result.json")["config_hash"] == plain_hash


def test_layer_sweep_without_elements_writes_error(tmp_path):
    doc = _ris_doc(sweep={"parameter": "num_layers", "values": [2], "total_elements": 0})
    doc["architecture"] = {"kind": "SIM", "carrier_frequency": 28e9, "num_layers": 2}
    out = tmp_path / "out"
    assert main(["sweep", "--config", _write(tmp_path, doc), "--out", str(out)]) == 1
    error = _read_json(out / "error.json")["error"]
    assert error["code"] == "validation_error"
    assert [e["field"] for e in error["details"]["errors"]] == ["sweep.total_elements"]


def test_unbuildable_architecture_is_validation_error():
    config = scenario_from_dict(_ris_doc())
    with pytest.raises(ScenarioValidationError):
        realize(config, 0, dict(config.architecture, elements_per_layer=0))
