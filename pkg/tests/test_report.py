"""Fit report schema, serialization, and rendering."""

import json

import numpy as np
import pytest

from neuropgm import (DataFormatError, FitReport, read_report, render_report,
                      write_report)


def _report(**overrides):
    base = dict(model="srm", trace=[-10.0, -4.0, -3.5], converged=True,
                wall_time=0.25, seed=7, metrics={"score": 0.93})
    base.update(overrides)
    return FitReport(**base)


def test_trace_must_hold_at_least_the_initial_objective():
    with pytest.raises(ValueError):
        _report(trace=[])


def test_wall_time_must_be_nonnegative():
    with pytest.raises(ValueError):
        _report(wall_time=-0.1)


def test_iterations_is_trace_length_minus_one():
    rep = _report()
    assert rep.iterations == 2
    assert len(rep.trace) == rep.iterations + 1


def test_numpy_scalars_are_coerced_to_plain_floats():
    rep = _report(trace=[np.float64(1.0), np.float64(2.0)],
                  metrics={"m": np.float64(0.5)})
    assert all(type(v) is float for v in rep.trace)
    assert type(rep.metrics["m"]) is float


def test_write_then_read_roundtrip(tmp_path):
    rep = _report()
    path = tmp_path / "r.json"
    write_report(path, rep)
    back = read_report(path)
    assert back.model == rep.model
    assert back.trace == rep.trace
    assert back.converged == rep.converged
    assert back.wall_time == rep.wall_time
    assert back.seed == rep.seed
    assert back.metrics == rep.metrics


def test_schema_version_mismatch_is_rejected(tmp_path):
    path = tmp_path / "r.json"
    write_report(path, _report())
    data = json.loads(path.read_text(encoding="utf-8"))
    data["v"] = 2
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_report(path)


def test_missing_keys_are_rejected(tmp_path):
    path = tmp_path / "r.json"
    write_report(path, _report())
    data = json.loads(path.read_text(encoding="utf-8"))
    del data["objective_trace"]
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_report(path)


def test_inconsistent_iteration_count_is_rejected(tmp_path):
    path = tmp_path / "r.json"
    write_report(path, _report())
    data = json.loads(path.read_text(encoding="utf-8"))
    data["iterations"] = 5
    path.write_text(json.dumps(data), encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_report(path)


def test_invalid_json_is_a_data_error(tmp_path):
    path = tmp_path / "r.json"
    path.write_text("{not json", encoding="utf-8")
    with pytest.raises(DataFormatError):
        read_report(path)


def test_text_rendering_shows_model_trace_and_metrics():
    text = render_report(_report(), "text")
    assert "srm" in text
    assert "-10" in text and "-3.5" in text
    assert "score" in text


def test_json_rendering_matches_the_file_schema():
    payload = json.loads(render_report(_report(), "json"))
    assert payload["v"] == 1
    assert payload["iterations"] == 2
    assert payload["metrics"] == {"score": 0.93}


def test_csv_rendering_has_a_header_and_metric_rows():
    csv = render_report(_report(), "csv")
    lines = csv.strip().splitlines()
    assert lines[0] == "key,value"
    assert any(line.startswith("metric.score,") for line in lines)


def test_unknown_render_format_is_rejected():
    with pytest.raises(ValueError):
        render_report(_report(), "xml")
