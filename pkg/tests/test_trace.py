from __future__ import annotations

import copy
import json

import pytest
from hypothesis import given, strategies as st

from conftest import CORPUS
from uiforge.trace import (
    BBox,
    InvalidBBox,
    SchemaError,
    dump_trace,
    load_traces,
    normalize_bbox,
    trace_from_dict,
    trace_to_dict,
)


def test_full_screen_rect_normalizes_to_unit_box():
    assert normalize_bbox((0, 0, 1080, 1920), (1080, 1920)) == BBox(0, 0, 1, 1)


def test_quarter_rect():
    assert normalize_bbox((270, 480, 810, 960), (1080, 1920)) == BBox(0.25, 0.25, 0.75, 0.5)


@pytest.mark.parametrize("raw", [(100, 100, 90, 200), (100, 100, 100, 200), (0, 50, 10, 50)])
def test_degenerate_rect_rejected(raw):
    with pytest.raises(InvalidBBox):
        normalize_bbox(raw, (1080, 1920))


def test_rect_past_screen_edge_rejected():
    with pytest.raises(InvalidBBox):
        normalize_bbox((1000, 0, 1200, 10), (1080, 1920))


def test_float_noise_at_edge_is_clamped():
    b = normalize_bbox((0, 0, 1080 * (1 + 1e-12), 1920), (1080, 1920))
    assert b.x2 == 1.0


@given(
    x1=st.integers(0, 1000), y1=st.integers(0, 1800),
    w=st.integers(1, 80), h=st.integers(1, 120), k=st.integers(1, 5),
)
def test_normalization_is_scale_invariant(x1, y1, w, h, k):
    dims = (1080, 1920)
    a = normalize_bbox((x1, y1, x1 + w, y1 + h), dims)
    b = normalize_bbox((k * x1, k * y1, k * (x1 + w), k * (y1 + h)), (k * dims[0], k * dims[1]))
    assert a.as_list() == pytest.approx(b.as_list(), abs=1e-12)
    assert 0 <= a.x1 < a.x2 <= 1 and 0 <= a.y1 < a.y2 <= 1


def test_bbox_geometry_helpers():
    b = BBox(0.2, 0.4, 0.6, 0.5)
    assert b.midpoint == pytest.approx((0.4, 0.45))
    assert b.area == pytest.approx(0.04)
    assert b.contains(0.2, 0.5) and not b.contains(0.61, 0.45)
    assert BBox(0.123456, 0, 1, 1).rounded() == (0.1235, 0.0, 1.0, 1.0)


def test_empty_directory_yields_nothing(tmp_path):
    assert list(load_traces(tmp_path)) == []


def test_single_fixture_trace_has_three_states():
    (trace,) = load_traces(CORPUS / "school_t01.trace.json")
    assert trace.trace_id == "school_t01"
    assert len(trace.states) == 3
    assert [e.node_index for e in trace.states[1].elements] == [0, 1, 2]


def test_corpus_is_sorted_by_trace_id(corpus_traces):
    ids = [t.trace_id for t in corpus_traces]
    assert ids == sorted(ids) and len(ids) == 10


def _doc():
    return json.loads((CORPUS / "school_t01.trace.json").read_text())


def test_degenerate_bbox_record_names_the_element(tmp_path):
    doc = _doc()
    doc["states"][0]["elements"][1]["bbox_raw"] = [0.5, 0.5, 0.2, 0.9]
    (tmp_path / "bad.trace.json").write_text(json.dumps(doc))
    with pytest.raises(SchemaError) as err:
        list(load_traces(tmp_path))
    assert "school_t01" in str(err.value) and "state[0] element[1]" in str(err.value)
    assert "bad.trace.json" in str(err.value)


@pytest.mark.parametrize(
    "mutate",
    [
        lambda d: d.pop("app_id"),
        lambda d: d["states"][0].update(image_dims=[1080]),
        lambda d: d["states"][0]["elements"][0].update(visible="yes"),
        lambda d: d["states"][0]["action"].update(kind="pinch"),
        lambda d: d["states"][0]["action"].update(point_raw=[5000, 10]),
        lambda d: d.update(states=[]),
    ],
    ids=["missing_app", "short_dims", "visible_type", "bad_kind", "tap_outside_scale", "no_states"],
)
def test_schema_violations(mutate):
    doc = _doc()
    mutate(doc)
    with pytest.raises(SchemaError):
        trace_from_dict(doc)


def test_jsonl_file_errors_report_line(tmp_path):
    good = json.dumps(_doc())
    bad = copy.deepcopy(_doc())
    bad["trace_id"] = "other"
    bad["states"][0].pop("image_id")
    (tmp_path / "many.trace.json").write_text(good + "\n" + json.dumps(bad) + "\n")
    with pytest.raises(SchemaError, match="line 2"):
        list(load_traces(tmp_path))


def test_duplicate_trace_ids_rejected(tmp_path):
    line = json.dumps(_doc())
    (tmp_path / "dup.trace.json").write_text(line + "\n" + line + "\n")
    with pytest.raises(SchemaError, match="duplicate"):
        list(load_traces(tmp_path))


def test_round_trip(tmp_path, corpus_traces):
    for trace in corpus_traces:
        dump_trace(trace, tmp_path / f"{trace.trace_id}.trace.json")
        assert trace_from_dict(trace_to_dict(trace)) == trace
    assert list(load_traces(tmp_path)) == corpus_traces


def test_unknown_format_rejected(tmp_path):
    with pytest.raises(ValueError):
        list(load_traces(tmp_path, format="rico"))
