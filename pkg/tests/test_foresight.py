from __future__ import annotations

import pytest
from hypothesis import given, strategies as st

from oracles import brute_force_match

from uiforge.foresight import (
    QUESTION_RE,
    Candidate,
    MatchConfig,
    MatchMethod,
    build_foresight_set,
    dilate,
    match_action_to_bbox,
    render_foresight_question,
    resolve_overlaps,
    state_pair_filter,
    synthetic_square,
)
from uiforge.trace import ActionKind, ActionRecord, BBox, ScreenState, UIElement, UITrace

DIMS = (1000, 1000)


def state(boxes, point=None, kind=ActionKind.TAP, image_id="s", texts=None):
    texts = texts or [None] * len(boxes)
    elements = tuple(UIElement(text=t, bbox_raw=b, node_index=i) for i, (b, t) in enumerate(zip(boxes, texts)))
    action = ActionRecord(kind, point, DIMS) if point is not None else None
    return ScreenState(image_id, f"{image_id}.png", DIMS, elements, action)


def test_point_inside_box_is_exact():
    m = match_action_to_bbox(state([(400, 400, 600, 600)], (500, 500)))
    assert m.method is MatchMethod.EXACT and m.bbox == BBox(0.4, 0.4, 0.6, 0.6)


def test_half_percent_away_needs_one_step():
    m = match_action_to_bbox(state([(400, 400, 600, 600)], (605, 500)))
    assert m.method is MatchMethod.ENLARGED and m.step_count == 1
    assert m.bbox.as_list() == pytest.approx([0.39, 0.39, 0.61, 0.61])


def test_far_point_gets_65px_square():
    m = match_action_to_bbox(state([(0, 0, 100, 100)], (500, 500)))
    assert m.method is MatchMethod.SYNTHETIC_SQUARE
    assert m.bbox.as_list() == pytest.approx([0.4675, 0.4675, 0.5325, 0.5325])


def test_square_clipped_at_corner():
    assert synthetic_square(0.0, 1.0, DIMS).as_list() == pytest.approx([0.0, 0.9675, 0.0325, 1.0])


def test_banner_tap_excluded():
    m = match_action_to_bbox(state([(0, 0, 1000, 100)], (500, 20)))
    assert m.method is MatchMethod.EXCLUDED and m.reason == "banner_back"


def test_dilate_clips_to_unit_square():
    assert dilate(BBox(0.0, 0.5, 0.995, 0.6), 0.01, 0.01) == BBox(0.0, 0.49, 1.0, 0.61)


def _c(dist, area, node=0):
    return Candidate(BBox(0, 0, 1, 1), dist, area, node)


def test_single_candidate():
    c = _c(0.3, 0.5)
    assert resolve_overlaps([c]) is c


def test_nearest_midpoint_wins():
    assert resolve_overlaps([_c(0.10, 0.01, 0), _c(0.02, 0.5, 1)]).node_index == 1


def test_equal_distance_smaller_area_wins():
    assert resolve_overlaps([_c(0.05, 0.04, 0), _c(0.05, 0.01, 1)]).node_index == 1


def test_full_tie_lowest_node_wins():
    assert resolve_overlaps([_c(0.05, 0.01, 3), _c(0.05 + 1e-13, 0.01, 1)]).node_index == 1


def test_no_candidates():
    with pytest.raises(ValueError):
        resolve_overlaps([])


@given(
    px=st.integers(0, 1000), py=st.integers(31, 1000),
    boxes=st.lists(
        st.tuples(st.integers(0, 900), st.integers(0, 900), st.integers(5, 300), st.integers(5, 300)),
        max_size=5,
    ),
)
def test_matches_oracle_on_random_layouts(px, py, boxes):
    raw = [(x, y, min(1000, x + w), min(1000, y + h)) for x, y, w, h in boxes]
    got = match_action_to_bbox(state(raw, (px, py)))
    method, step, node, bbox = brute_force_match((px, py), DIMS, DIMS, raw)
    assert got.method.value == method
    if method in ("exact", "enlarged"):
        assert (got.step_count, got.node_index) == (step, node)
    assert got.bbox.as_list() == pytest.approx(list(bbox), abs=1e-12)


# --- pair filter -----------------------------------------------------------------


def test_last_state_is_terminal():
    assert state_pair_filter(state([], (500, 500)), None)[0] == "terminal"


def test_swipe_is_non_tap():
    assert state_pair_filter(state([], (500, 500), ActionKind.SWIPE), state([], image_id="n"))[0] == "non_tap"


def test_same_image_id_is_identical():
    assert state_pair_filter(state([], (500, 500)), state([]))[0] == "identical"


def test_same_text_is_identical():
    a = state([(0, 0, 10, 10)], (500, 500), image_id="a", texts=["Home"])
    b = state([(0, 0, 10, 10)], image_id="b", texts=["Home"])
    assert state_pair_filter(a, b)[0] == "identical"


def test_distinct_pair_kept():
    a = state([(400, 400, 600, 600)], (500, 500), image_id="a")
    reason, match = state_pair_filter(a, state([], image_id="b"))
    assert reason is None and match.method is MatchMethod.EXACT


# --- question rendering ------------------------------------------------------------


def test_full_screen_question():
    q = render_foresight_question(BBox(0, 0, 1, 1))
    assert "found at [0.0000, 0.0000, 1.0000, 1.0000] is" in q


def test_question_coordinate_order():
    q = render_foresight_question(BBox(0.25, 0.25, 0.75, 0.5))
    assert QUESTION_RE.fullmatch(q).groups() == ("0.2500", "0.2500", "0.7500", "0.5000")


# --- set construction ----------------------------------------------------------------


def _trace(n=3):
    states = tuple(
        state([(400, 400, 600, 600)], (500, 500) if i < n - 1 else None, image_id=f"t{i}") for i in range(n)
    )
    return UITrace("t", "app", "motif", states)


def test_three_captioned_states_give_two_samples():
    res = build_foresight_set([_trace()], {f"t{i}.png": f"caption {i}" for i in range(3)})
    assert [s.caption for s in res.samples] == ["caption 1", "caption 2"]
    assert res.samples[0].image_path == "t0.png" and res.samples[0].next_image_path == "t1.png"
    assert res.drop_counts["terminal"] == 1


def test_missing_next_caption_dropped():
    res = build_foresight_set([_trace(2)], {"t0.png": "c0"})
    assert res.samples == [] and res.drop_counts["missing_caption"] == 1


def test_conservation_for_every_step_limit(corpus_traces):
    captions = {s.image_path: "x" for t in corpus_traces for s in t.states}
    for steps in range(6):
        res = build_foresight_set(corpus_traces, captions, MatchConfig(enlarge_steps=steps))
        assert sum(res.drop_counts.values()) + len(res.samples) == res.examined
        assert sum(res.match_counts.values()) == len(res.samples)


def test_bad_config():
    with pytest.raises(ValueError):
        MatchConfig(enlarge_pct=-0.1)


@pytest.mark.parametrize("k", range(1, 6))
def test_tap_exactly_on_dilated_edge(k):
    bad = []
    for x2 in range(100, 950):
        raw = [(50, 400, x2, 600)]
        point = (x2 + 10 * k, 500)
        if point[0] > 1000:
            continue
        m = match_action_to_bbox(state(raw, point))
        if (m.method, m.step_count) != (MatchMethod.ENLARGED, k):
            bad.append(x2)
    assert bad == []
