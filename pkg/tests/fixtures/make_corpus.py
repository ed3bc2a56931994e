"""Regenerate the fixture corpus under tests/fixtures/corpus/.

    python tests/fixtures/make_corpus.py

Ten traces over three apps and two source datasets. View hierarchies use a
1080x1920 scale; screenshots are 108x192 PNGs (a two-color checkerboard, so
every crop is multicolored unless painted over as a color block).
The golden files in tests/fixtures/golden/ were written by hand against the
element table below, not produced by running the pipeline.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from uiforge.elements import FilterConfig
from uiforge.screens import render_prompt, screen_elements_for_prompt
from uiforge.trace import ActionKind, ActionRecord, ScreenState, UIElement, UITrace, dump_trace

ROOT = Path(__file__).parent / "corpus"
DIMS = (1080, 1920)
PNG = (108, 192)

S = (100, 400, 980, 560)
P1 = (100, 600, 980, 760)
P2 = (100, 1000, 980, 1160)
T = (100, 800, 980, 960)
Q1 = (100, 200, 300, 300)
Q2 = (100, 1300, 980, 1400)
OOB = (1000, 300, 1200, 380)
SAVE = (700, 1700, 1000, 1820)
OPT = (900, 80, 1060, 200)
CART = (600, 1650, 1060, 1860)
HEAD = (100, 200, 980, 300)


def el(box, text=None, cd=None, rid=None, visible=True):
    return dict(text=text, content_description=cd, resource_id=rid, bbox_raw=box, visible=visible)


def tap(x, y, scale=DIMS):
    return ActionRecord(ActionKind.TAP, (x, y), scale)


SWIPE = ActionRecord(ActionKind.SWIPE, (540, 1500), DIMS)

# (trace_id, app_id, dataset, [(image_id or None, elements, action, color_block_boxes)])
TRACES = [
    ("school_t01", "com.example.school", "motif", [
        (None, [el(S, "Student"), el(P1, "Parent")], tap(720, 640, (1440, 2560)), []),
        (None, [el(P1, "Parent"), el(Q1, "X"), el(Q2, "http://x.com")], SWIPE, []),
        (None, [el(T, "Teacher")], None, []),
    ]),
    ("school_t02", "com.example.school", "motif", [
        (None, [el(S, "Student"), el(Q2, "Menu Button")], tap(986, 480), []),
        (None, [el(S, "Student"), el(T, "Teacher"), el(P2, "Student", visible=False)], tap(540, 1500), []),
        (None, [el(P1, "Parent")], None, []),
    ]),
    ("school_t03", "com.example.school", "motif", [
        (None, [el(S, "Student"), el(P1, "Parent"), el(OOB, "Student")], tap(540, 30), []),
        (None, [el(P2, "Parent"), el(Q2, "Student")], tap(540, 1080), [Q2]),
        (None, [el(T, "Teacher")], None, []),
    ]),
    ("school_t04", "com.example.school", "motif", [
        ("school_t04_same", [el(T, "Teacher"), el(Q2, "Item 3")], tap(540, 880), []),
        ("school_t04_same", [el(P1, "Parent")], tap(540, 680), []),
        (None, [el(P1, "Parent"), el(Q2)], None, []),
    ]),
    ("shop_t01", "com.example.shop", "motif", [
        (None, [el(S, "Student"), el(SAVE, "Save Button", rid="save_btn"), el(OPT, cd="Options")], tap(850, 1760), []),
        (None, [el(SAVE, "Save Button"), el(OPT, cd="Options")], tap(980, 140), []),
        (None, [el(OPT, cd="Options"), el(Q2, rid="share_button")], None, []),
    ]),
    ("shop_t02", "com.example.shop", "motif", [
        (None, [el(SAVE, "Save Button"), el(OPT, cd="Options")], tap(850, 1760), []),
        (None, [el(SAVE, "Save Button"), el(Q1, "www.example.org")], None, []),
        (None, [el(OPT, cd="Options")], None, []),
    ]),
    ("shop_t03", "com.example.shop", "motif", [
        (None, [el(CART, "Cart Total"), el(SAVE, "Save Button"), el(OPT, cd="Options")], tap(850, 1760), []),
        (None, [el(SAVE, "Save Button")], tap(540, 1300), []),
        (None, [el(OPT, cd="Options")], None, []),
    ]),
    ("news_t01", "com.example.news", "aitw", [
        (None, [el(T, "Teacher"), el(HEAD, "Headlines")], tap(540, 880), []),
        (None, [el(T, "Teacher")], tap(540, 880), []),
        (None, [el(T, "Teacher"), el(HEAD, "Headlines")], None, []),
    ]),
    ("news_t02", "com.example.news", "aitw", [
        (None, [el(T, "Teacher")], tap(75, 880), []),
        (None, [el(T, "Teacher"), el(Q1, "Weather")], tap(540, 880), []),
        (None, [el(T, "Teacher")], None, []),
    ]),
    ("news_t03", "com.example.news", "aitw", [
        (None, [el(HEAD, "Headlines")], None, []),
    ]),
]

# prompt left out of the caption fixture to exercise provider failure handling
UNCAPTIONED = ("com.example.shop", ["Options"])


def screenshot(blocks) -> Image.Image:
    w, h = PNG
    yy, xx = np.mgrid[0:h, 0:w]
    checker = ((xx // 2 + yy // 2) % 2).astype(np.uint8)
    px = np.where(checker[..., None] == 1, np.array([40, 90, 200], np.uint8), np.array([235, 235, 235], np.uint8))
    sx, sy = w / DIMS[0], h / DIMS[1]
    for x1, y1, x2, y2 in blocks:
        px[max(0, int(y1 * sy) - 1) : int(y2 * sy) + 2, max(0, int(x1 * sx) - 1) : int(x2 * sx) + 2] = 255
    return Image.fromarray(px.astype(np.uint8), "RGB")


def main() -> None:
    (ROOT / "screens").mkdir(parents=True, exist_ok=True)
    captions = {}
    for trace_id, app_id, dataset, states in TRACES:
        built = []
        for i, (image_id, elements, action, blocks) in enumerate(states):
            name = f"{trace_id}_{i}"
            screenshot(blocks).save(ROOT / "screens" / f"{name}.png", optimize=True)
            built.append(
                ScreenState(
                    image_id or name,
                    f"screens/{name}.png",
                    DIMS,
                    tuple(UIElement(node_index=k, **e) for k, e in enumerate(elements)),
                    action,
                )
            )
        trace = UITrace(trace_id, app_id, dataset, tuple(built))
        dump_trace(trace, ROOT / f"{trace_id}.trace.json")
        for state in trace.states:
            elements = screen_elements_for_prompt(state, FilterConfig(image_root=str(ROOT)))
            if elements and (app_id, elements) != UNCAPTIONED:
                p = render_prompt(app_id, elements)
                captions[p.prompt_key] = f"A {app_id.split('.')[-1]} screen listing {', '.join(elements).lower()}."
    (ROOT / "caption_fixture.json").write_text(json.dumps(captions, indent=1, sort_keys=True) + "\n")


if __name__ == "__main__":
    main()
