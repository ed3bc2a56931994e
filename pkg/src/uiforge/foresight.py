"""Foresight triplets: (screen, tapped element box, next-screen caption).

Taps are matched to view-hierarchy boxes in three stages: plain containment,
then symmetric dilation of every box in fixed steps, then a synthetic square
around the tap. Taps on the top banner strip are excluded.
"""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Mapping, Sequence

from ._parallel import pmap
from .trace import BBox, InvalidBBox, ActionKind, ScreenState, UITrace, normalize_bbox

QUESTION_TEMPLATE = "What does the screen show if the UI object found at {box} is interacted with?"
QUESTION_RE = re.compile(
    r"What does the screen show if the UI object found at "
    r"\[(\d\.\d{4}), (\d\.\d{4}), (\d\.\d{4}), (\d\.\d{4})\] is interacted with\?"
)
# distances/areas closer than this compare as equal during overlap resolution
_TIE_DIGITS = 9
# taps exactly on a dilated edge must not miss it through float rounding;
# far below one pixel at any real screen size
_CONTAIN_SLACK = 1e-9

DROP_REASONS = ("terminal", "non_tap", "identical", "unmatched", "missing_caption", "banner_back")


def format_box(bbox: BBox) -> str:
    return "[" + ", ".join(f"{v:.4f}" for v in bbox.as_list()) + "]"


def render_foresight_question(bbox: BBox) -> str:
    return QUESTION_TEMPLATE.format(box=format_box(bbox))


@dataclass
class MatchConfig:
    enlarge_steps: int = 5
    enlarge_pct: float = 0.01
    banner_pct: float = 0.03
    square_px: float = 65.0

    def __post_init__(self) -> None:
        if self.enlarge_steps < 0 or self.enlarge_pct < 0:
            raise ValueError("enlargement settings must be non-negative")
        if not 0 <= self.banner_pct < 1:
            raise ValueError("banner_pct must be in [0, 1)")
        if self.square_px <= 0:
            raise ValueError("square_px must be positive")


class MatchMethod(str, Enum):
    EXACT = "exact"
    ENLARGED = "enlarged"
    SYNTHETIC_SQUARE = "synthetic_square"
    EXCLUDED = "excluded"


@dataclass(frozen=True)
class ActionMatch:
    method: MatchMethod
    bbox: BBox | None = None
    candidate_count: int = 0
    step_count: int = 0
    node_index: int | None = None
    reason: str | None = None


@dataclass(frozen=True)
class Candidate:
    bbox: BBox
    distance: float
    area: float
    node_index: int


@dataclass(frozen=True)
class ForesightSample:
    app_id: str
    image_path: str
    bbox: BBox
    question: str
    caption: str
    next_image_path: str

    def to_record(self) -> dict:
        return {
            "app_id": self.app_id,
            "image_path": self.image_path,
            "bbox": list(self.bbox.rounded(4)),
            "question": self.question,
            "caption": self.caption,
            "next_image_path": self.next_image_path,
        }


def resolve_overlaps(candidates: Sequence[Candidate]) -> Candidate:
    """Nearest midpoint wins; then smallest area; then lowest node index."""
    if not candidates:
        raise ValueError("resolve_overlaps needs at least one candidate")
    return min(
        candidates,
        key=lambda c: (round(c.distance, _TIE_DIGITS), round(c.area, _TIE_DIGITS), c.node_index),
    )


def dilate(bbox: BBox, dx: float, dy: float) -> BBox:
    return BBox(max(0.0, bbox.x1 - dx), max(0.0, bbox.y1 - dy), min(1.0, bbox.x2 + dx), min(1.0, bbox.y2 + dy))


def synthetic_square(x: float, y: float, dims: tuple[float, float], side_px: float = 65.0) -> BBox:
    """A ``side_px`` square centred on the normalized point, clipped to the screen."""
    w, h = dims
    px, py, half = x * w, y * h, side_px / 2
    return normalize_bbox((max(0.0, px - half), max(0.0, py - half), min(w, px + half), min(h, py + half)), dims)


def _element_boxes(state: ScreenState) -> list[tuple[BBox, int]]:
    out = []
    for el in state.elements:
        try:
            out.append((normalize_bbox(el.bbox_raw, state.image_dims), el.node_index))
        except InvalidBBox:
            continue
    return out


def match_action_to_bbox(state: ScreenState, cfg: MatchConfig | None = None) -> ActionMatch:
    cfg = cfg or MatchConfig()
    action = state.action
    if action is None or action.kind is not ActionKind.TAP:
        return ActionMatch(MatchMethod.EXCLUDED, reason="non_tap")
    x, y = action.normalized_point()
    if not (0.0 <= x <= 1.0 and 0.0 <= y <= 1.0):
        return ActionMatch(MatchMethod.EXCLUDED, reason="point_out_of_bounds")
    if y < cfg.banner_pct:
        return ActionMatch(MatchMethod.EXCLUDED, reason="banner_back")

    boxes = _element_boxes(state)
    for step in range(cfg.enlarge_steps + 1):
        grown = [(dilate(b, step * cfg.enlarge_pct, step * cfg.enlarge_pct) if step else b, b, idx)
                 for b, idx in boxes]
        hits = [
            Candidate(g, math.dist((x, y), b.midpoint), b.area, idx)
            for g, b, idx in grown
            if g.contains(x, y, _CONTAIN_SLACK)
        ]
        if hits:
            best = resolve_overlaps(hits)
            method = MatchMethod.EXACT if step == 0 else MatchMethod.ENLARGED
            return ActionMatch(method, best.bbox, len(hits), step, best.node_index)

    return ActionMatch(MatchMethod.SYNTHETIC_SQUARE, synthetic_square(x, y, state.image_dims, cfg.square_px))


def _text_signature(state: ScreenState) -> tuple[str, ...]:
    return tuple(el.text for el in state.elements if el.text is not None)


def state_pair_filter(
    s_t: ScreenState, s_t1: ScreenState | None, cfg: MatchConfig | None = None
) -> tuple[str | None, ActionMatch | None]:
    """Return ``(drop_reason, match)``; a ``None`` reason means keep."""
    if s_t1 is None:
        return "terminal", None
    if s_t.action is None or s_t.action.kind is not ActionKind.TAP:
        return "non_tap", None
    if s_t.image_id == s_t1.image_id:
        return "identical", None
    sig = _text_signature(s_t)
    if sig and sig == _text_signature(s_t1):
        return "identical", None
    match = match_action_to_bbox(s_t, cfg)
    if match.method is MatchMethod.EXCLUDED:
        return ("banner_back" if match.reason == "banner_back" else "unmatched"), match
    return None, match


@dataclass
class ForesightResult:
    samples: list[ForesightSample]
    drop_counts: dict[str, int]
    examined: int
    match_counts: dict[str, int]


def build_foresight_set(
    traces: Iterable[UITrace],
    screen_captions: Mapping[str, str],
    cfg: MatchConfig | None = None,
    jobs: int = 1,
) -> ForesightResult:
    """``screen_captions`` maps image path to that screen's caption."""
    cfg = cfg or MatchConfig()

    def per_trace(trace: UITrace):
        samples, drops, methods = [], Counter(), Counter()
        states = trace.states
        for i, s_t in enumerate(states):
            s_t1 = states[i + 1] if i + 1 < len(states) else None
            reason, match = state_pair_filter(s_t, s_t1, cfg)
            if reason is None:
                caption = screen_captions.get(s_t1.image_path)
                if caption is None:
                    reason = "missing_caption"
            if reason is not None:
                drops[reason] += 1
                continue
            methods[match.method.value] += 1
            samples.append(
                ForesightSample(
                    trace.app_id,
                    s_t.image_path,
                    match.bbox,
                    render_foresight_question(match.bbox),
                    caption,
                    s_t1.image_path,
                )
            )
        return samples, drops, methods, len(states)

    parts = pmap(per_trace, sorted(traces, key=lambda t: t.trace_id), jobs)
    drops, methods = Counter(), Counter()
    samples: list[ForesightSample] = []
    examined = 0
    for s, d, m, n in parts:
        samples.extend(s)
        drops.update(d)
        methods.update(m)
        examined += n
    return ForesightResult(
        samples,
        {r: drops.get(r, 0) for r in DROP_REASONS},
        examined,
        {m.value: methods.get(m.value, 0) for m in MatchMethod if m is not MatchMethod.EXCLUDED},
    )
