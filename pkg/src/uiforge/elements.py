"""Element captions and element-list captions from view-hierarchy text.

Each element contributes up to three caption candidates (text, content
description, resource id). A candidate survives when it passes the text
rules, its element passes the visual rules, and the caption occurs at least
``min_frequency`` times among valid extractions of its source dataset.
Surviving (app, caption, bbox) triplets are then deduplicated.
"""

from __future__ import annotations

import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from enum import Enum
from importlib import resources
from pathlib import Path
from typing import Iterable, Iterator, Mapping

import numpy as np
from PIL import Image

from ._parallel import pmap
from .trace import BBox, InvalidBBox, ScreenState, UIElement, UITrace, normalize_bbox

FIELDS = ("text", "content_description", "resource_id")
_FIELD_ORDER = {f: i for i, f in enumerate(FIELDS)}


def _load_generic_words() -> frozenset[str]:
    raw = resources.files("uiforge").joinpath("data/generic_words.txt").read_text(encoding="utf-8")
    return frozenset(w.strip() for w in raw.splitlines() if w.strip() and not w.startswith("#"))


GENERIC_WORDS = _load_generic_words()

_SCHEME_RE = re.compile(r"[a-z][a-z0-9+.\-]*://")
_URL_MARKERS = ("www.", ".com", ".org", ".net")
_WORD_RE = re.compile(r"[a-z]+")


class RejectReason(str, Enum):
    TOO_SHORT = "too_short"
    URL = "url"
    NON_ALPHABETIC = "non_alphabetic"
    ALL_GENERIC = "all_generic"
    INVISIBLE = "invisible"
    INVALID_BBOX = "invalid_bbox"
    OUT_OF_BOUNDS = "out_of_bounds"
    COLOR_BLOCK = "color_block"
    LOW_FREQUENCY = "low_frequency"


class ImageDecodeError(OSError):
    def __init__(self, image_path: str | Path, cause: Exception):
        self.image_path = str(image_path)
        super().__init__(f"cannot decode screenshot {self.image_path}: {cause}")


@dataclass(frozen=True)
class Verdict:
    ok: bool
    reason: RejectReason | None = None

    def __bool__(self) -> bool:
        return self.ok


PASS = Verdict(True)


@dataclass
class FilterConfig:
    min_frequency: int = 5
    generic_words: frozenset[str] = GENERIC_WORDS
    min_length: int = 2
    color_check: bool = True
    image_root: str | None = None

    def __post_init__(self) -> None:
        if self.min_frequency < 1:
            raise ValueError("min_frequency must be >= 1")
        if not self.generic_words:
            raise ValueError("generic_words must be non-empty")


@dataclass(frozen=True)
class ElementCaptionSample:
    app_id: str
    image_path: str
    bbox: BBox
    caption: str

    def key(self) -> tuple:
        return (self.app_id, self.caption, self.bbox.rounded(4))

    def to_record(self) -> dict:
        return {
            "app_id": self.app_id,
            "image_path": self.image_path,
            "bbox": list(self.bbox.rounded(4)),
            "caption": self.caption,
        }


@dataclass(frozen=True)
class ElementListSample:
    app_id: str
    image_path: str
    caption: str

    def to_record(self) -> dict:
        return {"app_id": self.app_id, "image_path": self.image_path, "caption": self.caption}


@dataclass(frozen=True)
class Extraction:
    """One caption candidate that passed the text and visual rules."""

    trace_id: str
    state_index: int
    source_dataset: str
    app_id: str
    image_path: str
    node_index: int
    field: str
    caption: str
    bbox: BBox


@dataclass(frozen=True)
class Reject:
    trace_id: str
    state_index: int
    image_path: str
    node_index: int
    field: str
    caption: str
    reason: RejectReason

    def sort_key(self) -> tuple:
        return (self.trace_id, self.state_index, self.node_index, _FIELD_ORDER[self.field])

    def to_record(self) -> dict:
        return {
            "trace_id": self.trace_id,
            "state_index": self.state_index,
            "image_path": self.image_path,
            "node_index": self.node_index,
            "field": self.field,
            "caption": self.caption,
            "reason": self.reason.value,
        }


# --- per-candidate rules ---------------------------------------------------


def candidate_texts(element: UIElement) -> list[tuple[str, str]]:
    out = []
    for name in FIELDS:
        value = getattr(element, name)
        if value is not None:
            out.append((name, value.strip().lower()))
    return out


def is_url(caption: str) -> bool:
    if _SCHEME_RE.search(caption):
        return True
    return any(marker in tok for tok in caption.split() for marker in _URL_MARKERS)


def passes_text_rules(caption: str, cfg: FilterConfig | None = None) -> Verdict:
    """Check a lowercased caption against the length/URL/alphabet/generic rules."""
    cfg = cfg or FilterConfig()
    if len(caption) < cfg.min_length:
        return Verdict(False, RejectReason.TOO_SHORT)
    if is_url(caption):
        return Verdict(False, RejectReason.URL)
    tokens = caption.split()
    if not tokens or not all(_WORD_RE.fullmatch(t) for t in tokens):
        return Verdict(False, RejectReason.NON_ALPHABETIC)
    if all(t in cfg.generic_words for t in tokens):
        return Verdict(False, RejectReason.ALL_GENERIC)
    return PASS


def resolve_image_path(image_path: str, image_root: str | Path | None) -> Path:
    p = Path(image_path)
    if p.is_absolute() or image_root is None:
        return p
    return Path(image_root) / p


def load_screenshot(path: str | Path) -> np.ndarray:
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGBA"))
    except (OSError, ValueError) as exc:
        raise ImageDecodeError(path, exc) from exc


def is_color_block(pixels: np.ndarray, bbox: BBox) -> bool:
    """True when the screenshot crop under ``bbox`` holds a single pixel value."""
    h, w = pixels.shape[:2]
    left = min(int(np.floor(bbox.x1 * w)), w - 1)
    top = min(int(np.floor(bbox.y1 * h)), h - 1)
    right = max(int(np.ceil(bbox.x2 * w)), left + 1)
    bottom = max(int(np.ceil(bbox.y2 * h)), top + 1)
    crop = pixels[top:bottom, left:right]
    return bool((crop == crop[0, 0]).all())


def element_bbox(element: UIElement, state: ScreenState) -> tuple[BBox | None, RejectReason | None]:
    x1, y1, x2, y2 = element.bbox_raw
    if x1 >= x2 or y1 >= y2:
        return None, RejectReason.INVALID_BBOX
    try:
        return normalize_bbox(element.bbox_raw, state.image_dims), None
    except InvalidBBox:
        return None, RejectReason.OUT_OF_BOUNDS


def passes_visual_rules(
    element: UIElement,
    state: ScreenState,
    cfg: FilterConfig | None = None,
    pixels: np.ndarray | None = None,
) -> Verdict:
    """Visibility, in-bounds box, and (when enabled) not a single-color crop.

    ``pixels`` is the decoded screenshot; when omitted and the color check is
    on, the screenshot is read from ``state.image_path``.
    """
    cfg = cfg or FilterConfig()
    if not element.visible:
        return Verdict(False, RejectReason.INVISIBLE)
    bbox, reason = element_bbox(element, state)
    if bbox is None:
        return Verdict(False, reason)
    if cfg.color_check:
        if pixels is None:
            pixels = load_screenshot(resolve_image_path(state.image_path, cfg.image_root))
        if is_color_block(pixels, bbox):
            return Verdict(False, RejectReason.COLOR_BLOCK)
    return PASS


# --- corpus-level steps ----------------------------------------------------


def count_captions(samples: Iterable[tuple[str, str]]) -> dict[str, Counter]:
    counts: dict[str, Counter] = defaultdict(Counter)
    for dataset, caption in samples:
        counts[dataset][caption] += 1
    return dict(counts)


def merge_counts(parts: Iterable[Mapping[str, Counter]]) -> dict[str, Counter]:
    total: dict[str, Counter] = defaultdict(Counter)
    for part in parts:
        for dataset, counter in part.items():
            total[dataset].update(counter)
    return dict(total)


def frequency_filter(
    samples: Iterable[tuple[str, str]] | Mapping[str, Counter], min_frequency: int = 5
) -> dict[str, set[str]]:
    """Captions occurring at least ``min_frequency`` times, per source dataset."""
    counts = samples if isinstance(samples, Mapping) else count_captions(samples)
    return {
        dataset: {c for c, n in counter.items() if n >= min_frequency}
        for dataset, counter in counts.items()
    }


def dedup_samples(samples: Iterable[ElementCaptionSample]) -> list[ElementCaptionSample]:
    first: dict[tuple, ElementCaptionSample] = {}
    for s in samples:
        first.setdefault(s.key(), s)
    return [first[k] for k in sorted(first)]


def build_element_lists(
    extractions: Iterable[Extraction], surviving: Mapping[str, set[str]]
) -> Iterator[ElementListSample]:
    """Join each screen's surviving captions with ", " in hierarchy order.

    ``extractions`` must already be grouped by screen, in scan order.
    """
    current: tuple[str, int] | None = None
    app_id = image_path = ""
    parts: list[str] = []
    for ex in extractions:
        screen = (ex.trace_id, ex.state_index)
        if screen != current:
            if parts:
                yield ElementListSample(app_id, image_path, ", ".join(parts))
            current, app_id, image_path, parts = screen, ex.app_id, ex.image_path, []
        if ex.caption in surviving.get(ex.source_dataset, ()):
            parts.append(ex.caption)
    if parts:
        yield ElementListSample(app_id, image_path, ", ".join(parts))


@dataclass
class TraceExtraction:
    extractions: list[Extraction] = field(default_factory=list)
    rejects: list[Reject] = field(default_factory=list)


def extract_trace(trace: UITrace, cfg: FilterConfig) -> TraceExtraction:
    """Apply the per-candidate rules to every element of one trace."""
    out = TraceExtraction()
    for si, state in enumerate(trace.states):
        pixels = None
        for element in state.elements:
            candidates = candidate_texts(element)
            if not candidates:
                continue
            visual: Verdict | None = None
            for name, caption in candidates:
                verdict = passes_text_rules(caption, cfg)
                if verdict:
                    if visual is None:
                        if cfg.color_check and pixels is None and element.visible:
                            bbox, _ = element_bbox(element, state)
                            if bbox is not None:
                                pixels = load_screenshot(resolve_image_path(state.image_path, cfg.image_root))
                        visual = passes_visual_rules(element, state, cfg, pixels)
                    verdict = visual
                if not verdict:
                    out.rejects.append(
                        Reject(trace.trace_id, si, state.image_path, element.node_index, name, caption, verdict.reason)
                    )
                    continue
                out.extractions.append(
                    Extraction(
                        trace.trace_id,
                        si,
                        trace.source_dataset,
                        trace.app_id,
                        state.image_path,
                        element.node_index,
                        name,
                        caption,
                        normalize_bbox(element.bbox_raw, state.image_dims),
                    )
                )
    return out


@dataclass
class ElementForgeResult:
    captions: list[ElementCaptionSample]
    lists: list[ElementListSample]
    rejects: list[Reject]
    counts: dict[str, Counter]
    surviving: dict[str, set[str]]
    drop_counts: dict[str, int]


def forge_elements(traces: Iterable[UITrace], cfg: FilterConfig | None = None, jobs: int = 1) -> ElementForgeResult:
    """Run both phases (count, then filter and emit) over a trace corpus."""
    cfg = cfg or FilterConfig()
    parts = pmap(lambda t: extract_trace(t, cfg), traces, jobs)
    extractions = [ex for p in parts for ex in p.extractions]
    rejects = [r for p in parts for r in p.rejects]

    counts = merge_counts(count_captions((ex.source_dataset, ex.caption) for ex in p.extractions) for p in parts)
    surviving = frequency_filter(counts, cfg.min_frequency)

    kept = []
    for ex in extractions:
        if ex.caption in surviving.get(ex.source_dataset, ()):
            kept.append(ElementCaptionSample(ex.app_id, ex.image_path, ex.bbox, ex.caption))
        else:
            rejects.append(
                Reject(ex.trace_id, ex.state_index, ex.image_path, ex.node_index, ex.field, ex.caption,
                       RejectReason.LOW_FREQUENCY)
            )
    rejects.sort(key=Reject.sort_key)
    captions = dedup_samples(kept)
    lists = list(build_element_lists(extractions, surviving))

    drops = Counter(r.reason.value for r in rejects)
    drop_counts = {reason.value: drops.get(reason.value, 0) for reason in RejectReason}
    drop_counts["duplicate"] = len(kept) - len(captions)
    return ElementForgeResult(captions, lists, rejects, counts, surviving, drop_counts)
