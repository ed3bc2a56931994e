"""Screen-caption prompts: element selection, rendering, dedup and fan-out."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from ._parallel import pmap
from .elements import (
    FilterConfig,
    element_bbox,
    load_screenshot,
    passes_text_rules,
    passes_visual_rules,
    resolve_image_path,
)
from .trace import ScreenState, UITrace

PROMPT_TEMPLATE = (
    "If an {app} app screen consisted of the following elements: {elements}, "
    "how would you summarize the screen? Provide a single sentence description that "
    "focuses on the functionality and category of the app given these elements. "
    "Do not repeat the app name and do not include too many specifics."
)
ELEMENT_SEPARATOR = " | "
PROMPT_FIELDS = ("text", "content_description")


class EmptyElements(ValueError):
    pass


@dataclass(frozen=True)
class ScreenPrompt:
    app_id: str
    prompt_key: str
    elements: tuple[str, ...]
    prompt_text: str

    def to_record(self) -> dict:
        return {
            "prompt_key": self.prompt_key,
            "app_id": self.app_id,
            "elements": list(self.elements),
            "prompt_text": self.prompt_text,
        }

    @classmethod
    def from_record(cls, rec: Mapping) -> "ScreenPrompt":
        return cls(rec["app_id"], rec["prompt_key"], tuple(rec["elements"]), rec["prompt_text"])


@dataclass(frozen=True)
class ScreenCaptionSample:
    app_id: str
    image_path: str
    caption: str
    prompt_key: str

    def to_record(self) -> dict:
        return {
            "app_id": self.app_id,
            "image_path": self.image_path,
            "caption": self.caption,
            "prompt_key": self.prompt_key,
        }


def screen_elements_for_prompt(
    state: ScreenState,
    cfg: FilterConfig | None = None,
    surviving: set[str] | None = None,
    pixels: np.ndarray | None = None,
) -> list[str]:
    """Text and content-description strings usable in a caption prompt.

    Resource ids are left out and casing is kept. The element-caption text
    and visual rules still apply (judged on the lowercased string). When
    ``surviving`` is given, strings must also be in that frequency-filtered set.
    """
    cfg = cfg or FilterConfig()
    out = []
    for element in state.elements:
        values = [getattr(element, f).strip() for f in PROMPT_FIELDS if getattr(element, f) is not None]
        values = [v for v in values if passes_text_rules(v.lower(), cfg)]
        if surviving is not None:
            values = [v for v in values if v.lower() in surviving]
        if not values:
            continue
        if pixels is None and cfg.color_check and element.visible and element_bbox(element, state)[0] is not None:
            pixels = load_screenshot(resolve_image_path(state.image_path, cfg.image_root))
        if passes_visual_rules(element, state, cfg, pixels):
            out.extend(values)
    return out


def prompt_key(app_id: str, elements: Sequence[str]) -> str:
    """128-bit hex digest of the app id and the ordered element strings."""
    payload = json.dumps([app_id, list(elements)], ensure_ascii=False, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:32]


def render_prompt(app_id: str, elements: Sequence[str]) -> ScreenPrompt:
    if not elements:
        raise EmptyElements(f"no elements to prompt with for app {app_id!r}")
    text = PROMPT_TEMPLATE.format(app=app_id, elements=ELEMENT_SEPARATOR.join(elements))
    return ScreenPrompt(app_id, prompt_key(app_id, elements), tuple(elements), text)


def dedup_prompts(
    prompts: Iterable[tuple[str, ScreenPrompt]],
) -> tuple[list[ScreenPrompt], dict[str, list[str]]]:
    """Collapse ``(image_path, prompt)`` pairs to one prompt per key.

    Returns the unique prompts in first-seen order and the fan-out map from
    prompt key to every image path that produced it.
    """
    unique: dict[str, ScreenPrompt] = {}
    fanout: dict[str, list[str]] = {}
    for image_path, prompt in prompts:
        if prompt.prompt_key not in unique:
            unique[prompt.prompt_key] = prompt
            fanout[prompt.prompt_key] = []
        fanout[prompt.prompt_key].append(image_path)
    return list(unique.values()), fanout


def attach_captions(
    fanout: Mapping[str, Sequence[str]],
    captions: Mapping[str, str],
    app_ids: Mapping[str, str],
) -> tuple[list[ScreenCaptionSample], list[str]]:
    """Fan each fetched caption back out to its screens.

    Returns the samples and the prompt keys that had no caption.
    """
    samples, failed = [], []
    for key, image_paths in fanout.items():
        caption = captions.get(key)
        if caption is None:
            failed.append(key)
            continue
        samples.extend(ScreenCaptionSample(app_ids[key], p, caption, key) for p in image_paths)
    return samples, failed


@dataclass
class PromptForgeResult:
    prompts: list[ScreenPrompt]
    fanout: dict[str, list[str]]
    skipped: list[str] = field(default_factory=list)
    screens: int = 0


def forge_prompts(
    traces: Iterable[UITrace],
    cfg: FilterConfig | None = None,
    jobs: int = 1,
    surviving: Mapping[str, set[str]] | None = None,
) -> PromptForgeResult:
    cfg = cfg or FilterConfig()

    def per_trace(trace: UITrace) -> list[tuple[str, ScreenPrompt | None]]:
        allowed = None if surviving is None else surviving.get(trace.source_dataset, set())
        rows = []
        for state in trace.states:
            elements = screen_elements_for_prompt(state, cfg, allowed)
            rows.append((state.image_path, render_prompt(trace.app_id, elements) if elements else None))
        return rows

    rows = [r for part in pmap(per_trace, traces, jobs) for r in part]
    skipped = [path for path, p in rows if p is None]
    prompts, fanout = dedup_prompts((path, p) for path, p in rows if p is not None)
    return PromptForgeResult(prompts, fanout, skipped, len(rows))
