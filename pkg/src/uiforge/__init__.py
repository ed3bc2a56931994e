"""Forge UI pretraining corpora (element, element-list, screen and foresight
captions) from app interaction traces, and score models trained on them."""

__version__ = "0.1.0"

from .trace import (  # noqa: E402
    ActionKind,
    ActionRecord,
    BBox,
    InvalidBBox,
    SchemaError,
    ScreenState,
    UIElement,
    UITrace,
    load_traces,
    normalize_bbox,
)

__all__ = [
    "ActionKind",
    "ActionRecord",
    "BBox",
    "InvalidBBox",
    "SchemaError",
    "ScreenState",
    "UIElement",
    "UITrace",
    "load_traces",
    "normalize_bbox",
]
