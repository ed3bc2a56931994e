"""Canonical trace types and the on-disk ``*.trace.json`` format.

Coordinates follow the screenshot convention: origin top-left, x to the
right, y downward. Raw rectangles are ``[x1, y1, x2, y2]`` in the pixel scale
given by ``ScreenState.image_dims``; normalized boxes live in ``[0, 1]``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Iterator, Sequence

log = logging.getLogger(__name__)

TRACE_SUFFIX = ".trace.json"
FLOAT_SLACK = 1e-9


class InvalidBBox(ValueError):
    pass


class SchemaError(ValueError):
    """A trace file does not conform to the canonical schema."""

    def __init__(self, message: str, *, path: str | Path | None = None, where: str = ""):
        self.path = str(path) if path is not None else None
        self.where = where
        loc = ":".join(p for p in (self.path or "", where) if p)
        super().__init__(f"{loc}: {message}" if loc else message)


@dataclass(frozen=True)
class BBox:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self) -> None:
        if not (0.0 <= self.x1 < self.x2 <= 1.0 and 0.0 <= self.y1 < self.y2 <= 1.0):
            raise InvalidBBox(f"not a valid normalized box: {self.as_list()}")

    def as_list(self) -> list[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def rounded(self, ndigits: int = 4) -> tuple[float, float, float, float]:
        return tuple(round(v, ndigits) for v in self.as_list())  # type: ignore[return-value]

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return self.width * self.height

    @property
    def midpoint(self) -> tuple[float, float]:
        return ((self.x1 + self.x2) / 2, (self.y1 + self.y2) / 2)

    def contains(self, x: float, y: float, slack: float = 0.0) -> bool:
        """Closed containment: points on the border count as inside."""
        return self.x1 - slack <= x <= self.x2 + slack and self.y1 - slack <= y <= self.y2 + slack


def normalize_bbox(raw: Sequence[float], dims: Sequence[float]) -> BBox:
    """Divide a pixel rectangle by the screen dimensions.

    Overflow past ``[0, 1]`` smaller than 1e-9 is treated as float noise and
    clamped; anything larger raises ``InvalidBBox``.
    """
    width, height = dims
    if width <= 0 or height <= 0:
        raise ValueError(f"dims must be positive, got {tuple(dims)}")
    x1, y1, x2, y2 = (float(v) for v in raw)
    if not all(math.isfinite(v) for v in (x1, y1, x2, y2)):
        raise InvalidBBox(f"non-finite rectangle {list(raw)}")
    if x1 >= x2 or y1 >= y2:
        raise InvalidBBox(f"degenerate rectangle {list(raw)}")
    out = []
    for value, scale in ((x1, width), (y1, height), (x2, width), (y2, height)):
        v = value / scale
        if v < 0.0:
            if v < -FLOAT_SLACK:
                raise InvalidBBox(f"rectangle {list(raw)} outside screen {tuple(dims)}")
            v = 0.0
        elif v > 1.0:
            if v > 1.0 + FLOAT_SLACK:
                raise InvalidBBox(f"rectangle {list(raw)} outside screen {tuple(dims)}")
            v = 1.0
        out.append(v)
    return BBox(*out)


class ActionKind(str, Enum):
    TAP = "tap"
    SWIPE = "swipe"
    TEXT_EDIT = "text_edit"
    OTHER = "other"


@dataclass(frozen=True)
class ActionRecord:
    kind: ActionKind
    point_raw: tuple[float, float]
    scale_dims: tuple[float, float]

    def normalized_point(self) -> tuple[float, float]:
        return (self.point_raw[0] / self.scale_dims[0], self.point_raw[1] / self.scale_dims[1])


@dataclass(frozen=True)
class UIElement:
    text: str | None = None
    content_description: str | None = None
    resource_id: str | None = None
    bbox_raw: tuple[float, float, float, float] = (0, 0, 0, 0)
    visible: bool = True
    node_index: int = 0


@dataclass(frozen=True)
class ScreenState:
    image_id: str
    image_path: str
    image_dims: tuple[int, int]
    elements: tuple[UIElement, ...] = ()
    action: ActionRecord | None = None


@dataclass(frozen=True)
class UITrace:
    trace_id: str
    app_id: str
    source_dataset: str
    states: tuple[ScreenState, ...] = field(default_factory=tuple)


# --- serialization ---------------------------------------------------------


def trace_to_dict(trace: UITrace) -> dict[str, Any]:
    return {
        "trace_id": trace.trace_id,
        "app_id": trace.app_id,
        "source_dataset": trace.source_dataset,
        "states": [
            {
                "image_id": s.image_id,
                "image_path": s.image_path,
                "image_dims": list(s.image_dims),
                "elements": [
                    {
                        "text": e.text,
                        "content_description": e.content_description,
                        "resource_id": e.resource_id,
                        "bbox_raw": list(e.bbox_raw),
                        "visible": e.visible,
                    }
                    for e in s.elements
                ],
                "action": None
                if s.action is None
                else {
                    "kind": s.action.kind.value,
                    "point_raw": list(s.action.point_raw),
                    "scale_dims": list(s.action.scale_dims),
                },
            }
            for s in trace.states
        ],
    }


def dump_trace(trace: UITrace, path: str | Path) -> None:
    Path(path).write_text(json.dumps(trace_to_dict(trace), indent=2) + "\n", encoding="utf-8")


def _expect(obj: dict, key: str, types: type | tuple[type, ...], where: str, *, nullable: bool = False) -> Any:
    if key not in obj:
        raise SchemaError(f"missing field {key!r}", where=where)
    value = obj[key]
    if value is None and nullable:
        return None
    # bool is an int subclass; keep numeric fields strict
    if isinstance(value, bool) and bool not in (types if isinstance(types, tuple) else (types,)):
        raise SchemaError(f"field {key!r} has wrong type bool", where=where)
    if not isinstance(value, types):
        raise SchemaError(f"field {key!r} has wrong type {type(value).__name__}", where=where)
    return value


def _numbers(value: Any, n: int, key: str, where: str) -> tuple[float, ...]:
    if (
        not isinstance(value, list)
        or len(value) != n
        or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in value)
    ):
        raise SchemaError(f"field {key!r} must be a list of {n} numbers", where=where)
    return tuple(value)


def trace_from_dict(obj: Any, *, path: str | Path | None = None) -> UITrace:
    try:
        return _trace_from_dict(obj)
    except SchemaError as exc:
        if path is not None and exc.path is None:
            raise SchemaError(str(exc), path=path) from None
        raise


def _trace_from_dict(obj: Any) -> UITrace:
    if not isinstance(obj, dict):
        raise SchemaError("trace document must be a JSON object")
    trace_id = _expect(obj, "trace_id", str, "trace")
    where = f"trace {trace_id}"
    app_id = _expect(obj, "app_id", str, where)
    source = _expect(obj, "source_dataset", str, where)
    raw_states = _expect(obj, "states", list, where)
    if not raw_states:
        raise SchemaError("trace has no states", where=where)

    states = []
    for si, st in enumerate(raw_states):
        swhere = f"{where} state[{si}]"
        if not isinstance(st, dict):
            raise SchemaError("state must be an object", where=swhere)
        image_id = _expect(st, "image_id", str, swhere)
        image_path = _expect(st, "image_path", str, swhere)
        dims = _numbers(_expect(st, "image_dims", list, swhere), 2, "image_dims", swhere)
        if dims[0] <= 0 or dims[1] <= 0:
            raise SchemaError("image_dims must be positive", where=swhere)
        elements = []
        for ei, el in enumerate(_expect(st, "elements", list, swhere)):
            ewhere = f"{swhere} element[{ei}]"
            if not isinstance(el, dict):
                raise SchemaError("element must be an object", where=ewhere)
            bbox = _numbers(_expect(el, "bbox_raw", list, ewhere), 4, "bbox_raw", ewhere)
            if bbox[0] >= bbox[2] or bbox[1] >= bbox[3]:
                raise SchemaError(f"degenerate bbox_raw {list(bbox)}", where=ewhere)
            elements.append(
                UIElement(
                    text=_expect(el, "text", str, ewhere, nullable=True),
                    content_description=_expect(el, "content_description", str, ewhere, nullable=True),
                    resource_id=_expect(el, "resource_id", str, ewhere, nullable=True),
                    bbox_raw=bbox,  # type: ignore[arg-type]
                    visible=_expect(el, "visible", bool, ewhere),
                    node_index=ei,
                )
            )
        action = None
        raw_action = _expect(st, "action", dict, swhere, nullable=True)
        if raw_action is not None:
            awhere = f"{swhere} action"
            kind = _expect(raw_action, "kind", str, awhere)
            try:
                akind = ActionKind(kind)
            except ValueError:
                raise SchemaError(f"unknown action kind {kind!r}", where=awhere) from None
            point = _numbers(_expect(raw_action, "point_raw", list, awhere), 2, "point_raw", awhere)
            scale = _numbers(_expect(raw_action, "scale_dims", list, awhere), 2, "scale_dims", awhere)
            if scale[0] <= 0 or scale[1] <= 0:
                raise SchemaError("scale_dims must be positive", where=awhere)
            if akind is ActionKind.TAP and not (0 <= point[0] <= scale[0] and 0 <= point[1] <= scale[1]):
                raise SchemaError(f"tap point {list(point)} outside scale {list(scale)}", where=awhere)
            action = ActionRecord(akind, point, scale)  # type: ignore[arg-type]
        states.append(ScreenState(image_id, image_path, dims, tuple(elements), action))  # type: ignore[arg-type]
    return UITrace(trace_id, app_id, source, tuple(states))


def _trace_files(path: Path) -> list[Path]:
    if path.is_file():
        return [path]
    if not path.is_dir():
        raise FileNotFoundError(f"no such trace file or directory: {path}")
    return sorted(p for p in path.rglob(f"*{TRACE_SUFFIX}") if p.is_file())


def load_traces(path: str | Path, format: str = "canonical") -> Iterator[UITrace]:
    """Yield every trace under ``path`` in lexicographic ``trace_id`` order.

    A file may hold one JSON trace document, or JSON Lines with one trace per
    line. Malformed input raises ``SchemaError`` naming the file and line.
    """
    if format != "canonical":
        raise ValueError(f"unsupported trace format {format!r}")
    traces: list[UITrace] = []
    for file in _trace_files(Path(path)):
        traces.extend(_read_trace_file(file))
    seen: set[str] = set()
    for t in traces:
        if t.trace_id in seen:
            raise SchemaError(f"duplicate trace_id {t.trace_id!r}")
        seen.add(t.trace_id)
    traces.sort(key=lambda t: t.trace_id)
    yield from traces


def _read_trace_file(file: Path) -> list[UITrace]:
    text = file.read_text(encoding="utf-8")
    try:
        return [trace_from_dict(json.loads(text), path=file)]
    except json.JSONDecodeError:
        pass
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"invalid JSON: {exc.msg}", path=file, where=f"line {lineno}") from None
        try:
            out.append(_trace_from_dict(obj))
        except SchemaError as exc:
            raise SchemaError(str(exc), path=file, where=f"line {lineno}") from None
    return out
