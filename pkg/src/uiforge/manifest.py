"""Run manifests and Table-1 style dataset statistics."""

from __future__ import annotations

import hashlib
import json
from collections import Counter
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Iterable, Mapping

from . import __version__
from .io import atomic_write_text, file_digest, read_jsonl, require
from .trace import UITrace

SCHEMA_VERSION = 1

# sample-set name -> output file, in the row order of the corpus table
SAMPLE_SETS = {
    "element": "element_captions.jsonl",
    "element_list": "element_lists.jsonl",
    "screen": "screen_captions.jsonl",
    "foresight": "foresight.jsonl",
}
ROW_TITLES = {
    "element": "Element",
    "element_list": "Element List",
    "screen": "Screen",
    "foresight": "Foresight",
}


def utc_now() -> str:
    return datetime.now(timezone.utc).isoformat(timespec="seconds")


def config_hash(settings: Mapping[str, Any]) -> str:
    blob = json.dumps(settings, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def input_counts(traces: Iterable[UITrace]) -> dict[str, dict[str, int]]:
    counts: dict[str, dict[str, int]] = {}
    for t in traces:
        c = counts.setdefault(t.source_dataset, {"traces": 0, "states": 0})
        c["traces"] += 1
        c["states"] += len(t.states)
    return dict(sorted(counts.items()))


@dataclass
class RunManifest:
    command: str
    settings: dict[str, Any]
    started: str = field(default_factory=utc_now)
    input_counts: dict[str, Any] = field(default_factory=dict)
    output_counts: dict[str, dict[str, int]] = field(default_factory=dict)
    drop_counts: dict[str, dict[str, int]] = field(default_factory=dict)
    outputs: dict[str, dict[str, Any]] = field(default_factory=dict)
    extra: dict[str, Any] = field(default_factory=dict)

    def add_output(self, path: Path, records: int) -> None:
        self.outputs[path.name] = {
            "sha256": file_digest(path),
            "records": records,
            "schema_version": SCHEMA_VERSION,
        }

    def to_dict(self) -> dict[str, Any]:
        return {
            "schema_version": SCHEMA_VERSION,
            "command": self.command,
            "tool_version": __version__,
            "config": self.settings,
            "config_hash": config_hash(self.settings),
            "input_counts": self.input_counts,
            "output_counts": self.output_counts,
            "drop_counts": self.drop_counts,
            "outputs": self.outputs,
            **self.extra,
            "timestamps": {"started": self.started, "finished": utc_now()},
        }

    def write(self, out_dir: Path) -> Path:
        path = out_dir / f"manifest.{self.command.split()[-1]}.json"
        atomic_write_text(path, json.dumps(self.to_dict(), indent=2, sort_keys=False) + "\n")
        return path


@dataclass
class DatasetStats:
    name: str
    unique_images: int = 0
    unique_captions: int = 0
    samples: int = 0
    per_app: dict[str, int] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "unique_images": self.unique_images,
            "unique_captions": self.unique_captions,
            "samples": self.samples,
            "per_app": self.per_app,
        }


def sample_set_of(path: Path) -> str | None:
    for name, filename in SAMPLE_SETS.items():
        if path.name == filename:
            return name
    return None


def dataset_stats(path: str | Path, name: str | None = None) -> DatasetStats:
    """One pass over a sample JSONL file."""
    path = Path(path)
    images, captions, apps = set(), set(), Counter()
    n = 0
    for i, rec in enumerate(read_jsonl(path), start=1):
        where = f"{path} record {i}"
        images.add(require(rec, "image_path", str, where))
        captions.add(require(rec, "caption", str, where))
        apps[require(rec, "app_id", str, where)] += 1
        n += 1
    return DatasetStats(name or sample_set_of(path) or path.stem, len(images), len(captions), n, dict(sorted(apps.items())))


def render_table(stats: Iterable[DatasetStats]) -> str:
    rows = [("Captioning objective", "# Images", "# Samples", "# Unique captions")]
    for s in stats:
        rows.append((ROW_TITLES.get(s.name, s.name), f"{s.unique_images:,}", f"{s.samples:,}", f"{s.unique_captions:,}"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    lines = []
    for k, r in enumerate(rows):
        lines.append(" | ".join(c.ljust(widths[0]) if i == 0 else c.rjust(widths[i]) for i, c in enumerate(r)))
        if k == 0:
            lines.append("-+-".join("-" * w for w in widths))
    return "\n".join(lines)

