"""Downstream scoring: CIDEr, tappability-as-generation, grounding-as-generation."""

from __future__ import annotations

import math
import re
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Hashable, Iterable, Mapping, Sequence, TypeVar

from .foresight import format_box
from .io import FormatError, read_jsonl, require
from .trace import BBox

T = TypeVar("T")

_TOKEN_RE = re.compile(r"\w+")


class EmptyCorpus(ValueError):
    pass


class MissingReference(KeyError):
    def __init__(self, image_id: Hashable):
        self.image_id = image_id
        super().__init__(f"no references for candidate {image_id!r}")


class LengthMismatch(ValueError):
    pass


def words(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def ngram_counts(tokens: Sequence[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


# --- CIDEr -----------------------------------------------------------------


@dataclass
class CiderConfig:
    max_n: int = 4
    cider_d: bool = False
    sigma: float = 6.0
    scale: float = 10.0

    def __post_init__(self) -> None:
        if self.max_n < 1:
            raise ValueError("max_n must be >= 1")


@dataclass
class CiderResult:
    score: float
    per_image: dict[Hashable, float]
    variant: str


def _tfidf(counts: Counter, df: Mapping[tuple, int], log_n: float) -> tuple[dict[tuple, float], float]:
    vec = {g: tf * (log_n - math.log(max(1, df.get(g, 0)))) for g, tf in counts.items()}
    return vec, math.sqrt(sum(v * v for v in vec.values()))


def cider(
    candidates: Mapping[Hashable, str],
    references: Mapping[Hashable, Sequence[str]],
    cfg: CiderConfig | None = None,
) -> CiderResult:
    """Corpus CIDEr (or CIDEr-D with ``cfg.cider_d``).

    Document frequencies run over the reference corpus: one document per
    image, an n-gram counted once per image whatever its reference count.
    """
    cfg = cfg or CiderConfig()
    if not candidates or not references:
        raise EmptyCorpus("CIDEr needs at least one candidate and one reference image")
    for cid in candidates:
        if cid not in references or not references[cid]:
            raise MissingReference(cid)

    ns = range(1, cfg.max_n + 1)
    ref_tokens = {img: [words(r) for r in refs] for img, refs in references.items()}
    df: dict[int, Counter] = {n: Counter() for n in ns}
    for refs in ref_tokens.values():
        for n in ns:
            df[n].update(set().union(*(ngram_counts(r, n) for r in refs)) if refs else set())
    log_n = math.log(len(references))

    per_image: dict[Hashable, float] = {}
    for img, cand in candidates.items():
        cand_tokens = words(cand)
        total = 0.0
        for n in ns:
            cvec, cnorm = _tfidf(ngram_counts(cand_tokens, n), df[n], log_n)
            acc = 0.0
            for ref in ref_tokens[img]:
                rvec, rnorm = _tfidf(ngram_counts(ref, n), df[n], log_n)
                if cnorm == 0.0 or rnorm == 0.0:
                    continue
                if cfg.cider_d:
                    dot = sum(min(v, rvec[g]) * rvec[g] for g, v in cvec.items() if g in rvec)
                    delta = len(cand_tokens) - len(ref)
                    acc += dot / (cnorm * rnorm) * math.exp(-(delta**2) / (2 * cfg.sigma**2))
                else:
                    dot = sum(v * rvec[g] for g, v in cvec.items() if g in rvec)
                    acc += dot / (cnorm * rnorm)
            total += acc / len(ref_tokens[img])
        per_image[img] = cfg.scale * total / cfg.max_n
    score = sum(per_image.values()) / len(per_image)
    return CiderResult(score, per_image, "cider-d" if cfg.cider_d else "cider")


# --- tappability -----------------------------------------------------------


class TapClass(str, Enum):
    TAPPABLE = "tappable"
    NOT_TAPPABLE = "not_tappable"

    @property
    def caption_form(self) -> str:
        return TAP_CAPTIONS[self]


TAP_CAPTIONS = {
    TapClass.TAPPABLE: "yes the object is interactive",
    TapClass.NOT_TAPPABLE: "no the object is not interactive",
}


def parse_tap_prediction(text: str) -> tuple[TapClass, bool]:
    """Map a generated answer to a class; returns ``(class, parsed)``.

    Anything not starting with "yes" or "no" counts as not tappable.
    """
    first = words(text)[:1]
    if first == ["yes"]:
        return TapClass.TAPPABLE, True
    if first == ["no"]:
        return TapClass.NOT_TAPPABLE, True
    return TapClass.NOT_TAPPABLE, False


def as_tap_class(label: Any) -> TapClass:
    if isinstance(label, TapClass):
        return label
    if isinstance(label, bool):
        return TapClass.TAPPABLE if label else TapClass.NOT_TAPPABLE
    if isinstance(label, str):
        for cls in TapClass:
            if label == cls.value or label == cls.caption_form:
                return cls
    raise ValueError(f"not a tappability label: {label!r}")


@dataclass
class TapScores:
    f1: float
    accuracy: float
    precision: float
    recall: float
    confusion: dict[str, int]
    unparseable: int
    unparseable_indices: list[int] = field(default_factory=list)


def tappability_scores(predictions: Sequence[str], labels: Sequence[Any]) -> TapScores:
    """F1 with tappable as the positive class, plus overall accuracy."""
    if len(predictions) != len(labels):
        raise LengthMismatch(f"{len(predictions)} predictions for {len(labels)} labels")
    tp = fp = fn = tn = 0
    bad = []
    for i, (pred, label) in enumerate(zip(predictions, labels)):
        cls, parsed = parse_tap_prediction(pred)
        if not parsed:
            bad.append(i)
        gold = as_tap_class(label) is TapClass.TAPPABLE
        if cls is TapClass.TAPPABLE:
            tp, fp = (tp + 1, fp) if gold else (tp, fp + 1)
        else:
            fn, tn = (fn + 1, tn) if gold else (fn, tn + 1)
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = 2 * tp / (2 * tp + fp + fn) if tp else 0.0
    n = len(labels)
    return TapScores(
        f1,
        (tp + tn) / n if n else 0.0,
        precision,
        recall,
        {"tp": tp, "fp": fp, "fn": fn, "tn": tn},
        len(bad),
        bad,
    )


def _label_of(sample: Any) -> Any:
    if isinstance(sample, Mapping):
        return sample["label"]
    return getattr(sample, "label", sample)


def upsample_not_tappable(
    samples: Sequence[T], factor: int = 4, label: Callable[[T], Any] = _label_of
) -> list[T]:
    """Repeat every not-tappable sample ``factor`` times in place; others once."""
    if factor < 1:
        raise ValueError("factor must be >= 1")
    out: list[T] = []
    for s in samples:
        copies = factor if as_tap_class(label(s)) is TapClass.NOT_TAPPABLE else 1
        out.extend([s] * copies)
    return out


# --- grounding -------------------------------------------------------------


@dataclass(frozen=True)
class GroundingInstance:
    gold_command: str
    elements: tuple[tuple[Hashable, str], ...]
    target_element_id: Hashable
    instance_id: Hashable = None

    def __post_init__(self) -> None:
        if not self.elements:
            raise ValueError("grounding instance has no elements")
        if self.target_element_id not in {eid for eid, _ in self.elements}:
            raise ValueError(f"target {self.target_element_id!r} not among elements")


def token_f1(candidate: str, reference: str) -> float:
    c, r = words(candidate), words(reference)
    common = sum((Counter(c) & Counter(r)).values())
    if common == 0:
        return 0.0
    p, rec = common / len(c), common / len(r)
    return 2 * p * rec / (p + rec)


def unigram_cider_similarity(golds: Iterable[str]) -> Callable[[str, str], float]:
    """CIDEr restricted to unigrams, idf taken over the gold commands."""
    docs = [set(words(g)) for g in golds]
    df = Counter(w for d in docs for w in d)
    log_n = math.log(len(docs)) if docs else 0.0
    dfs = {(w,): k for w, k in df.items()}

    def score(candidate: str, reference: str) -> float:
        cv, cn = _tfidf(ngram_counts(words(candidate), 1), dfs, log_n)
        rv, rn = _tfidf(ngram_counts(words(reference), 1), dfs, log_n)
        if cn == 0.0 or rn == 0.0:
            return 0.0
        return 10.0 * sum(v * rv[g] for g, v in cv.items() if g in rv) / (cn * rn)

    return score


@dataclass
class GroundingResult:
    accuracy: float
    correct: list[bool]
    similarity: str


def grounding_accuracy(
    instances: Sequence[GroundingInstance],
    similarity: str | Callable[[str, str], float] = "token_f1",
) -> GroundingResult:
    """Pick the element whose generated command best matches the gold command.

    An instance is correct when the target's score is at least every other
    element's score, so a tie at the top counts for the target.
    """
    if callable(similarity):
        sim, name = similarity, getattr(similarity, "__name__", "custom")
    elif similarity == "token_f1":
        sim, name = token_f1, similarity
    elif similarity == "cider_1gram":
        sim, name = unigram_cider_similarity(i.gold_command for i in instances), similarity
    else:
        raise ValueError(f"unknown similarity {similarity!r}")
    correct = []
    for inst in instances:
        scores = {eid: sim(cmd, inst.gold_command) for eid, cmd in inst.elements}
        target = scores[inst.target_element_id]
        correct.append(all(target >= s for eid, s in scores.items() if eid != inst.target_element_id))
    acc = sum(correct) / len(correct) if correct else 0.0
    return GroundingResult(acc, correct, name)


# --- finetuning questions --------------------------------------------------

FINETUNE_TEMPLATES = {
    "widget": "What describes the functionality of the UI object found at {box}?",
    "tap": "Can the UI object found at {box} be interacted with?",
    "ground": "What command refers to the element located at {box}?",
}


def render_finetune_question(task: str, bbox: BBox) -> str:
    try:
        template = FINETUNE_TEMPLATES[task]
    except KeyError:
        raise ValueError(f"unknown task {task!r}; expected one of {sorted(FINETUNE_TEMPLATES)}") from None
    return template.format(box=format_box(bbox))


# --- file readers ----------------------------------------------------------


def load_candidates(path: str | Path) -> dict[str, str]:
    out = {}
    for i, rec in enumerate(read_jsonl(path), start=1):
        where = f"{path} record {i}"
        out[str(require(rec, "id", (str, int), where))] = require(rec, "text", str, where)
    return out


def load_references(path: str | Path) -> dict[str, list[str]]:
    out = {}
    for i, rec in enumerate(read_jsonl(path), start=1):
        where = f"{path} record {i}"
        texts = require(rec, "texts", list, where)
        if not all(isinstance(t, str) for t in texts):
            raise FormatError(f"{where}: 'texts' must be strings")
        out[str(require(rec, "id", (str, int), where))] = texts
    return out


def load_tap_pairs(pred_path: str | Path, label_path: str | Path) -> tuple[list[str], list[TapClass], list[str]]:
    preds = load_candidates(pred_path)
    labels = {}
    for i, rec in enumerate(read_jsonl(label_path), start=1):
        where = f"{label_path} record {i}"
        key = str(require(rec, "id", (str, int), where))
        try:
            labels[key] = as_tap_class(require(rec, "label", (str, bool), where))
        except ValueError as exc:
            raise FormatError(f"{where}: {exc}") from None
    if set(preds) != set(labels):
        missing = sorted(set(preds) ^ set(labels))[:5]
        raise FormatError(f"prediction and label ids differ, e.g. {missing}")
    ids = sorted(labels)
    return [preds[k] for k in ids], [labels[k] for k in ids], ids


def load_grounding_instances(path: str | Path) -> list[GroundingInstance]:
    out = []
    for i, rec in enumerate(read_jsonl(path), start=1):
        where = f"{path} record {i}"
        elements = []
        for el in require(rec, "elements", list, where):
            if not isinstance(el, dict):
                raise FormatError(f"{where}: elements must be objects")
            elements.append(
                (require(el, "element_id", (str, int), where), require(el, "generated_command", str, where))
            )
        try:
            out.append(
                GroundingInstance(
                    require(rec, "gold_command", str, where),
                    tuple(elements),
                    require(rec, "target_element_id", (str, int), where),
                    rec.get("id", i - 1),
                )
            )
        except ValueError as exc:
            raise FormatError(f"{where}: {exc}") from None
    return out
