"""Caption cross-entropy: tokenization, per-step NLL and its logit gradient.

The loss for a caption ``w_0 .. w_n`` under per-step logits ``z_i`` is

    L = -sum_i log softmax(z_i)[w_i]

summed over steps. Foresight and static objectives share this formula and
differ only in which caption is the target and what the model saw.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from .io import FormatError, read_jsonl, require

BOS, EOS, UNK = "<bos>", "<eos>", "<unk>"
RESERVED = (BOS, EOS, UNK)


class LengthMismatch(ValueError):
    pass


class NonFiniteLogit(ValueError):
    pass


class Vocabulary:
    def __init__(self, tokens: Iterable[str] = ()):
        self.tokens: list[str] = list(RESERVED)
        self.index: dict[str, int] = {t: i for i, t in enumerate(RESERVED)}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        if token not in self.index:
            self.index[token] = len(self.tokens)
            self.tokens.append(token)
        return self.index[token]

    @classmethod
    def from_captions(cls, captions: Iterable[str]) -> "Vocabulary":
        words = {w for c in captions for w in c.lower().split()}
        return cls(sorted(words - set(RESERVED)))

    def __len__(self) -> int:
        return len(self.tokens)

    def __contains__(self, token: str) -> bool:
        return token in self.index

    @property
    def bos_id(self) -> int:
        return 0

    @property
    def eos_id(self) -> int:
        return 1

    @property
    def unk_id(self) -> int:
        return 2


def tokenize(caption: str, vocab: Vocabulary) -> list[int]:
    ids = [vocab.index.get(w, vocab.unk_id) for w in caption.lower().split()]
    ids.append(vocab.eos_id)
    return ids


@dataclass
class LossReport:
    total: float
    per_step: list[float]
    grad_logits: list[list[float]] = field(repr=False)
    objective: str = "xe"
    reduction: str = "sum"

    def to_record(self, sample_id: str | None = None) -> dict:
        rec = {"objective": self.objective, "reduction": self.reduction, "total": self.total,
               "per_step": self.per_step}
        if sample_id is not None:
            rec = {"sample_id": sample_id, **rec}
        return rec


def _check(logits: Sequence[Sequence[float]] | np.ndarray, target: Sequence[int]) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(logits, dtype=np.float64)
    t = np.asarray(target, dtype=np.int64)
    if z.ndim != 2:
        raise LengthMismatch(f"logits must be a (steps, |V|) matrix, got shape {z.shape}")
    if len(z) != len(t):
        raise LengthMismatch(f"{len(z)} logit steps for {len(t)} target tokens")
    if len(t) and (t.min() < 0 or t.max() >= z.shape[1]):
        raise LengthMismatch(f"target id out of range for vocabulary of size {z.shape[1]}")
    if not np.isfinite(z).all():
        raise NonFiniteLogit("logits contain NaN or infinity")
    return z, t


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def xe_grad(logits, target) -> np.ndarray:
    """d(loss)/d(logits) per step: softmax minus the one-hot target."""
    z, t = _check(logits, target)
    grad = np.exp(log_softmax(z))
    grad[np.arange(len(t)), t] -= 1.0
    return grad


def xe_loss(logits, target, *, reduction: str = "sum", objective: str = "xe") -> LossReport:
    z, t = _check(logits, target)
    if reduction not in ("sum", "mean"):
        raise ValueError(f"unknown reduction {reduction!r}")
    logp = log_softmax(z)
    per_step = -logp[np.arange(len(t)), t]
    # float rounding can leave -0.0 or -1e-17 for a certain token
    per_step = np.maximum(per_step, 0.0)
    grad = np.exp(logp)
    grad[np.arange(len(t)), t] -= 1.0
    total = float(per_step.sum())
    if reduction == "mean":
        total /= max(len(t), 1)
        grad /= max(len(t), 1)
    return LossReport(total, per_step.tolist(), grad.tolist(), objective, reduction)


def foresight_loss(logits, target, *, reduction: str = "sum") -> LossReport:
    """Loss for decoding the NEXT screen's caption given (question, current screen)."""
    return xe_loss(logits, target, reduction=reduction, objective="foresight")


def static_loss(logits, target, *, reduction: str = "sum") -> LossReport:
    """Loss for captioning the current screen (element list or screen caption), no question."""
    return xe_loss(logits, target, reduction=reduction, objective="static")


OBJECTIVES = {"xe": xe_loss, "foresight": foresight_loss, "static": static_loss}


@dataclass(frozen=True)
class LogitsRecord:
    sample_id: str
    steps: list[list[float]]
    target_ids: list[int]


def read_logits_file(path: str | Path) -> Iterator[LogitsRecord]:
    for i, rec in enumerate(read_jsonl(path), start=1):
        where = f"{path} record {i}"
        sample_id = require(rec, "sample_id", (str, int), where)
        steps = require(rec, "steps", list, where)
        target = require(rec, "target_ids", list, where)
        if not all(isinstance(s, list) for s in steps):
            raise FormatError(f"{where}: 'steps' must be a list of float lists")
        if not all(isinstance(v, int) and not isinstance(v, bool) for v in target):
            raise FormatError(f"{where}: 'target_ids' must be integers")
        yield LogitsRecord(str(sample_id), steps, target)


def score_logits_file(path: str | Path, objective: str = "xe", reduction: str = "sum") -> list[tuple[str, LossReport]]:
    fn = OBJECTIVES[objective]
    out = []
    for rec in read_logits_file(path):
        try:
            out.append((rec.sample_id, fn(rec.steps, rec.target_ids, reduction=reduction)))
        except (LengthMismatch, NonFiniteLogit, ValueError) as exc:
            raise FormatError(f"{path} sample {rec.sample_id}: {exc}") from exc
    return out


def dumps_reports(reports: Iterable[tuple[str, LossReport]]) -> str:
    return "".join(json.dumps(r.to_record(sid)) + "\n" for sid, r in reports)
