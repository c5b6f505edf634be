"""Evaluation over mora-core positions: accuracy, macro F1, confusion
matrices per task, and layer-weight reporting for trained checkpoints.

Only mora-core positions are compared; hypothesis labels at non-core
positions are ignored, so stripping them changes nothing.  Class order
everywhere follows the label enumerations in :mod:`corpus`.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .corpus import TASK_ENUMS, TASKS, Utterance
from .errors import AlignmentMismatch, EmptyMask, UnlabeledUtterance
from .features import softmax_np
from .net import Checkpoint


@dataclass
class ConfusionMatrix:
    """K x K integer counts; rows are reference, columns are hypothesis."""

    task: str
    counts: np.ndarray
    labels: tuple

    def __post_init__(self):
        counts = np.asarray(self.counts, dtype=np.int64)
        k = len(self.labels)
        if counts.shape != (k, k):
            raise ValueError(f"counts shape {counts.shape} for {k} classes")
        if (counts < 0).any():
            raise ValueError("negative confusion counts")
        self.counts = counts

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def accuracy(self) -> float:
        total = self.total
        return float(np.trace(self.counts)) / total if total else 0.0

    def to_csv(self, path):
        """Header row/column carry the class symbols; cell [i,j] counts
        reference class i predicted as class j."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("ref\\hyp," + ",".join(self.labels) + "\n")
            for i, symbol in enumerate(self.labels):
                fh.write(symbol + "," + ",".join(str(int(c)) for c in self.counts[i]) + "\n")


@dataclass(frozen=True)
class ClassScore:
    symbol: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class TaskScore:
    task: str
    accuracy: float
    macro_f1: float
    classes: tuple


@dataclass
class ScoreReport:
    tasks: "dict[str, TaskScore]"

    def to_dict(self) -> dict:
        return {
            task: {
                "accuracy": ts.accuracy,
                "macro_f1": ts.macro_f1,
                "classes": {
                    cs.symbol: {
                        "precision": cs.precision,
                        "recall": cs.recall,
                        "f1": cs.f1,
                        "support": cs.support,
                    }
                    for cs in ts.classes
                },
            }
            for task, ts in self.tasks.items()
        }

    def write_json(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _task_score(task: str, cm: ConfusionMatrix, include_zero_support: bool) -> TaskScore:
    counts = cm.counts
    ref_totals = counts.sum(axis=1)
    hyp_totals = counts.sum(axis=0)
    diag = np.diag(counts)
    classes = []
    f1s = []
    for i, symbol in enumerate(cm.labels):
        precision = float(diag[i] / hyp_totals[i]) if hyp_totals[i] else 0.0
        recall = float(diag[i] / ref_totals[i]) if ref_totals[i] else 0.0
        f1 = 2.0 * precision * recall / (precision + recall) if precision + recall else 0.0
        classes.append(ClassScore(symbol, precision, recall, f1, int(ref_totals[i])))
        if include_zero_support or ref_totals[i] > 0:
            f1s.append(f1)
    macro = float(np.mean(f1s)) if f1s else 0.0
    return TaskScore(task, cm.accuracy, macro, tuple(classes))


def score(
    ref: Sequence[Utterance],
    hyp: Sequence[Sequence],
    *,
    include_zero_support: bool = True,
):
    """Compare hypothesis bundles against reference labels.

    ``hyp`` holds one bundle sequence per reference utterance, aligned
    by position.  Returns (ScoreReport, {task: ConfusionMatrix}).  By
    default classes never seen in the reference still contribute F1 = 0
    to the macro average; pass include_zero_support=False to average
    over reference-attested classes only.
    """
    if len(hyp) != len(ref):
        raise AlignmentMismatch(
            f"{len(hyp)} hypothesis sequences for {len(ref)} reference utterances"
        )
    matrices = {
        task: np.zeros((len(enum_cls), len(enum_cls)), dtype=np.int64)
        for task, enum_cls in TASK_ENUMS.items()
    }
    index = {
        task: {member: i for i, member in enumerate(enum_cls)}
        for task, enum_cls in TASK_ENUMS.items()
    }
    total = 0
    for utt, bundles in zip(ref, hyp):
        if utt.labels is None:
            raise UnlabeledUtterance(f"reference utterance {utt.id!r} has no labels")
        if len(bundles) != len(utt.phonemes):
            raise AlignmentMismatch(
                f"utterance {utt.id!r}: {len(bundles)} hypothesis bundles "
                f"for {len(utt.phonemes)} phonemes"
            )
        for p, tok in enumerate(utt.phonemes):
            if not tok.mora_core:
                continue
            total += 1
            for task in TASKS:
                ref_label = utt.labels[p].get(task)
                hyp_label = bundles[p].get(task)
                if ref_label is None:
                    raise AlignmentMismatch(
                        f"utterance {utt.id!r}: reference missing {task} label "
                        f"at mora core {p}"
                    )
                if hyp_label is None:
                    raise AlignmentMismatch(
                        f"utterance {utt.id!r}: hypothesis missing {task} label "
                        f"at mora core {p}"
                    )
                matrices[task][index[task][ref_label], index[task][hyp_label]] += 1
    if total == 0:
        raise EmptyMask("no mora-core positions to score")
    confusions = {
        task: ConfusionMatrix(task, matrices[task], TASK_ENUMS[task].symbols())
        for task in TASKS
    }
    report = ScoreReport(
        {task: _task_score(task, confusions[task], include_zero_support) for task in TASKS}
    )
    return report, confusions


def report_layer_weights(checkpoint: Checkpoint) -> "dict[str, np.ndarray]":
    """Normalized per-stream layer weights: softmax of the trained
    fusion logits, one vector per active stream."""
    out = {}
    for role, _ in checkpoint.stream_config.active_streams():
        out[role] = softmax_np(checkpoint.params[f"fusion.{role}"])
    return out


def write_layer_weights_csv(weights: Mapping[str, np.ndarray], out_dir):
    """One `layer_weights_<stream>.csv` per stream; returns the paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = []
    for role in sorted(weights):
        path = out_dir / f"layer_weights_{role}.csv"
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("layer,weight\n")
            for layer, value in enumerate(weights[role]):
                fh.write(f"{layer},{float(value)!r}\n")
        paths.append(path)
    return paths
