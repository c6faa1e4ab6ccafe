"""Macro-averaged top-k retrieval metrics under binary relevance.

Recall, precision and F1 count hits in the top-k against the positive set;
NDCG uses binary gains with log2(i+1) discounts and an ideal DCG truncated at
min(k, number of positives). Tasks with no positives are excluded from the
averages with a logged count.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field

logger = logging.getLogger(__name__)

DEFAULT_KS = (5, 10)


class MetricsError(ValueError):
    pass


def hits(ranked_topk, positives) -> int:
    """Number of relevant ids in the (duplicate-free) top-k."""
    ranked_topk = list(ranked_topk)
    if len(set(ranked_topk)) != len(ranked_topk):
        raise MetricsError("ranking contains duplicate ids")
    positives = set(positives)
    return sum(1 for item in ranked_topk if item in positives)


def recall_precision_f1(ranked, positives, k: int):
    """(R, P, F1) at k; F1 is the harmonic mean, or 0 when both parts are 0."""
    positives = set(positives)
    if not positives:
        raise MetricsError("metrics need at least one positive")
    h = hits(list(ranked)[:k], positives)
    recall = h / len(positives)
    precision = h / k
    if precision + recall > 0:
        f1 = 2 * precision * recall / (precision + recall)
    else:
        f1 = 0.0
    return recall, precision, f1


def ndcg(ranked, positives, k: int) -> float:
    """DCG over binary gains with log2(i+1) discounts, normalized by the
    ideal DCG truncated at min(k, |positives|)."""
    positives = set(positives)
    if not positives:
        raise MetricsError("metrics need at least one positive")
    topk = list(ranked)[:k]
    if len(set(topk)) != len(topk):
        raise MetricsError("ranking contains duplicate ids")
    dcg = sum(1.0 / math.log2(i + 1)
              for i, item in enumerate(topk, start=1) if item in positives)
    ideal_hits = min(k, len(positives))
    idcg = sum(1.0 / math.log2(i + 1) for i in range(1, ideal_hits + 1))
    return dcg / idcg


@dataclass(frozen=True)
class EvalReport:
    """Macro averages per k plus the retained per-task rows."""

    ks: tuple[int, ...]
    macro: dict            # k -> {"recall","precision","f1","ndcg"}
    per_task: dict         # task_id -> {k: {...}}
    task_count: int
    excluded: tuple[str, ...] = field(default_factory=tuple)

    def table(self) -> str:
        """Plain-text table, one row per k."""
        header = f"{'k':>4}  {'recall':>8}  {'precision':>9}  {'f1':>8}  {'ndcg':>8}"
        lines = [header, "-" * len(header)]
        for k in self.ks:
            row = self.macro[k]
            lines.append(f"{k:>4}  {row['recall']:>8.4f}  {row['precision']:>9.4f}  "
                         f"{row['f1']:>8.4f}  {row['ndcg']:>8.4f}")
        lines.append(f"tasks evaluated: {self.task_count}"
                     + (f" (excluded {len(self.excluded)} without positives)"
                        if self.excluded else ""))
        return "\n".join(lines)

    def to_dict(self) -> dict:
        return {
            "ks": list(self.ks),
            "macro": {str(k): self.macro[k] for k in self.ks},
            "task_count": self.task_count,
            "excluded": list(self.excluded),
            "per_task": {t: {str(k): v for k, v in rows.items()}
                         for t, rows in self.per_task.items()},
        }

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(self.to_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def evaluate(ranker, split_tasks, interactions, ks=DEFAULT_KS) -> EvalReport:
    """Macro-average all metrics over a split.

    `ranker(task_id)` must return at least max(ks) ranked server ids when the
    corpus allows; duplicate ids are fatal since they break every count.
    """
    ks = tuple(sorted(set(int(k) for k in ks)))
    if not ks:
        raise MetricsError("need at least one k")
    per_task: dict = {}
    excluded = []
    sums = {k: {"recall": 0.0, "precision": 0.0, "f1": 0.0, "ndcg": 0.0}
            for k in ks}
    n = 0
    for task_id in split_tasks:
        positives = interactions.for_task(task_id)
        if not positives:
            excluded.append(task_id)
            continue
        ranked = list(ranker(task_id))
        if len(set(ranked)) != len(ranked):
            raise MetricsError(f"ranker returned duplicates for task {task_id!r}")
        rows = {}
        for k in ks:
            r, p, f1 = recall_precision_f1(ranked, positives, k)
            rows[k] = {"recall": r, "precision": p, "f1": f1,
                       "ndcg": ndcg(ranked, positives, k)}
            for name, value in rows[k].items():
                sums[k][name] += value
        per_task[task_id] = rows
        n += 1
    if excluded:
        logger.warning("excluded %d task(s) without positives from evaluation",
                       len(excluded))
    macro = {}
    for k in ks:
        macro[k] = {name: (sums[k][name] / n if n else 0.0)
                    for name in ("recall", "precision", "f1", "ndcg")}
    return EvalReport(ks=ks, macro=macro, per_task=per_task, task_count=n,
                      excluded=tuple(excluded))
