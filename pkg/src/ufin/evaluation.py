"""Ranking metrics and per-domain evaluation reports."""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Mapping, Optional, Sequence

import numpy as np

from ufin.errors import DataError

EVAL_MODES = ("in-domain", "zero-shot", "cross-platform")

PROB_EPS = 1e-7


def auc(labels, scores) -> float:
    """Probability that a positive outranks a negative; ties credit 1/2.

    Computed in O(n log n) from average ranks of the positive class.
    """
    labels = np.asarray(labels)
    scores = np.asarray(scores, dtype=np.float64)
    if labels.shape != scores.shape or labels.ndim != 1:
        raise DataError(f"auc: labels {labels.shape} and scores {scores.shape} must be equal-length vectors")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("auc: labels must be 0 or 1")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DataError("auc undefined: need at least one positive and one negative")
    order = np.argsort(scores, kind="stable")
    ranks = np.empty(labels.size, dtype=np.float64)
    sorted_scores = scores[order]
    # average ranks over tie groups (1-based)
    boundaries = np.flatnonzero(np.diff(sorted_scores)) + 1
    starts = np.concatenate(([0], boundaries))
    stops = np.concatenate((boundaries, [labels.size]))
    for lo, hi in zip(starts, stops):
        ranks[order[lo:hi]] = 0.5 * (lo + 1 + hi)
    pos_rank_sum = ranks[labels == 1].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def logloss(labels, preds) -> float:
    """Mean negative log-likelihood with predictions clamped to [eps, 1-eps]."""
    labels = np.asarray(labels)
    preds = np.clip(np.asarray(preds, dtype=np.float64), PROB_EPS, 1.0 - PROB_EPS)
    if labels.shape != preds.shape or labels.ndim != 1:
        raise DataError(f"logloss: labels {labels.shape} and preds {preds.shape} must be equal-length vectors")
    if not np.isin(labels, (0, 1)).all():
        raise DataError("logloss: labels must be 0 or 1")
    return float(-np.mean(labels * np.log(preds) + (1 - labels) * np.log(1 - preds)))


@dataclass
class DomainMetrics:
    auc: float
    logloss: float
    count: int


@dataclass
class EvalReport:
    mode: str
    split: str
    per_domain: dict[int, DomainMetrics]
    overall: DomainMetrics

    def to_json(self) -> str:
        payload = {
            "mode": self.mode,
            "split": self.split,
            "overall": vars(self.overall),
            "per_domain": {str(d): vars(m) for d, m in sorted(self.per_domain.items())},
        }
        return json.dumps(payload, indent=2, sort_keys=True)

    def format_table(self) -> str:
        rows = [("domain", "auc", "logloss", "count")]
        for d, m in sorted(self.per_domain.items()):
            rows.append((str(d), f"{m.auc:.4f}", f"{m.logloss:.4f}", str(m.count)))
        rows.append(("all", f"{self.overall.auc:.4f}", f"{self.overall.logloss:.4f}", str(self.overall.count)))
        widths = [max(len(r[c]) for r in rows) for c in range(4)]
        lines = ["  ".join(cell.rjust(w) for cell, w in zip(r, widths)) for r in rows]
        return "\n".join([f"[{self.mode} / {self.split}]", *lines])


def score_report(
    mode: str,
    split: str,
    labels_by_domain: Mapping[int, np.ndarray],
    scores_by_domain: Mapping[int, np.ndarray],
) -> EvalReport:
    if mode not in EVAL_MODES:
        raise DataError(f"unknown eval mode {mode!r}; expected one of {EVAL_MODES}")
    per_domain = {}
    all_labels, all_scores = [], []
    for d in sorted(labels_by_domain):
        y, s = labels_by_domain[d], scores_by_domain[d]
        per_domain[d] = DomainMetrics(auc(y, s), logloss(y, s), len(y))
        all_labels.append(y)
        all_scores.append(s)
    y = np.concatenate(all_labels)
    s = np.concatenate(all_scores)
    return EvalReport(mode, split, per_domain, DomainMetrics(auc(y, s), logloss(y, s), len(y)))


def evaluate(
    model,
    featurizer,
    datasets: Sequence,
    split: str = "test",
    mode: str = "in-domain",
) -> EvalReport:
    """Score one split of every given domain with the model."""
    if mode == "zero-shot" and getattr(model, "adaptor", None) is not None:
        raise DataError(
            "zero-shot evaluation requires a text-only model: "
            "the feature adaptor has no weights for unseen domains"
        )
    labels_by_domain: dict[int, np.ndarray] = {}
    scores_by_domain: dict[int, np.ndarray] = {}
    for ds in datasets:
        records = ds.splits()[split]
        if not records:
            raise DataError(f"domain {ds.domain_id}: split {split!r} is empty")
        batch = featurizer.featurize(records)
        labels_by_domain[ds.domain_id] = batch.labels
        scores_by_domain[ds.domain_id] = model.predict_proba(batch)
    return score_report(mode, split, labels_by_domain, scores_by_domain)
