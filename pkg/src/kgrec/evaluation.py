"""Full-ranking metrics: Recall@k, MRR, and per-ordinal breakdowns."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import ClozeSample, pad_truncate
from .model import Recommender, batch_arrays

RECALL_CUTOFFS = (1, 10, 50)
ORDINAL_BUCKETS = ("1", "2", "3", "4", "5+")


def recall_at_k(rank: int, k: int) -> int:
    if rank < 1:
        raise ValueError("ranks are 1-based")
    return 1 if rank <= k else 0


def mrr(ranks: list[int]) -> float:
    if not ranks:
        raise ValueError("MRR of an empty rank list is undefined")
    if min(ranks) < 1:
        raise ValueError("ranks are 1-based")
    return float(np.mean([1.0 / r for r in ranks]))


def _bucket(ordinal: int | None) -> str:
    if ordinal is None or ordinal < 1:
        return "1"
    return str(ordinal) if ordinal < 5 else "5+"


def target_rank(scores: np.ndarray, target: int, item_ids: np.ndarray) -> int:
    """1-based rank of the target among all items; ties go to smaller ids."""
    s_t = scores[target]
    item_scores = scores[item_ids]
    better = int(np.sum(item_scores > s_t))
    tied_smaller = int(np.sum((item_scores == s_t) & (item_ids < target)))
    return 1 + better + tied_smaller


@dataclass
class EvalResult:
    recall: dict[int, float] = field(default_factory=dict)
    mrr: float = 0.0
    per_ordinal: dict[str, dict] = field(default_factory=dict)
    sample_count: int = 0

    def to_dict(self) -> dict:
        return {"recall": {str(k): v for k, v in sorted(self.recall.items())},
                "mrr": self.mrr,
                "per_ordinal": self.per_ordinal,
                "sample_count": self.sample_count}


def aggregate(ranks: list[int], ordinals: list[int | None]) -> EvalResult:
    result = EvalResult(sample_count=len(ranks))
    result.recall = {k: float(np.mean([recall_at_k(r, k) for r in ranks]))
                     for k in RECALL_CUTOFFS}
    result.mrr = mrr(ranks)
    for bucket in ORDINAL_BUCKETS:
        rs = [r for r, o in zip(ranks, ordinals) if _bucket(o) == bucket]
        if rs:
            result.per_ordinal[bucket] = {
                "count": len(rs),
                "recall": {str(k): float(np.mean([recall_at_k(r, k) for r in rs]))
                           for k in RECALL_CUTOFFS},
            }
    return result


def evaluate(model: Recommender, samples: list[ClozeSample],
             batch_size: int = 128) -> EvalResult:
    """Rank every test target against all items and aggregate.

    Samples may be unpadded; they are padded/truncated to the model's
    maximum length here. The model is treated as frozen.
    """
    if not samples:
        raise ValueError("cannot evaluate on zero samples")
    item_ids = np.flatnonzero(model.item_valid)
    ranks: list[int] = []
    ordinals: list[int | None] = []
    for start in range(0, len(samples), batch_size):
        chunk = [pad_truncate(s, model.config.max_len)
                 for s in samples[start:start + batch_size]]
        ids, valid, positions, targets, _ = batch_arrays(chunk)
        hidden = model.forward(ids, valid, training=False)
        probs = model.predict_scores(hidden, positions).data
        row = 0
        for s in chunk:
            for _ in sorted(s.targets):
                ranks.append(target_rank(probs[row], targets[row], item_ids))
                ordinals.append(s.ordinal)
                row += 1
    return aggregate(ranks, ordinals)


def format_table(results: dict[str, EvalResult]) -> str:
    """Aligned plain-text table, one row per model/ablation configuration."""
    header = ["model", "recall@1", "recall@10", "recall@50", "mrr", "samples"]
    rows = [header]
    for name, res in results.items():
        rows.append([name] + [f"{res.recall[k]:.4f}" for k in RECALL_CUTOFFS]
                    + [f"{res.mrr:.4f}", str(res.sample_count)])
    widths = [max(len(r[i]) for r in rows) for i in range(len(header))]
    lines = ["  ".join(cell.ljust(w) for cell, w in zip(row, widths)).rstrip()
             for row in rows]
    return "\n".join(lines)
