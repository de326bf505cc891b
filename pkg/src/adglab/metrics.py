"""Recall@k for predicate classification (PredCls) and per-image detection (PredDet).

Rankings sort by descending score with ties broken by ascending predicate
id, so results never depend on input order. PredDet is micro-averaged over
ground-truth triplets.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import atomic_write

log = logging.getLogger(__name__)


def rankings(scores) -> np.ndarray:
    """Per row, predicate ids from best to worst (stable: ties by ascending id)."""
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    return np.argsort(-scores, axis=1, kind="stable")


def _ranks(scores) -> np.ndarray:
    """rank[r, k] = position of predicate k in row r's ranking (0 = top)."""
    order = rankings(scores)
    rank = np.empty_like(order)
    np.put_along_axis(rank, order, np.arange(order.shape[1])[None, :], axis=1)
    return rank


def _check_gts(gts):
    gts = [tuple(g) for g in gts]
    if not gts:
        raise ValueError("no predictions to evaluate")
    for n, g in enumerate(gts):
        if not g:
            raise ValueError(f"prediction {n} has no ground-truth predicate")
    return gts


def predcls_recall(scores, gts, ks=(1, 5), any_hit: bool = False) -> dict[int, float]:
    """Fraction of (instance, gt predicate) pairs ranked within the top k.

    With ``any_hit`` each instance counts once, as a hit when any of its
    predicates makes the top k.
    """
    gts = _check_gts(gts)
    rank = _ranks(scores)
    if len(rank) != len(gts):
        raise ValueError("scores and ground truth differ in length")
    out = {}
    for k in ks:
        hits = total = 0
        for r, g in zip(rank, gts):
            inside = [r[p] < k for p in g]
            if any_hit:
                hits += any(inside)
                total += 1
            else:
                hits += sum(inside)
                total += len(inside)
        out[k] = hits / total
    return out


def preddet_recall(image_ids, scores, gts, ks=(5, 10), instance_ids=None) -> dict[int, float]:
    """Per image, rank every (pair, predicate) candidate jointly; micro recall@k.

    Ties are broken by (instance id, predicate id) so the result is invariant
    to input order.
    """
    gts = [tuple(g) for g in gts]
    scores = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if instance_ids is None:
        instance_ids = np.arange(len(gts))
    by_image: dict = defaultdict(list)
    for n, img in enumerate(image_ids):
        by_image[img].append(n)
    hits = {k: 0 for k in ks}
    total = 0
    for img in sorted(by_image):
        members = by_image[img]
        n_gt = sum(len(gts[n]) for n in members)
        if n_gt == 0:
            log.warning("image %s has no ground-truth triplets; skipped", img)
            continue
        K = scores.shape[1]
        cand = [(-scores[n, p], instance_ids[n], p, n) for n in members for p in range(K)]
        cand.sort()
        for k in ks:
            top = cand[:k]
            hits[k] += sum(1 for _, _, p, n in top if p in gts[n])
        total += n_gt
    if total == 0:
        raise ValueError("no image carries ground-truth triplets")
    return {k: hits[k] / total for k in ks}


def frequency_baseline(table, object_label: int) -> np.ndarray:
    """Predicate scores from (predicate, object) training counts; zeros for unseen objects."""
    col = np.asarray(table, dtype=np.float64)[:, object_label]
    s = col.sum()
    return col / s if s > 0 else np.zeros_like(col)


def frequency_scores(table, object_labels) -> np.ndarray:
    return np.stack([frequency_baseline(table, o) for o in object_labels])


def per_class_report(scores, gts, n_predicates: int | None = None) -> dict:
    """Per-predicate R@1 over that predicate's gt pairs, their unweighted mean, and overall R@1."""
    gts = _check_gts(gts)
    rank = _ranks(scores)
    K = n_predicates if n_predicates is not None else rank.shape[1]
    hit = np.zeros(K)
    count = np.zeros(K, dtype=np.int64)
    for r, g in zip(rank, gts):
        for p in g:
            count[p] += 1
            hit[p] += r[p] == 0
    per_class = np.divide(hit, count, out=np.full(K, np.nan), where=count > 0)
    return {
        "per_class_r1": per_class,
        "mean_r1": float(np.nanmean(per_class)) if (count > 0).any() else float("nan"),
        "overall_r1": float(hit.sum() / count.sum()),
        "counts": count,
    }


@dataclass
class MetricsReport:
    predcls_r1: float
    predcls_r5: float
    preddet_r5: float
    preddet_r10: float
    mean_r1: float
    per_class_r1: list = field(default_factory=list)
    class_counts: list = field(default_factory=list)
    n_instances: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def metrics_report(instances, scores, n_predicates: int | None = None, any_hit: bool = False) -> MetricsReport:
    gts = [x.predicate_labels for x in instances]
    pc = predcls_recall(scores, gts, (1, 5), any_hit=any_hit)
    pd = preddet_recall([x.image_id for x in instances], scores, gts, (5, 10),
                        instance_ids=[x.instance_id for x in instances])
    per = per_class_report(scores, gts, n_predicates)
    return MetricsReport(
        predcls_r1=pc[1], predcls_r5=pc[5], preddet_r5=pd[5], preddet_r10=pd[10], mean_r1=per["mean_r1"],
        per_class_r1=[None if np.isnan(v) else float(v) for v in per["per_class_r1"]],
        class_counts=per["counts"].tolist(), n_instances=len(gts),
    )


def dump_predictions(path, instances, scores) -> None:
    lines = [json.dumps({"instance_id": x.instance_id, "scores": [float(v) for v in s]})
             for x, s in zip(instances, np.asarray(scores))]
    atomic_write(path, ("\n".join(lines) + "\n").encode())


def write_report(path_stem, report: MetricsReport, header: str = "PredDet: micro-averaged over GT triplets") -> None:
    """``<stem>.csv`` with the headline recalls and ``<stem>.json`` with everything."""
    buf = io.StringIO()
    buf.write(f"# {header}\n")
    w = csv.writer(buf)
    w.writerow(["predcls_r1", "predcls_r5", "preddet_r5", "preddet_r10", "mean_r1", "n_instances"])
    w.writerow([f"{report.predcls_r1:.6f}", f"{report.predcls_r5:.6f}", f"{report.preddet_r5:.6f}",
                f"{report.preddet_r10:.6f}", f"{report.mean_r1:.6f}", report.n_instances])
    atomic_write(f"{path_stem}.csv", buf.getvalue().encode())
    atomic_write(f"{path_stem}.json", json.dumps(report.to_dict(), indent=1).encode())
