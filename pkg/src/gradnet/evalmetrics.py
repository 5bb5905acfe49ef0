"""Retrieval-quality metrics: mean Average Precision and the bullseye score."""

import json

import numpy as np


class MetricError(ValueError):
    pass


def average_precision(ranked_ids, positives, junk=()) -> float:
    """AP in [0,1]: mean over positives of precision at each positive hit.

    Junk-flagged instances are removed from the ranking before scoring.
    """
    positives = set(positives)
    if not positives:
        raise MetricError("positives must be non-empty")
    junk = set(junk)
    hits = 0
    total = 0.0
    rank = 0
    for inst in ranked_ids:
        if inst in junk:
            continue
        rank += 1
        if inst in positives:
            hits += 1
            total += hits / rank
    return total / len(positives)


def mean_average_precision(rankings, ground_truth, junk=None) -> float:
    """Unweighted mean AP over queries, scaled to [0,100].

    ground_truth: query_id -> set of positive instance ids.
    junk: optional query_id -> set of junk ids.
    """
    aps = []
    for r in rankings:
        if r.query_id not in ground_truth:
            raise MetricError(f"no ground truth for query {r.query_id!r}")
        j = junk.get(r.query_id, ()) if junk else ()
        aps.append(average_precision(r.instance_ids, ground_truth[r.query_id], j))
    return 100.0 * float(np.mean(aps))


def bullseye(rankings, labels_by_id, K: int, query_labels=None) -> float:
    """Average per-query recall of same-class instances in the top-K window,
    scaled to [0,100]. The query counts as its own hit inside the window, so a
    ranking that excludes the query contributes K-1 usable slots plus the
    query itself.
    """
    if K < 1:
        raise MetricError("K must be >= 1")
    class_sizes = {}
    for lbl in labels_by_id.values():
        class_sizes[lbl] = class_sizes.get(lbl, 0) + 1
    recalls = []
    for r in rankings:
        if query_labels is not None and r.query_id in query_labels:
            q_label = query_labels[r.query_id]
        else:
            if r.query_id not in labels_by_id:
                raise MetricError(f"unknown label for query {r.query_id!r}")
            q_label = labels_by_id[r.query_id]
        window = r.instance_ids[: K - 1] if r.query_id in labels_by_id else r.instance_ids[:K]
        same = sum(1 for inst in window if labels_by_id[inst] == q_label)
        if r.query_id in labels_by_id:
            same += 1  # the query is its own hit at rank 0
        recalls.append(same / class_sizes[q_label])
    return 100.0 * float(np.mean(recalls))


def metric_report(rankings, per_query_values, aggregate_name, aggregate_value,
                  config=None):
    return {
        "per_query": {r.query_id: v for r, v in zip(rankings, per_query_values)},
        aggregate_name: aggregate_value,
        "config": dict(config) if config else {},
    }


def write_metric_report(report, path):
    with open(path, "w", encoding="utf-8") as f:
        json.dump(report, f, indent=2)
        f.write("\n")
