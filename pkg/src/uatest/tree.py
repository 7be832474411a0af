"""Association-guided decision-tree construction.

Starting from the full training population, the search recursively splits on
the contextual attribute whose partition has the highest mean association
between the protected attribute and the output, registering every visited
subpopulation of sufficient size as a candidate context. Candidates are
hypotheses only; their validation happens later on held-out test data.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from .dataset import CATEGORICAL, ContextPredicate, Dataset
from .metrics import BoundMetric, MetricError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TreeParams:
    """Search bounds: minimum context size, maximum depth, and the number of
    quantile-derived threshold candidates per continuous attribute."""

    min_size: int = 100
    max_depth: int = 5
    quantile_splits: int = 8

    def __post_init__(self) -> None:
        if self.min_size < 10:
            raise ValueError("min_size must be at least 10")
        if self.max_depth < 0:
            raise ValueError("max_depth must be non-negative")
        if self.quantile_splits < 2:
            raise ValueError("quantile_splits must be at least 2")


class ContextNode:
    """A registered context: the conjunction of predicates on the path from
    the root, its training size, and its training-set association."""

    __slots__ = ("predicates", "n_train", "train_metric", "parent", "children")

    def __init__(self, predicates: tuple[ContextPredicate, ...], n_train: int,
                 train_metric: float, parent: "ContextNode | None"):
        self.predicates = predicates
        self.n_train = n_train
        self.train_metric = train_metric
        self.parent = parent
        self.children: list[ContextNode] = []

    @property
    def depth(self) -> int:
        return len(self.predicates)

    def __repr__(self) -> str:
        desc = ", ".join(p.describe() for p in self.predicates) or "<root>"
        return f"ContextNode({desc!r}, n={self.n_train}, metric={self.train_metric:.4f})"


@dataclass
class TreeStats:
    """Bookkeeping for the search: how many context metric evaluations ran."""

    n_metric_evals: int = 0
    n_nodes: int = 0


@dataclass(frozen=True)
class Partition:
    """One candidate split: per-part predicates and the matching subviews."""

    attribute: str
    predicates: tuple[ContextPredicate, ...]
    parts: tuple[Dataset, ...]
    threshold: float | None = None


def enumerate_splits(view: Dataset, attribute: str, params: TreeParams) -> list[Partition]:
    """Candidate partitions of ``view`` on one contextual attribute.

    Categorical attributes yield the single partition by value; scalar ones
    yield one binary partition per deduplicated within-node quantile
    threshold. A partition containing a part with fewer than 2 rows is
    disqualified.
    """
    attr = view.attribute(attribute)
    if attr.kind == CATEGORICAL:
        codes = view.codes(attribute)
        present = np.unique(codes[codes >= 0])
        if len(present) < 2:
            return []
        preds = []
        parts = []
        for code in present:
            preds.append(ContextPredicate(attribute, "in", values=(attr.categories[code],)))
            parts.append(view._subset(np.flatnonzero(codes == code)))
        if any(p.n_rows < 2 for p in parts):
            return []
        return [Partition(attribute, tuple(preds), tuple(parts))]

    values = view.scalar_values(attribute)
    finite = values[~np.isnan(values)]
    if len(finite) < 4:
        return []
    q = params.quantile_splits
    probs = [(i + 1) / (q + 1) for i in range(q)]
    thresholds = np.unique(np.quantile(finite, probs))
    out = []
    for t in thresholds:
        left = np.flatnonzero(values <= t)
        right = np.flatnonzero(values > t)
        if len(left) < 2 or len(right) < 2:
            continue
        out.append(Partition(
            attribute,
            (ContextPredicate(attribute, "le", threshold=float(t)),
             ContextPredicate(attribute, "gt", threshold=float(t))),
            (view._subset(left), view._subset(right)),
            threshold=float(t),
        ))
    return out


def score_split(partition: Partition, metric: BoundMetric) -> float:
    """Mean association over the partition's parts.

    Signed metrics contribute their absolute value so opposing disparities
    cannot cancel; parts where the metric is undefined contribute 0.
    """
    resolved = metric.resolve(partition.parts[0])
    values = [_part_value(part, resolved) for part in partition.parts]
    return float(np.mean([0.0 if math.isnan(v) else v for v in values]))


def _part_value(part: Dataset, metric: BoundMetric) -> float:
    try:
        return metric.guidance(part)
    except MetricError:
        return math.nan


def find_contexts(train: Dataset, protected: str, output: str, params: TreeParams,
                  metric: BoundMetric, contextual: list[str] | None = None,
                  stats: TreeStats | None = None) -> list[ContextNode]:
    """Grow the guided tree on the training set and return all registered
    contexts in deterministic depth-first order (root first).

    At each node every contextual attribute's partitions are scored; a
    partition is eligible only if some part beats the node's own
    association, and the recursion descends into every part of the best
    split only when that split's mean score beats the node. Contexts are
    registered when they hold at least ``params.min_size`` training rows;
    the root is always registered.
    """
    if contextual is None:
        contextual = [a.name for a in train.schema if a.role == "contextual"]
    metric = metric.resolve(train)
    stats = stats if stats is not None else TreeStats()
    registered: list[ContextNode] = []

    def evaluate(view: Dataset) -> float:
        stats.n_metric_evals += 1
        return _part_value(view, metric)

    def recurse(view: Dataset, predicates: tuple[ContextPredicate, ...],
                value: float, parent: ContextNode | None) -> None:
        stats.n_nodes += 1
        is_root = parent is None
        node = ContextNode(predicates, view.n_rows, value, parent)
        if is_root:
            if math.isnan(value):
                raise MetricError("root metric undefined on the training population")
            registered.append(node)
        elif view.n_rows >= params.min_size:
            parent.children.append(node)
            registered.append(node)
        if view.n_rows < params.min_size:
            return
        if len(predicates) >= params.max_depth or math.isnan(value):
            return

        best_key = None
        best_parts = None
        for attr_idx, attr in enumerate(contextual):
            for partition in enumerate_splits(view, attr, params):
                part_values = [evaluate(part) for part in partition.parts]
                zeroed = [0.0 if math.isnan(v) else v for v in part_values]
                if not any(v > value for v in zeroed):
                    continue  # ineligible split scores 0 and can never win
                score = float(np.mean(zeroed))
                thr = partition.threshold if partition.threshold is not None else -math.inf
                key = (-score, attr_idx, thr)
                if best_key is None or key < best_key:
                    best_key = key
                    best_parts = (partition, part_values)
        if best_key is None or -best_key[0] <= value:
            return
        partition, part_values = best_parts
        for pred, part, part_value in zip(partition.predicates, partition.parts, part_values):
            recurse(part, predicates + (pred,), part_value, node)

    recurse(train, (), evaluate(train), None)
    return registered


def exhaustive_contexts(train: Dataset, protected: str, output: str, params: TreeParams,
                        metric: BoundMetric, contextual: list[str] | None = None
                        ) -> list[tuple[tuple[ContextPredicate, ...], int, float]]:
    """Brute-force baseline: every conjunction of single-category predicates
    over categorical contextual attributes, up to ``max_depth`` clauses and
    with at least ``min_size`` supporting rows.

    Returns (predicates, support, association) triples, the unguided-search
    analog of the tree's candidate set. Continuous attributes are rejected;
    the unguided strategy requires discretized features.
    """
    if contextual is None:
        contextual = [a.name for a in train.schema if a.role == "contextual"]
    for name in contextual:
        if train.attribute(name).kind != CATEGORICAL:
            raise MetricError(f"exhaustive enumeration requires categorical attributes, got {name!r}")
    metric = metric.resolve(train)
    results: list[tuple[tuple[ContextPredicate, ...], int, float]] = []

    def descend(start: int, rows: np.ndarray, preds: tuple[ContextPredicate, ...]) -> None:
        sub = train._subset(rows)
        results.append((preds, len(rows), _part_value(sub, metric)))
        if len(preds) >= params.max_depth:
            return
        for ai in range(start, len(contextual)):
            attr = train.attribute(contextual[ai])
            codes = train.codes(contextual[ai])[rows]
            for code, cat in enumerate(attr.categories):
                keep = rows[codes == code]
                if len(keep) < params.min_size:
                    continue
                descend(ai + 1, keep, preds + (ContextPredicate(contextual[ai], "in", values=(cat,)),))

    descend(0, np.arange(train.n_rows), ())
    return results
