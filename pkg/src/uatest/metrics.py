"""Canonical association metrics over contingency tables and scalar columns.

All metric functions are pure. Table-based metrics (difference, ratio,
normalized mutual information) also come in vectorized form over stacks of
tables, which the resampling and tree-search code paths rely on.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy.special import expit

from .dataset import CATEGORICAL, CONTINUOUS, ORDINAL, Dataset

DIFF = "diff"
RATIO = "ratio"
NMI = "nmi"
MI = "mi"
CORR = "corr"
REG = "reg"
METRIC_NAMES = (DIFF, RATIO, NMI, MI, CORR, REG)

MIN_STRATUM = 10


class MetricError(Exception):
    """A metric's preconditions do not hold on the given data."""


@dataclass(frozen=True)
class MetricKind:
    """A metric name plus the explanatory attribute it is conditioned on, if any."""

    name: str
    explanatory: str | None = None

    def __post_init__(self) -> None:
        if self.name not in METRIC_NAMES:
            raise MetricError(f"unknown metric {self.name!r}")

    @property
    def display(self) -> str:
        base = self.name.upper()
        return f"COND-{base}" if self.explanatory else base

    @property
    def signed(self) -> bool:
        return self.name in (DIFF, RATIO, CORR)


@dataclass(frozen=True)
class MetricValue:
    kind: MetricKind
    value: float


@dataclass(frozen=True)
class ContingencyTable:
    """Frequency cross-tabulation: output categories as rows, protected as columns."""

    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    counts: np.ndarray  # (r, c) int64

    @property
    def n(self) -> int:
        return int(self.counts.sum())

    @property
    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    @property
    def col_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


def contingency(view: Dataset, protected: str, output: str) -> ContingencyTable:
    """Cross-tabulate ``output`` (rows) against ``protected`` (columns).

    The table layout follows the schema's category order so that equal
    populations always produce identical tables. Rows with a missing value
    in either attribute are not counted.
    """
    p_attr = view.attribute(protected)
    o_attr = view.attribute(output)
    for attr in (p_attr, o_attr):
        if attr.kind not in (CATEGORICAL, ORDINAL):
            raise MetricError(f"contingency requires categorical attributes, got {attr.kind} {attr.name!r}")
    s = view.codes(protected)
    o = view.codes(output)
    ok = (s >= 0) & (o >= 0)
    r = len(o_attr.categories)
    c = len(p_attr.categories)
    joint = np.bincount(o[ok].astype(np.int64) * c + s[ok], minlength=r * c)
    return ContingencyTable(o_attr.categories, p_attr.categories, joint.reshape(r, c))


# -- vectorized table statistics --------------------------------------------
#
# Each helper maps a stack of tables with shape (..., r, c) to values with
# shape (...); NaN marks tables where the metric is undefined.


def mi_from_tables(tables: np.ndarray, normalized: bool) -> np.ndarray:
    t = np.asarray(tables, dtype=np.float64)
    n = t.sum(axis=(-2, -1), keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        p = t / n
        pr = p.sum(axis=-1, keepdims=True)
        pc = p.sum(axis=-2, keepdims=True)
        terms = np.where(p > 0, p * np.log(p / (pr * pc)), 0.0)
        mi = terms.sum(axis=(-2, -1))
        hr = -np.where(pr > 0, pr * np.log(pr), 0.0).sum(axis=(-2, -1))
        hc = -np.where(pc > 0, pc * np.log(pc), 0.0).sum(axis=(-2, -1))
        out = mi / np.minimum(hr, hc) if normalized else mi
    live_rows = (t.sum(axis=-1) > 0).sum(axis=-1)
    live_cols = (t.sum(axis=-2) > 0).sum(axis=-1)
    bad = (live_rows < 2) | (live_cols < 2) | (n[..., 0, 0] == 0)
    return np.where(bad, np.nan, out)


def diff_from_tables(tables: np.ndarray, target_row: int, col_a: int, col_b: int) -> np.ndarray:
    t = np.asarray(tables, dtype=np.float64)
    cols = t.sum(axis=-2)
    na, nb = cols[..., col_a], cols[..., col_b]
    with np.errstate(divide="ignore", invalid="ignore"):
        pa = t[..., target_row, col_a] / na
        pb = t[..., target_row, col_b] / nb
        out = pa - pb
    return np.where((na == 0) | (nb == 0), np.nan, out)


def ratio_from_tables(tables: np.ndarray, target_row: int, col_a: int, col_b: int) -> np.ndarray:
    t = np.asarray(tables, dtype=np.float64)
    cols = t.sum(axis=-2)
    na, nb = cols[..., col_a], cols[..., col_b]
    with np.errstate(divide="ignore", invalid="ignore"):
        pa = t[..., target_row, col_a] / na
        pb = t[..., target_row, col_b] / nb
        out = pa / pb - 1.0
    bad = (na == 0) | (nb == 0) | (t[..., target_row, col_b] == 0)
    return np.where(bad, np.nan, out)


# -- scalar metric operations ------------------------------------------------


def mutual_information(table: ContingencyTable, normalized: bool = True) -> MetricValue:
    """Plug-in mutual information in nats; the normalized variant divides by
    the smaller marginal entropy and lies in [0, 1]."""
    value = float(mi_from_tables(table.counts, normalized))
    if np.isnan(value):
        raise MetricError("no variation: a marginal of the contingency table is degenerate")
    return MetricValue(MetricKind(NMI if normalized else MI), value)


def binary_difference(table: ContingencyTable, target_output: str,
                      group_a: str, group_b: str) -> MetricValue:
    """Pr(target | group_a) - Pr(target | group_b) on a 2x2 table."""
    ti, ja, jb = _resolve_binary(table, target_output, group_a, group_b)
    value = float(diff_from_tables(table.counts, ti, ja, jb))
    if np.isnan(value):
        raise MetricError("empty group column in contingency table")
    return MetricValue(MetricKind(DIFF), value)


def binary_ratio(table: ContingencyTable, target_output: str,
                 group_a: str, group_b: str) -> MetricValue:
    """Pr(target | group_a) / Pr(target | group_b) - 1 on a 2x2 table."""
    ti, ja, jb = _resolve_binary(table, target_output, group_a, group_b)
    value = float(ratio_from_tables(table.counts, ti, ja, jb))
    if np.isnan(value):
        raise MetricError("undefined ratio: reference proportion is zero")
    return MetricValue(MetricKind(RATIO), value)


def _resolve_binary(table: ContingencyTable, target_output: str,
                    group_a: str, group_b: str) -> tuple[int, int, int]:
    if table.counts.shape != (2, 2):
        raise MetricError(
            f"binary metric requires a 2x2 table, got {table.counts.shape[0]}x{table.counts.shape[1]}"
        )
    try:
        ti = table.row_labels.index(target_output)
        ja = table.col_labels.index(group_a)
        jb = table.col_labels.index(group_b)
    except ValueError as exc:
        raise MetricError(f"unknown table label: {exc}") from None
    if ja == jb:
        raise MetricError("group_a and group_b must differ")
    return ti, ja, jb


def pearson_correlation(x: np.ndarray, y: np.ndarray) -> MetricValue:
    """Sample Pearson correlation of two equal-length scalar columns."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise MetricError("columns must have equal length")
    ok = ~(np.isnan(x) | np.isnan(y))
    x, y = x[ok], y[ok]
    if len(x) < 3:
        raise MetricError("correlation requires at least 3 paired values")
    sx = x.std()
    sy = y.std()
    if sx == 0 or sy == 0:
        raise MetricError("constant column: correlation undefined")
    r = float(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy))
    return MetricValue(MetricKind(CORR), max(-1.0, min(1.0, r)))


# -- regression label scoring -------------------------------------------------


@dataclass(frozen=True)
class RegressionScores:
    """Per-label logistic coefficients, rough standard errors, and intercept."""

    labels: tuple[str, ...]
    coefficients: np.ndarray
    stderr: np.ndarray
    intercept: float
    intercept_stderr: float
    converged: bool

    def scores(self) -> np.ndarray:
        """Ranking scores |coefficient| / stderr, one per label."""
        return np.abs(self.coefficients) / self.stderr

    def top_labels(self, k: int) -> tuple[str, ...]:
        order = np.argsort(-self.scores(), kind="stable")
        return tuple(self.labels[i] for i in order[:k])


def logistic_label_scores(indicators: np.ndarray, protected: np.ndarray,
                          labels: Sequence[str], l2: float = 1e-3,
                          max_iter: int = 100, tol: float = 1e-8) -> RegressionScores:
    """Fit Pr[S=1 | label indicators] with an L2-penalized logistic model.

    The ridge penalty (excluding the intercept) keeps every coefficient
    finite even under perfect separation. Scores |beta| / stderr rank the
    labels by association strength with the protected attribute.
    """
    b = np.asarray(indicators, dtype=np.float64)
    y = np.asarray(protected, dtype=np.float64)
    if b.ndim != 2 or b.shape[0] != len(y):
        raise MetricError("indicator matrix must be (n_rows, n_labels)")
    if b.shape[1] != len(labels):
        raise MetricError("one label name per indicator column required")
    if not np.all((b == 0) | (b == 1)):
        raise MetricError("label indicators must be 0/1")
    uniq = np.unique(y)
    if not np.array_equal(uniq, [0.0, 1.0]):
        raise MetricError("protected column must be binary with both values present")

    n, d = b.shape
    x = np.hstack([np.ones((n, 1)), b])
    pen = np.full(d + 1, float(l2))
    pen[0] = 0.0
    beta = np.zeros(d + 1)

    def objective(bt: np.ndarray) -> float:
        eta = x @ bt
        ll = float(np.sum(y * eta - np.logaddexp(0.0, eta)))
        return ll - 0.5 * float(np.sum(pen * bt * bt))

    obj = objective(beta)
    converged = False
    hess = np.eye(d + 1)
    for _ in range(max_iter):
        eta = np.clip(x @ beta, -30, 30)
        p = expit(eta)
        w = np.clip(p * (1.0 - p), 1e-10, None)
        grad = x.T @ (y - p) - pen * beta
        hess = (x.T * w) @ x + np.diag(np.maximum(pen, 1e-10))
        try:
            step = np.linalg.solve(hess, grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hess, grad, rcond=None)[0]
        scale = 1.0
        for _ in range(30):  # damped Newton: never accept a worse penalized likelihood
            cand = beta + scale * step
            cand_obj = objective(cand)
            if cand_obj >= obj - 1e-12:
                break
            scale *= 0.5
        beta = beta + scale * step
        obj = objective(beta)
        if np.max(np.abs(scale * step)) < tol:
            converged = True
            break

    cov = np.linalg.inv(hess)
    se = np.sqrt(np.clip(np.diag(cov), 1e-300, None))
    return RegressionScores(
        labels=tuple(labels),
        coefficients=beta[1:].copy(),
        stderr=se[1:].copy(),
        intercept=float(beta[0]),
        intercept_stderr=float(se[0]),
        converged=converged,
    )


# -- bound metrics and conditioning -------------------------------------------


@dataclass(frozen=True)
class BoundMetric:
    """A metric kind bound to concrete protected/output attributes.

    Binding fixes the orientation of signed metrics: ``target`` is the output
    category whose probability is compared, between ``group_a`` and
    ``group_b`` of the protected attribute. The tree search and the
    statistical tests both evaluate metrics through this object.
    """

    kind: MetricKind
    protected: str
    output: str
    target: str | None = None
    group_a: str | None = None
    group_b: str | None = None

    @property
    def tabular(self) -> bool:
        return self.kind.name in (DIFF, RATIO, NMI)

    @property
    def conditional(self) -> bool:
        return self.kind.explanatory is not None

    def resolve(self, view: Dataset) -> "BoundMetric":
        """Fill default orientation from the schema's category order.

        Defaults: compare the last output category between the first and the
        last protected category, matching a (negative, positive) reading of
        binary columns.
        """
        if self.kind.name in (DIFF, RATIO):
            p = view.attribute(self.protected)
            o = view.attribute(self.output)
            for attr, role in ((p, "protected"), (o, "output")):
                if attr.kind != CATEGORICAL or len(attr.categories or ()) != 2:
                    raise MetricError(
                        f"{self.kind.display} requires a binary categorical {role} "
                        f"attribute, got {attr.name!r}"
                    )
            return BoundMetric(
                self.kind, self.protected, self.output,
                target=self.target if self.target is not None else o.categories[-1],
                group_a=self.group_a if self.group_a is not None else p.categories[0],
                group_b=self.group_b if self.group_b is not None else p.categories[-1],
            )
        if self.kind.name == NMI:
            for name, role in ((self.protected, "protected"), (self.output, "output")):
                attr = view.attribute(name)
                if attr.kind == CONTINUOUS:
                    raise MetricError(f"NMI requires a categorical {role} attribute, got {name!r}")
                if len(attr.categories or ()) < 2:
                    raise MetricError(f"no variation: attribute {name!r} has fewer than 2 categories")
            return self
        if self.kind.name == CORR:
            for name, role in ((self.protected, "protected"), (self.output, "output")):
                if not view.attribute(name).is_scalar:
                    raise MetricError(f"CORR requires a scalar {role} attribute, got {name!r}")
            return self
        raise MetricError(f"metric {self.kind.name!r} cannot be evaluated directly on a view")

    def _indices(self, view: Dataset) -> tuple[int, int, int]:
        o = view.attribute(self.output)
        p = view.attribute(self.protected)
        return (
            o.categories.index(self.target),
            p.categories.index(self.group_a),
            p.categories.index(self.group_b),
        )

    def value_from_tables(self, view: Dataset, tables: np.ndarray) -> np.ndarray:
        """Vectorized evaluation over a stack of tables (NaN where undefined)."""
        if self.kind.name == NMI:
            return mi_from_tables(tables, normalized=True)
        ti, ja, jb = self._indices(view)
        if self.kind.name == DIFF:
            return diff_from_tables(tables, ti, ja, jb)
        if self.kind.name == RATIO:
            return ratio_from_tables(tables, ti, ja, jb)
        raise MetricError(f"metric {self.kind.name!r} is not table-based")

    def value(self, view: Dataset) -> float:
        """Point estimate on a view; raises MetricError when undefined."""
        if self.conditional:
            return conditional_metric(view, self).aggregate.value
        if self.tabular:
            table = contingency(view, self.protected, self.output)
            v = float(self.value_from_tables(view, table.counts))
            if np.isnan(v):
                raise MetricError(f"{self.kind.display} undefined on this population")
            return v
        if self.kind.name == CORR:
            return pearson_correlation(
                view.scalar_values(self.protected), view.scalar_values(self.output)
            ).value
        raise MetricError(f"metric {self.kind.name!r} cannot be evaluated directly")

    def guidance(self, view: Dataset) -> float:
        """Tree-search score: |value| for signed metrics so that opposing
        disparities in sibling parts cannot cancel."""
        v = self.value(view)
        return abs(v) if self.kind.signed else v

    def unconditional(self) -> "BoundMetric":
        return BoundMetric(MetricKind(self.kind.name), self.protected, self.output,
                           self.target, self.group_a, self.group_b)

    def conditioned_on(self, explanatory: str) -> "BoundMetric":
        return BoundMetric(MetricKind(self.kind.name, explanatory), self.protected,
                           self.output, self.target, self.group_a, self.group_b)


@dataclass(frozen=True)
class StratumPart:
    """One explanatory stratum: its value, size, and metric estimate (or the
    reason it was left out of the aggregate)."""

    value: str
    size: int
    estimate: float | None
    excluded: str | None = None


@dataclass(frozen=True)
class ConditionalValue:
    aggregate: MetricValue
    strata: tuple[StratumPart, ...]


def conditional_metric(view: Dataset, bound: BoundMetric,
                       min_stratum: int = MIN_STRATUM) -> ConditionalValue:
    """Base metric per explanatory stratum plus their size-weighted mean.

    Strata smaller than ``min_stratum`` rows, or where the base metric is
    undefined, are excluded from the aggregate and flagged.
    """
    explanatory = bound.kind.explanatory
    if explanatory is None:
        raise MetricError("conditional_metric requires a conditioned metric kind")
    e_attr = view.attribute(explanatory)
    if e_attr.kind == CONTINUOUS:
        raise MetricError(f"explanatory attribute {explanatory!r} must be categorical")
    base = bound.unconditional()
    codes = view.codes(explanatory)
    parts: list[StratumPart] = []
    weighted = 0.0
    weight = 0
    for code, cat in enumerate(e_attr.categories):
        rows = np.flatnonzero(codes == code)
        if len(rows) == 0:
            continue
        stratum = view._subset(rows)
        if len(rows) < min_stratum:
            parts.append(StratumPart(cat, len(rows), None, excluded="below minimum stratum size"))
            continue
        try:
            est = base.value(stratum)
        except MetricError as exc:
            parts.append(StratumPart(cat, len(rows), None, excluded=str(exc)))
            continue
        parts.append(StratumPart(cat, len(rows), est))
        weighted += len(rows) * est
        weight += len(rows)
    if weight == 0:
        raise MetricError("no explanatory stratum is large enough to evaluate")
    return ConditionalValue(
        MetricValue(bound.kind, weighted / weight),
        tuple(parts),
    )
