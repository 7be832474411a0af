"""The three investigation primitives and their train/validate/report pipeline.

Testing checks a suspected association between one or more protected
attributes and an output. Discovery ranks a large label space by regression
scores and tests the strongest labels individually. ErrorProfiling derives a
per-row error quantity from predictions and ground truth and tests that
instead of the raw output.

Candidate contexts come from the guided tree on training data; every
reported statistic is computed on held-out test rows, corrected as one
family per investigation.
"""

from __future__ import annotations

import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .dataset import (
    CATEGORICAL,
    CONTINUOUS,
    AttributeSchema,
    ContextPredicate,
    DataError,
    Dataset,
    DataSource,
)
from .metrics import (
    CORR,
    DIFF,
    NMI,
    BoundMetric,
    MetricError,
    MetricKind,
    conditional_metric,
    contingency,
    logistic_label_scores,
)
from .stats import StatConfig, TestedMetric, apply_corrections, test_metric
from .tree import ContextNode, TreeParams, TreeStats, find_contexts

logger = logging.getLogger(__name__)

TESTING = "testing"
DISCOVERY = "discovery"
ERROR_PROFILING = "error_profiling"
KINDS = (TESTING, DISCOVERY, ERROR_PROFILING)

ABSOLUTE = "absolute"
ZERO_ONE = "zero_one"

_VALIDATE_STREAM = 1


@dataclass(frozen=True)
class InvestigationSpec:
    """What to investigate: attribute roles, metric, and search/stat knobs."""

    kind: str
    protected: tuple[str, ...]
    output: str | tuple[str, ...]
    contextual: tuple[str, ...] = ()
    explanatory: str | None = None
    metric: str | None = None
    top_k: int = 35
    ground_truth: str | None = None
    error_kind: str = ABSOLUTE
    target_output: str | None = None
    group_a: str | None = None
    group_b: str | None = None
    tree: TreeParams = field(default_factory=TreeParams)
    stats: StatConfig = field(default_factory=StatConfig)

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"unknown investigation kind {self.kind!r}")
        if isinstance(self.protected, str):
            object.__setattr__(self, "protected", (self.protected,))
        else:
            object.__setattr__(self, "protected", tuple(self.protected))
        if not self.protected:
            raise DataError("an investigation needs at least one protected attribute")
        if isinstance(self.output, (list, tuple)):
            object.__setattr__(self, "output", tuple(self.output))
        object.__setattr__(self, "contextual", tuple(self.contextual))
        if self.kind == DISCOVERY:
            if not isinstance(self.output, tuple) or len(self.output) < 1:
                raise DataError("discovery requires a tuple of label indicator columns as output")
            if self.top_k < 1:
                raise DataError("top_k must be at least 1")
        elif not isinstance(self.output, str):
            raise DataError(f"{self.kind} requires a single output attribute")
        if self.kind == ERROR_PROFILING:
            if self.ground_truth is None:
                raise DataError("error profiling requires a ground-truth column")
            if self.error_kind not in (ABSOLUTE, ZERO_ONE):
                raise DataError(f"unknown error kind {self.error_kind!r}")

    def used_attributes(self) -> tuple[str, ...]:
        names = list(self.protected) + list(self.contextual)
        if self.explanatory:
            names.append(self.explanatory)
        names += list(self.output) if isinstance(self.output, tuple) else [self.output]
        if self.ground_truth:
            names.append(self.ground_truth)
        seen: dict[str, None] = {}
        for n in names:
            seen.setdefault(n)
        return tuple(seen)


def compute_error(predictions: Sequence, truth: Sequence, kind: str) -> list:
    """Per-row error of predictions against ground truth.

    ``absolute`` takes |prediction - truth| of scalar columns; ``zero_one``
    marks categorical mismatches with "1". A missing value on either side
    yields a missing error.
    """
    if len(predictions) != len(truth):
        raise DataError("prediction and truth columns must have equal length")
    out = []
    if kind == ABSOLUTE:
        for p, t in zip(predictions, truth):
            if p is None or t is None:
                out.append(None)
            else:
                out.append(abs(float(p) - float(t)))
        return out
    if kind == ZERO_ONE:
        for p, t in zip(predictions, truth):
            if p is None or t is None:
                out.append(None)
            else:
                out.append("0" if p == t else "1")
        return out
    raise DataError(f"unknown error kind {kind!r}")


def _attach_error(view: Dataset, spec: InvestigationSpec) -> Dataset:
    pred_attr = view.attribute(spec.output)
    truth_attr = view.attribute(spec.ground_truth)
    name = _output_display(spec)
    if spec.error_kind == ABSOLUTE:
        if not (pred_attr.is_scalar and truth_attr.is_scalar):
            raise DataError("absolute error requires scalar prediction and truth columns")
        values = compute_error(view.values(spec.output), view.values(spec.ground_truth), ABSOLUTE)
        attr = AttributeSchema(name, CONTINUOUS, "output")
    else:
        if pred_attr.kind != CATEGORICAL or truth_attr.kind != CATEGORICAL:
            raise DataError("zero_one error requires categorical prediction and truth columns")
        values = compute_error(view.values(spec.output), view.values(spec.ground_truth), ZERO_ONE)
        attr = AttributeSchema(name, CATEGORICAL, "output", categories=("0", "1"))
    return view.with_column(attr, values)


def select_metric(view: Dataset, protected: str, output: str,
                  spec: InvestigationSpec) -> BoundMetric:
    """Metric choice by data type: DIFF for binary pairs, NMI for broader
    categorical pairs, CORR for scalar pairs; explicit overrides win."""
    name = spec.metric
    if name is None:
        p = view.attribute(protected)
        o = view.attribute(output)
        if p.kind == CATEGORICAL and o.kind == CATEGORICAL:
            binary = len(p.categories or ()) == 2 and len(o.categories or ()) == 2
            name = DIFF if binary else NMI
        elif p.is_scalar and o.is_scalar:
            name = CORR
        else:
            raise MetricError(
                f"no canonical metric for protected {p.kind!r} vs output {o.kind!r}; "
                "pass an explicit metric"
            )
    kind = MetricKind(name, spec.explanatory)
    bound = BoundMetric(kind, protected, output, spec.target_output, spec.group_a, spec.group_b)
    return bound.resolve(view)


@dataclass
class TrainUnit:
    """One protected attribute (and, for discovery, one label) with its
    guidance metric and trained candidate contexts."""

    protected: str
    output: str
    label: str | None
    bound: BoundMetric
    contexts: list[ContextNode]
    tree_stats: TreeStats


@dataclass
class TrainedInvestigation:
    spec: InvestigationSpec
    units: list[TrainUnit]
    train_size: int
    dropped_train: int
    output_display: str


def _output_display(spec: InvestigationSpec) -> str:
    if spec.kind == DISCOVERY:
        return "Labels"
    if spec.kind == ERROR_PROFILING:
        tag = "Abs. Error" if spec.error_kind == ABSOLUTE else "0/1 Error"
        return f"{tag}({spec.output})"
    return spec.output


def train(spec: InvestigationSpec, train_view: Dataset) -> TrainedInvestigation:
    """Derive candidate contexts on the training set for every protected
    attribute (and each top-ranked label, for discovery)."""
    cleaned = train_view.drop_missing(spec.used_attributes())
    dropped = train_view.n_rows - cleaned.n_rows
    if dropped:
        logger.info("dropped %d training rows with missing values", dropped)

    output_col: str | tuple[str, ...] = spec.output
    if spec.kind == ERROR_PROFILING:
        cleaned = _attach_error(cleaned, spec)
        output_col = _output_display(spec)

    contextual = list(spec.contextual)
    units: list[TrainUnit] = []
    for s in spec.protected:
        if spec.kind == DISCOVERY:
            units.extend(_train_discovery_units(spec, cleaned, s, contextual))
        else:
            bound = select_metric(cleaned, s, output_col, spec)
            guide = bound.unconditional()  # contexts are found on the raw metric
            stats = TreeStats()
            contexts = find_contexts(cleaned, s, output_col, spec.tree, guide,
                                     contextual=contextual, stats=stats)
            units.append(TrainUnit(s, output_col, None, bound, contexts, stats))
    return TrainedInvestigation(spec, units, cleaned.n_rows, dropped, _output_display(spec))


def _train_discovery_units(spec: InvestigationSpec, cleaned: Dataset, s: str,
                           contextual: list[str]) -> list[TrainUnit]:
    p_attr = cleaned.attribute(s)
    if p_attr.kind != CATEGORICAL or len(p_attr.categories or ()) != 2:
        raise DataError(f"discovery requires a binary protected attribute, got {s!r}")
    labels = list(spec.output)
    indicators = np.empty((cleaned.n_rows, len(labels)))
    for j, name in enumerate(labels):
        attr = cleaned.attribute(name)
        if attr.kind != CATEGORICAL or len(attr.categories or ()) != 2:
            raise DataError(f"discovery label column {name!r} must be binary categorical")
        present = spec.target_output if spec.target_output in (attr.categories or ()) else attr.categories[-1]
        indicators[:, j] = cleaned.codes(name) == attr.categories.index(present)
    y = cleaned.codes(s) == len(p_attr.categories) - 1
    scores = logistic_label_scores(indicators, y.astype(float), labels)
    top = scores.top_labels(spec.top_k)
    logger.info("discovery on %s: testing top %d of %d labels", s, len(top), len(labels))

    units = []
    for label in top:
        attr = cleaned.attribute(label)
        target = spec.target_output if spec.target_output in (attr.categories or ()) else attr.categories[-1]
        bound = BoundMetric(MetricKind(DIFF, spec.explanatory), s, label,
                            target, spec.group_a, spec.group_b).resolve(cleaned)
        stats = TreeStats()
        contexts = find_contexts(cleaned, s, label, spec.tree, bound.unconditional(),
                                 contextual=contextual, stats=stats)
        units.append(TrainUnit(s, label, label, bound, contexts, stats))
    return units


# -- findings and validation ---------------------------------------------------


@dataclass(frozen=True)
class TableDisplay:
    """Contingency counts kept for report rendering."""

    row_attr: str
    col_attr: str
    row_labels: tuple[str, ...]
    col_labels: tuple[str, ...]
    counts: tuple[tuple[int, ...], ...]


@dataclass(frozen=True)
class DecileRow:
    lo: float
    hi: float
    n: int
    minimum: float
    q1: float
    median: float
    q3: float
    maximum: float


@dataclass(frozen=True)
class DecileDisplay:
    """Five-number summaries of the output per protected-attribute decile,
    the text stand-in for a scatter plot."""

    protected: str
    output: str
    rows: tuple[DecileRow, ...]


@dataclass
class StratumFinding:
    """Per-explanatory-stratum test attached to a conditional finding."""

    value: str
    size: int
    metric: str
    tested: TestedMetric | None
    note: str | None = None
    display: TableDisplay | DecileDisplay | None = None


@dataclass
class Finding:
    """One tested (context, protected attribute, output) hypothesis."""

    protected: str
    output: str
    label: str | None
    predicates: tuple[ContextPredicate, ...]
    size: int
    metric: str
    tested: TestedMetric
    display: TableDisplay | DecileDisplay | None = None
    strata: tuple[StratumFinding, ...] = ()
    is_global: bool = False
    rank: int | None = None

    def strength(self) -> float:
        """Ranking key: the corrected-CI bound nearest zero, signed metrics
        taken by magnitude. Intervals straddling zero have strength 0."""
        lo, hi = self.tested.corrected_ci
        if not self.tested.value.kind.signed:
            return max(0.0, lo)
        if lo > 0:
            return lo
        if hi < 0:
            return -hi
        return 0.0


@dataclass
class ValidationResult:
    spec: InvestigationSpec
    findings: list[Finding]
    family_size: int
    train_size: int
    test_size: int
    dropped_train: int
    dropped_test: int
    dropped_contexts: int
    output_display: str


def _make_display(view: Dataset, bound: BoundMetric) -> TableDisplay | DecileDisplay | None:
    if bound.kind.name == CORR:
        return _decile_summary(view, bound)
    table = contingency(view, bound.protected, bound.output)
    return TableDisplay(
        row_attr=bound.output,
        col_attr=bound.protected,
        row_labels=table.row_labels,
        col_labels=table.col_labels,
        counts=tuple(tuple(int(x) for x in row) for row in table.counts),
    )


def _decile_summary(view: Dataset, bound: BoundMetric) -> DecileDisplay:
    s = view.scalar_values(bound.protected)
    o = view.scalar_values(bound.output)
    ok = ~(np.isnan(s) | np.isnan(o))
    s, o = s[ok], o[ok]
    edges = np.unique(np.quantile(s, np.linspace(0.0, 1.0, 11)))
    rows = []
    for i in range(len(edges) - 1):
        lo, hi = edges[i], edges[i + 1]
        mask = (s >= lo) & (s <= hi) if i == len(edges) - 2 else (s >= lo) & (s < hi)
        vals = o[mask]
        if len(vals) == 0:
            continue
        q = np.quantile(vals, [0.0, 0.25, 0.5, 0.75, 1.0])
        rows.append(DecileRow(float(lo), float(hi), int(len(vals)),
                              *(float(v) for v in q)))
    return DecileDisplay(bound.protected, bound.output, tuple(rows))


def validate(trained: TrainedInvestigation, test_view: Dataset,
             threads: int | None = None) -> ValidationResult:
    """Re-materialize every candidate context on held-out test rows, test it,
    and correct the whole family of hypotheses together.

    Non-global contexts with fewer than min_size/2 test rows are dropped with
    a note. Results are bit-identical for any thread count: each task derives
    its own RNG stream from the master seed and its task index.
    """
    spec = trained.spec
    cfg = spec.stats
    cleaned = test_view.drop_missing(spec.used_attributes())
    dropped_test = test_view.n_rows - cleaned.n_rows
    if dropped_test:
        logger.info("dropped %d test rows with missing values", dropped_test)
    if spec.kind == ERROR_PROFILING:
        cleaned = _attach_error(cleaned, spec)

    min_test = spec.tree.min_size // 2
    tasks: list[tuple[TrainUnit, ContextNode, Dataset]] = []
    dropped_contexts = 0
    for unit in trained.units:
        for node in unit.contexts:
            ctx = cleaned.select(node.predicates)
            if node.depth > 0 and ctx.n_rows < min_test:
                dropped_contexts += 1
                logger.info("dropped context %s: only %d test rows",
                            [p.describe() for p in node.predicates], ctx.n_rows)
                continue
            tasks.append((unit, node, ctx))

    def run_task(item: tuple[int, tuple[TrainUnit, ContextNode, Dataset]]) -> Finding | None:
        i, (unit, node, ctx) = item
        return _test_context(unit, node, ctx, cfg, (_VALIDATE_STREAM, i))

    indexed = list(enumerate(tasks))
    if threads is not None and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            findings = list(pool.map(run_task, indexed))
    else:
        findings = [run_task(item) for item in indexed]

    kept = [f for f in findings if f is not None]
    dropped_contexts += len(findings) - len(kept)
    family: list[TestedMetric] = []
    for f in kept:
        family.append(f.tested)
        family.extend(sf.tested for sf in f.strata if sf.tested is not None)
    apply_corrections(family, cfg.conf)
    return ValidationResult(
        spec=spec,
        findings=kept,
        family_size=len(family),
        train_size=trained.train_size,
        test_size=cleaned.n_rows,
        dropped_train=trained.dropped_train,
        dropped_test=dropped_test,
        dropped_contexts=dropped_contexts,
        output_display=trained.output_display,
    )


def _test_context(unit: TrainUnit, node: ContextNode, ctx: Dataset, cfg: StatConfig,
                  entropy: tuple[int, ...]) -> Finding | None:
    bound = unit.bound
    try:
        tested = test_metric(ctx, bound, cfg, entropy)
    except MetricError as exc:
        logger.info("context %s untestable: %s", [p.describe() for p in node.predicates], exc)
        return None
    display = _make_display(ctx, bound)
    strata: tuple[StratumFinding, ...] = ()
    if bound.conditional:
        strata = _test_strata(ctx, bound, cfg, entropy)
    return Finding(
        protected=unit.protected,
        output=unit.output,
        label=unit.label,
        predicates=node.predicates,
        size=ctx.n_rows,
        metric=bound.kind.display,
        tested=tested,
        display=display,
        strata=strata,
        is_global=node.depth == 0,
    )


def _test_strata(ctx: Dataset, bound: BoundMetric, cfg: StatConfig,
                 entropy: tuple[int, ...]) -> tuple[StratumFinding, ...]:
    """Test each explanatory stratum with the unconditional base metric; the
    strata join the same correction family as their parent finding."""
    base = bound.unconditional()
    cond = conditional_metric(ctx, bound)
    e_attr = ctx.attribute(bound.kind.explanatory)
    codes = ctx.codes(bound.kind.explanatory)
    out = []
    for k, part in enumerate(cond.strata):
        rows = np.flatnonzero(codes == e_attr.categories.index(part.value))
        stratum = ctx._subset(rows)
        if part.excluded is not None:
            out.append(StratumFinding(part.value, part.size, base.kind.display,
                                      None, note=part.excluded))
            continue
        try:
            tested = test_metric(stratum, base, cfg, entropy + (k,))
        except MetricError as exc:
            out.append(StratumFinding(part.value, part.size, base.kind.display,
                                      None, note=str(exc)))
            continue
        out.append(StratumFinding(part.value, part.size, base.kind.display, tested,
                                  display=_make_display(stratum, base.resolve(stratum))))
    return tuple(out)


# -- filtering, ranking, reports -------------------------------------------------


@dataclass
class ReportModel:
    """Everything a rendered report contains, per protected attribute."""

    kind: str
    protected: str
    output: str
    explanatory: str | None
    metric: str
    conf: float
    family_size: int
    train_size: int
    test_size: int
    dropped_train: int
    dropped_test: int
    global_finding: Finding | None
    findings: tuple[Finding, ...]


def filter_and_rank(result: ValidationResult, conf: float | None = None) -> list[ReportModel]:
    """Keep corrected-significant contexts whose effect strictly exceeds every
    surviving ancestor's, ranked by corrected-CI strength; the global
    population always leads its report regardless of significance."""
    spec = result.spec
    conf = spec.stats.conf if conf is None else conf
    alpha = 1.0 - conf
    reports = []
    for s in spec.protected:
        findings = [f for f in result.findings if f.protected == s]
        if spec.kind == DISCOVERY:
            global_finding = None
            candidates = findings
        else:
            global_finding = next((f for f in findings if f.is_global), None)
            candidates = [f for f in findings if not f.is_global]

        significant = [f for f in candidates if f.tested.corrected_p <= alpha]
        pool = list(significant)
        if global_finding is not None and global_finding.tested.corrected_p <= alpha:
            pool.append(global_finding)
        kept = []
        for f in significant:
            ancestors = [a for a in pool
                         if a is not f and a.label == f.label
                         and set(a.predicates) < set(f.predicates)]
            if all(f.strength() > a.strength() for a in ancestors):
                kept.append(f)
        kept.sort(key=lambda f: (-f.strength(), -f.size,
                                 tuple(p.describe() for p in f.predicates), f.label or ""))
        ranked = []
        for i, f in enumerate(kept):
            f.rank = i + 1
            ranked.append(f)
        if global_finding is not None:
            metric_display = global_finding.metric
        elif ranked:
            metric_display = ranked[0].metric
        elif findings:
            metric_display = findings[0].metric
        else:
            metric_display = "DIFF" if spec.kind == DISCOVERY else (spec.metric or "").upper()
        reports.append(ReportModel(
            kind=spec.kind,
            protected=s,
            output=result.output_display,
            explanatory=spec.explanatory,
            metric=metric_display,
            conf=conf,
            family_size=result.family_size,
            train_size=result.train_size,
            test_size=result.test_size,
            dropped_train=result.dropped_train,
            dropped_test=result.dropped_test,
            global_finding=global_finding,
            findings=tuple(ranked),
        ))
    return reports


# -- orchestration ----------------------------------------------------------------


@dataclass
class InvestigationRun:
    trained: TrainedInvestigation
    validated: ValidationResult
    reports: list[ReportModel]


def run_investigation(spec: InvestigationSpec, source: DataSource,
                      threads: int | None = None) -> InvestigationRun:
    """Train on the source's training set, validate on the next budgeted test
    set, and build the filtered, ranked reports."""
    trained = train(spec, source.train)
    validated = validate(trained, source.next_test_set(), threads=threads)
    reports = filter_and_rank(validated)
    return InvestigationRun(trained, validated, reports)


def debug_with_explanatory(trained: TrainedInvestigation, explanatory: str,
                           fresh_test: Dataset, threads: int | None = None
                           ) -> InvestigationRun:
    """Re-validate the same trained contexts with the metric conditioned on an
    explanatory attribute, on a fresh budgeted test set."""
    spec = replace(trained.spec, explanatory=explanatory)
    units = [TrainUnit(u.protected, u.output, u.label,
                       u.bound.conditioned_on(explanatory), u.contexts, u.tree_stats)
             for u in trained.units]
    debug_trained = TrainedInvestigation(spec, units, trained.train_size,
                                         trained.dropped_train, trained.output_display)
    validated = validate(debug_trained, fresh_test, threads=threads)
    reports = filter_and_rank(validated)
    return InvestigationRun(debug_trained, validated, reports)
