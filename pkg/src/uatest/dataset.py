"""Typed tabular data with attribute roles and a budgeted train/test holdout scheme.

Datasets are immutable, columnar, and cheap to filter: a selection is a view
that shares column storage with its parent and carries only a row-index array.
The DataSource splits a dataset into one training set and a fixed budget of
disjoint test sets, one per adaptive investigation.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

CATEGORICAL = "categorical"
ORDINAL = "ordinal"
CONTINUOUS = "continuous"
KINDS = (CATEGORICAL, ORDINAL, CONTINUOUS)

ROLES = ("protected", "contextual", "explanatory", "output", "ignored")

MISSING = ""  # missing-value token in CSV files

# numeric columns with more distinct values than this are inferred continuous
INFER_DISTINCT_THRESHOLD = 10


class DataError(Exception):
    """Malformed input data or misuse of a dataset operation."""


class BudgetError(Exception):
    """The DataSource has no test sets left for further investigations."""


@dataclass(frozen=True)
class AttributeSchema:
    """Declared name, kind, default role, and category list of one column.

    Roles act as defaults; an investigation names its own protected,
    contextual, explanatory, and output attributes so a column may play
    several roles across investigations.
    """

    name: str
    kind: str = CATEGORICAL
    role: str = "contextual"
    categories: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise DataError(f"unknown attribute kind {self.kind!r} for {self.name!r}")
        if self.role not in ROLES:
            raise DataError(f"unknown attribute role {self.role!r} for {self.name!r}")
        if self.categories is not None:
            cats = tuple(str(c) for c in self.categories)
            object.__setattr__(self, "categories", cats)
            if self.kind == CONTINUOUS:
                raise DataError(f"continuous attribute {self.name!r} cannot carry a category list")
            if len(set(cats)) != len(cats):
                raise DataError(f"duplicate categories for attribute {self.name!r}")
            if self.kind == ORDINAL:
                try:
                    order = [float(c) for c in cats]
                except ValueError as exc:
                    raise DataError(
                        f"ordinal attribute {self.name!r} requires numeric category values"
                    ) from exc
                if sorted(order) != order:
                    raise DataError(f"ordinal categories for {self.name!r} must be sorted ascending")

    @property
    def is_scalar(self) -> bool:
        return self.kind in (CONTINUOUS, ORDINAL)


@dataclass(frozen=True)
class ContextPredicate:
    """A single clause of a context definition.

    ``in`` tests categorical membership in a value set; ``le`` / ``gt``
    compare a continuous or ordinal attribute against a threshold.
    """

    attribute: str
    op: str
    values: tuple[str, ...] | None = None
    threshold: float | None = None

    def __post_init__(self) -> None:
        if self.op == "in":
            if not self.values or self.threshold is not None:
                raise DataError(f"'in' predicate on {self.attribute!r} requires a value set only")
            canon = tuple(sorted({str(v) for v in self.values}))
            object.__setattr__(self, "values", canon)
        elif self.op in ("le", "gt"):
            if self.threshold is None or self.values is not None:
                raise DataError(f"{self.op!r} predicate on {self.attribute!r} requires a threshold only")
            object.__setattr__(self, "threshold", float(self.threshold))
        else:
            raise DataError(f"unknown predicate operator {self.op!r}")

    def describe(self) -> str:
        if self.op == "in":
            if len(self.values) == 1:
                return f"{self.attribute}: {self.values[0]}"
            return f"{self.attribute} in {{{', '.join(self.values)}}}"
        sym = "<=" if self.op == "le" else ">"
        return f"{self.attribute} {sym} {_fmt_number(self.threshold)}"


def _fmt_number(x: float) -> str:
    if x == int(x) and abs(x) < 1e15:
        return str(int(x))
    return f"{x:g}"


def predicates_subset(a: Sequence[ContextPredicate], b: Sequence[ContextPredicate]) -> bool:
    """True when every predicate of ``a`` also appears in ``b``."""
    return set(a) <= set(b)


class Dataset:
    """Immutable columnar table addressed through a row-index view.

    Categorical and ordinal columns store int32 codes into their schema's
    category list (-1 marks a missing cell); continuous columns store float64
    with NaN for missing. Views created by :meth:`select` share the base
    arrays, so row identities are stable across arbitrary selections.
    """

    def __init__(
        self,
        schema: Sequence[AttributeSchema],
        columns: Mapping[str, np.ndarray],
        index: np.ndarray | None = None,
    ):
        self._schema = tuple(schema)
        self._by_name = {a.name: a for a in self._schema}
        if len(self._by_name) != len(self._schema):
            raise DataError("duplicate column names")
        self._cols = dict(columns)
        lengths = {len(v) for v in self._cols.values()}
        if len(lengths) != 1:
            raise DataError("all columns must have the same length")
        self._base_len = lengths.pop()
        if index is None:
            index = np.arange(self._base_len, dtype=np.int64)
        self._idx = np.asarray(index, dtype=np.int64)
        self._idx.setflags(write=False)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_columns(cls, schema: Sequence[AttributeSchema], raw: Mapping[str, Sequence]) -> "Dataset":
        """Build a dataset from raw per-column values, encoding categoricals.

        Categorical/ordinal schemas without a pinned category list get one in
        first-appearance order. Raw cells equal to the empty string are
        treated as missing.
        """
        schema = list(schema)
        if set(raw) != {a.name for a in schema}:
            raise DataError("column names do not match schema")
        cols: dict[str, np.ndarray] = {}
        final_schema: list[AttributeSchema] = []
        for attr in schema:
            values = raw[attr.name]
            if attr.kind == CONTINUOUS:
                arr = np.empty(len(values), dtype=np.float64)
                for i, v in enumerate(values):
                    if v is None or v == MISSING:
                        arr[i] = np.nan
                    else:
                        try:
                            arr[i] = float(v)
                        except (TypeError, ValueError) as exc:
                            raise DataError(
                                f"unparseable cell {v!r} in continuous column {attr.name!r} (row {i})"
                            ) from exc
                cols[attr.name] = arr
                final_schema.append(attr)
            else:
                attr, codes = _encode_categorical(attr, values)
                cols[attr.name] = codes
                final_schema.append(attr)
        return cls(final_schema, cols)

    # -- basic access ------------------------------------------------------

    @property
    def schema(self) -> tuple[AttributeSchema, ...]:
        return self._schema

    @property
    def n_rows(self) -> int:
        return len(self._idx)

    def __len__(self) -> int:
        return self.n_rows

    def attribute(self, name: str) -> AttributeSchema:
        try:
            return self._by_name[name]
        except KeyError:
            raise DataError(f"no attribute named {name!r}") from None

    def attribute_names(self) -> tuple[str, ...]:
        return tuple(a.name for a in self._schema)

    def row_ids(self) -> np.ndarray:
        """Stable identities of this view's rows within the base storage."""
        return self._idx

    def codes(self, name: str) -> np.ndarray:
        """Integer category codes of a categorical/ordinal column (-1 missing)."""
        attr = self.attribute(name)
        if attr.kind == CONTINUOUS:
            raise DataError(f"attribute {name!r} is continuous and has no category codes")
        return self._cols[name][self._idx]

    def scalar_values(self, name: str) -> np.ndarray:
        """Float values of a continuous or ordinal column (NaN missing)."""
        attr = self.attribute(name)
        if attr.kind == CONTINUOUS:
            return self._cols[name][self._idx]
        if attr.kind == ORDINAL:
            table = np.array([float(c) for c in attr.categories], dtype=np.float64)
            codes = self._cols[name][self._idx]
            out = np.full(len(codes), np.nan)
            ok = codes >= 0
            out[ok] = table[codes[ok]]
            return out
        raise DataError(f"attribute {name!r} is categorical, not scalar")

    def values(self, name: str) -> list:
        """Decoded cell values: strings for categorical/ordinal, floats for continuous."""
        attr = self.attribute(name)
        if attr.kind == CONTINUOUS:
            return [None if np.isnan(v) else float(v) for v in self._cols[name][self._idx]]
        cats = attr.categories or ()
        return [None if c < 0 else cats[c] for c in self._cols[name][self._idx]]

    # -- views -------------------------------------------------------------

    def _subset(self, rows: np.ndarray) -> "Dataset":
        """View addressing ``rows`` (positions within this view)."""
        return Dataset(self._schema, self._cols, self._idx[rows])

    def select(self, predicates: Sequence[ContextPredicate]) -> "Dataset":
        """Row-filtered view satisfying the conjunction of ``predicates``.

        An empty predicate list returns a view of every row.
        """
        if not predicates:
            return Dataset(self._schema, self._cols, self._idx)
        mask = np.ones(self.n_rows, dtype=bool)
        for pred in predicates:
            mask &= self._predicate_mask(pred)
        return self._subset(np.flatnonzero(mask))

    def _predicate_mask(self, pred: ContextPredicate) -> np.ndarray:
        attr = self.attribute(pred.attribute)
        if pred.op == "in":
            if attr.kind != CATEGORICAL:
                raise DataError(
                    f"value-set predicate on {attr.name!r} requires a categorical attribute"
                )
            cats = attr.categories or ()
            lookup = {c: i for i, c in enumerate(cats)}
            try:
                wanted = np.array([lookup[v] for v in pred.values], dtype=np.int32)
            except KeyError as exc:
                raise DataError(f"unknown category {exc.args[0]!r} for attribute {attr.name!r}") from None
            return np.isin(self.codes(attr.name), wanted)
        if not attr.is_scalar:
            raise DataError(f"threshold predicate on {attr.name!r} requires a scalar attribute")
        vals = self.scalar_values(attr.name)
        if pred.op == "le":
            return vals <= pred.threshold  # NaN compares False, excluding missing rows
        return vals > pred.threshold

    def drop_missing(self, attrs: Iterable[str]) -> "Dataset":
        """View without rows that have a missing value in any of ``attrs``."""
        mask = np.ones(self.n_rows, dtype=bool)
        for name in attrs:
            attr = self.attribute(name)
            col = self._cols[name][self._idx]
            mask &= ~np.isnan(col) if attr.kind == CONTINUOUS else col >= 0
        if mask.all():
            return self
        return self._subset(np.flatnonzero(mask))

    def _replace_column(self, name: str, values: np.ndarray) -> "Dataset":
        """View with this view's rows of ``name`` overwritten by ``values``.

        Used by permutation tests; rows outside the view keep their data.
        """
        attr = self.attribute(name)
        if len(values) != self.n_rows:
            raise DataError("replacement column length must match the view's row count")
        base = self._cols[name].copy()
        if attr.kind == CONTINUOUS:
            base[self._idx] = np.asarray(values, dtype=np.float64)
        else:
            base[self._idx] = np.asarray(values, dtype=np.int32)
        cols = dict(self._cols)
        cols[name] = base
        return Dataset(self._schema, cols, self._idx)

    def with_column(self, attr: AttributeSchema, values: Sequence) -> "Dataset":
        """New view with an extra column whose values align to this view's rows."""
        if attr.name in self._by_name:
            raise DataError(f"attribute {attr.name!r} already exists")
        if len(values) != self.n_rows:
            raise DataError("new column length must match the view's row count")
        if attr.kind == CONTINUOUS:
            base = np.full(self._base_len, np.nan, dtype=np.float64)
            base[self._idx] = np.asarray(values, dtype=np.float64)
        else:
            attr, codes = _encode_categorical(attr, values)
            base = np.full(self._base_len, -1, dtype=np.int32)
            base[self._idx] = codes
        cols = dict(self._cols)
        cols[attr.name] = base
        return Dataset(self._schema + (attr,), cols, self._idx)


def _encode_categorical(attr: AttributeSchema, values: Sequence) -> tuple[AttributeSchema, np.ndarray]:
    strings = ["" if v is None else str(v) for v in values]
    if attr.categories is None:
        seen: dict[str, int] = {}
        for s in strings:
            if s != MISSING and s not in seen:
                seen[s] = len(seen)
        attr = AttributeSchema(attr.name, attr.kind, attr.role, tuple(seen))
    lookup = {c: i for i, c in enumerate(attr.categories)}
    codes = np.empty(len(strings), dtype=np.int32)
    for i, s in enumerate(strings):
        if s == MISSING:
            codes[i] = -1
        else:
            try:
                codes[i] = lookup[s]
            except KeyError:
                raise DataError(
                    f"unparseable cell {s!r} in column {attr.name!r}: "
                    f"not among declared categories (row {i})"
                ) from None
    return attr, codes


# -- CSV loading -----------------------------------------------------------


def load_csv(path, schema="infer") -> Dataset:
    """Load a comma-separated file with a mandatory header row.

    ``schema`` is either ``"infer"``, a full list of :class:`AttributeSchema`
    covering exactly the header columns, or a partial ``{name: schema}``
    mapping whose missing columns are inferred. Inference makes a column
    continuous when every non-missing cell parses as a number and there are
    more than 10 distinct values; otherwise categorical.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        rows = list(reader)
    if not rows:
        raise DataError(f"empty file: {path}")
    header = rows[0]
    if len(set(header)) != len(header):
        raise DataError("duplicate column names")
    body = rows[1:]
    if not body:
        raise DataError(f"file has a header but no data rows: {path}")
    for i, row in enumerate(body):
        if len(row) != len(header):
            raise DataError(f"row {i + 1} has {len(row)} fields, expected {len(header)}")
    raw = {name: [row[j] for row in body] for j, name in enumerate(header)}

    if schema == "infer":
        attrs = [_infer_attribute(name, raw[name]) for name in header]
    elif isinstance(schema, Mapping):
        attrs = []
        for name in header:
            if name in schema:
                given = schema[name]
                if given.name != name:
                    raise DataError(f"schema name {given.name!r} does not match column {name!r}")
                attrs.append(given)
            else:
                attrs.append(_infer_attribute(name, raw[name]))
        extra = set(schema) - set(header)
        if extra:
            raise DataError(f"schema names not in header: {sorted(extra)}")
    else:
        attrs = list(schema)
        if [a.name for a in attrs] != header:
            if {a.name for a in attrs} == set(header):
                by_name = {a.name: a for a in attrs}
                attrs = [by_name[name] for name in header]
            else:
                raise DataError("schema names do not match the file header")
    return Dataset.from_columns(attrs, raw)


def _infer_attribute(name: str, values: Sequence[str]) -> AttributeSchema:
    present = [v for v in values if v != MISSING]
    parsed = []
    numeric = bool(present)
    for v in present:
        try:
            parsed.append(float(v))
        except ValueError:
            numeric = False
            break
    if numeric and len(set(parsed)) > INFER_DISTINCT_THRESHOLD:
        return AttributeSchema(name, CONTINUOUS)
    return AttributeSchema(name, CATEGORICAL)


def schema_from_json(obj: Mapping) -> dict[str, AttributeSchema]:
    """Build a partial schema mapping from a sidecar JSON object.

    Format: ``{"column": {"kind": ..., "role": ..., "categories": [...]}}``
    with every field optional.
    """
    out: dict[str, AttributeSchema] = {}
    for name, spec in obj.items():
        cats = spec.get("categories")
        out[name] = AttributeSchema(
            name,
            kind=spec.get("kind", CATEGORICAL),
            role=spec.get("role", "contextual"),
            categories=tuple(cats) if cats is not None else None,
        )
    return out


def save_csv(data: Dataset, path) -> None:
    """Serialize a dataset view back to CSV; inverse of :func:`load_csv`."""
    names = data.attribute_names()
    columns = {}
    for name in names:
        attr = data.attribute(name)
        if attr.kind == CONTINUOUS:
            columns[name] = [MISSING if v is None else repr(v) for v in data.values(name)]
        else:
            columns[name] = [MISSING if v is None else v for v in data.values(name)]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(names)
        for i in range(data.n_rows):
            writer.writerow([columns[name][i] for name in names])


# -- budgeted holdout ------------------------------------------------------


class DataSource:
    """Holds the train set and ``budget`` disjoint test sets of one dataset.

    Each adaptive investigation must consume a fresh test set through
    :meth:`next_test_set`; once the budget is spent, new data is required.
    The consumed counter is the only mutable state; callers must serialize
    access to it.
    """

    def __init__(self, data: Dataset, budget: int, train_fraction: float = 0.5,
                 seed: int = 0, min_size: int = 100):
        if budget < 1:
            raise DataError("budget must be at least 1")
        if not 0.0 < train_fraction < 1.0:
            raise DataError("train_fraction must lie strictly between 0 and 1")
        n = data.n_rows
        n_train = int(n * train_fraction + 0.5)
        n_rest = n - n_train
        if n_rest // budget < 2 * min_size:
            raise DataError(
                f"insufficient rows: {n_rest // budget} per test set, "
                f"need at least {2 * min_size}"
            )
        rng = np.random.default_rng(seed)
        perm = rng.permutation(n)
        self._data = data
        self._train = data._subset(perm[:n_train])
        sizes = [n_rest // budget + (1 if i < n_rest % budget else 0) for i in range(budget)]
        self._tests = []
        start = n_train
        for size in sizes:
            self._tests.append(data._subset(perm[start:start + size]))
            start += size
        self.budget = budget
        self.train_fraction = train_fraction
        self.seed = seed
        self.min_size = min_size
        self._consumed = 0

    @property
    def train(self) -> Dataset:
        return self._train

    @property
    def consumed(self) -> int:
        return self._consumed

    def next_test_set(self) -> Dataset:
        if self._consumed >= self.budget:
            raise BudgetError(
                f"investigation budget of {self.budget} exhausted; "
                "collect new data before running further investigations"
            )
        test = self._tests[self._consumed]
        self._consumed += 1
        return test

    def peek_test_sets(self) -> tuple[Dataset, ...]:
        """All test partitions regardless of consumption (for verification)."""
        return tuple(self._tests)


def make_datasource(data: Dataset, budget: int, train_fraction: float = 0.5,
                    seed: int = 0, min_size: int = 100) -> DataSource:
    """Seeded uniform split into a train set and ``budget`` equal test sets."""
    return DataSource(data, budget, train_fraction, seed, min_size)
