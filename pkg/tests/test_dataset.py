import numpy as np
import pytest

from uatest.dataset import (
    AttributeSchema,
    BudgetError,
    ContextPredicate,
    DataError,
    Dataset,
    load_csv,
    make_datasource,
    save_csv,
    schema_from_json,
)


def write_csv(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return path


def test_load_csv_three_categorical_columns(tmp_path):
    rows = "\n".join(f"g{i % 2},s{i % 3},p{i % 2}" for i in range(10))
    path = write_csv(tmp_path, "d.csv", "gender,state,price\n" + rows + "\n")
    d = load_csv(path)
    assert d.n_rows == 10
    assert [a.kind for a in d.schema] == ["categorical"] * 3
    assert d.attribute("gender").categories == ("g0", "g1")


def test_inference_continuous_above_distinct_threshold(tmp_path):
    values = [1.5 + 0.5 * i for i in range(30)]
    path = write_csv(tmp_path, "c.csv", "x\n" + "\n".join(str(v) for v in values) + "\n")
    d = load_csv(path)
    assert d.attribute("x").kind == "continuous"


def test_inference_numeric_few_distinct_is_categorical(tmp_path):
    path = write_csv(tmp_path, "c.csv", "x\n" + "\n".join(str(i % 5) for i in range(40)) + "\n")
    d = load_csv(path)
    assert d.attribute("x").kind == "categorical"


def test_declared_continuous_rejects_text_cell(tmp_path):
    path = write_csv(tmp_path, "bad.csv", "x\n1.0\nabc\n")
    with pytest.raises(DataError, match="unparseable cell"):
        load_csv(path, [AttributeSchema("x", "continuous")])


def test_duplicate_columns_and_empty_file(tmp_path):
    path = write_csv(tmp_path, "dup.csv", "a,a\n1,2\n")
    with pytest.raises(DataError, match="duplicate column names"):
        load_csv(path)
    empty = write_csv(tmp_path, "empty.csv", "")
    with pytest.raises(DataError, match="empty file"):
        load_csv(empty)


def test_missing_token_and_drop_missing(tmp_path):
    path = write_csv(tmp_path, "m.csv", "a,b\nx,1.0\n,2.0\ny,\n")
    d = load_csv(path, {"b": AttributeSchema("b", "continuous")})
    assert d.values("a") == ["x", None, "y"]
    kept = d.drop_missing(["a", "b"])
    assert kept.n_rows == 1
    assert kept.values("a") == ["x"]


def test_schema_from_json_roundtrip(tmp_path):
    overlay = schema_from_json({
        "a": {"kind": "categorical", "role": "protected", "categories": ["x", "y"]},
        "b": {"kind": "continuous", "role": "output"},
    })
    path = write_csv(tmp_path, "s.csv", "a,b\nx,1.5\ny,2.5\n")
    d = load_csv(path, overlay)
    assert d.attribute("a").role == "protected"
    assert d.attribute("b").kind == "continuous"


def random_dataset(n=1000, seed=0):
    rng = np.random.default_rng(seed)
    schema = [
        AttributeSchema("state", "categorical", "contextual", ("CA", "NY", "TX")),
        AttributeSchema("race", "categorical", "contextual", ("White", "Black")),
        AttributeSchema("age", "continuous", "contextual"),
    ]
    cols = {
        "state": rng.integers(0, 3, n).astype(np.int32),
        "race": rng.integers(0, 2, n).astype(np.int32),
        "age": rng.uniform(18, 90, n),
    }
    return Dataset(schema, cols)


def test_datasource_split_sizes_and_determinism():
    d = random_dataset(1000, seed=3)
    ds1 = make_datasource(d, budget=2, train_fraction=0.5, seed=7)
    ds2 = make_datasource(d, budget=2, train_fraction=0.5, seed=7)
    assert ds1.train.n_rows == 500
    tests1 = ds1.peek_test_sets()
    assert [t.n_rows for t in tests1] == [250, 250]
    assert np.array_equal(ds1.train.row_ids(), ds2.train.row_ids())
    for a, b in zip(tests1, ds2.peek_test_sets()):
        assert np.array_equal(a.row_ids(), b.row_ids())


def test_datasource_partition_property():
    d = random_dataset(997, seed=5)
    ds = make_datasource(d, budget=3, train_fraction=0.4, seed=1, min_size=30)
    pieces = [ds.train.row_ids()] + [t.row_ids() for t in ds.peek_test_sets()]
    merged = np.concatenate(pieces)
    assert len(merged) == 997
    assert np.array_equal(np.sort(merged), np.arange(997))
    sizes = [len(p) for p in pieces[1:]]
    assert max(sizes) - min(sizes) <= 1


def test_datasource_insufficient_rows():
    d = random_dataset(1000, seed=2)
    with pytest.raises(DataError, match="insufficient rows"):
        make_datasource(d, budget=2, train_fraction=0.5, seed=0, min_size=200)


def test_budget_semantics():
    d = random_dataset(1000, seed=4)
    ds = make_datasource(d, budget=2, train_fraction=0.5, seed=0)
    assert ds.consumed == 0
    t1 = ds.next_test_set()
    t2 = ds.next_test_set()
    assert ds.consumed == 2
    assert set(t1.row_ids()).isdisjoint(t2.row_ids())
    with pytest.raises(BudgetError, match="collect new data"):
        ds.next_test_set()
    single = make_datasource(d, budget=1, train_fraction=0.5, seed=0)
    assert single.next_test_set().n_rows == 500


def test_select_identity_and_conjunction():
    d = random_dataset(2000, seed=8)
    assert d.select([]).n_rows == 2000
    preds = [ContextPredicate("state", "in", values=("CA",)),
             ContextPredicate("race", "in", values=("White",))]
    sel = d.select(preds)
    states = set(sel.values("state"))
    races = set(sel.values("race"))
    assert states <= {"CA"} and races <= {"White"}
    manual = sum(1 for s, r in zip(d.values("state"), d.values("race"))
                 if s == "CA" and r == "White")
    assert sel.n_rows == manual


def test_select_threshold_and_nested_numeric():
    d = random_dataset(2000, seed=9)
    sel = d.select([ContextPredicate("age", "le", threshold=42.0)])
    assert all(v <= 42.0 for v in sel.values("age"))
    nested = sel.select([ContextPredicate("age", "gt", threshold=30.0)])
    both = d.select([ContextPredicate("age", "le", threshold=42.0),
                     ContextPredicate("age", "gt", threshold=30.0)])
    assert set(nested.row_ids()) == set(both.row_ids())


def test_select_idempotent_and_commutative():
    d = random_dataset(1500, seed=10)
    p1 = ContextPredicate("state", "in", values=("CA", "NY"))
    p2 = ContextPredicate("age", "gt", threshold=40.0)
    a = d.select([p1]).select([p2])
    b = d.select([p2]).select([p1])
    c = d.select([p1, p2])
    assert set(a.row_ids()) == set(b.row_ids()) == set(c.row_ids())
    assert set(c.select([p1]).row_ids()) == set(c.row_ids())


def test_select_operator_type_mismatch():
    d = random_dataset(100, seed=11)
    with pytest.raises(DataError):
        d.select([ContextPredicate("age", "in", values=("18",))])
    with pytest.raises(DataError):
        d.select([ContextPredicate("state", "le", threshold=1.0)])


def test_predicate_canonical_form_and_describe():
    p = ContextPredicate("state", "in", values=("NY", "CA", "NY"))
    assert p.values == ("CA", "NY")
    assert p.describe() == "state in {CA, NY}"
    assert ContextPredicate("state", "in", values=("CA",)).describe() == "state: CA"
    assert ContextPredicate("age", "le", threshold=42.0).describe() == "age <= 42"
    assert ContextPredicate("hours", "gt", threshold=55.5).describe() == "hours > 55.5"


def test_csv_roundtrip_exact(tmp_path):
    d = random_dataset(300, seed=12)
    path = tmp_path / "out.csv"
    save_csv(d, path)
    back = load_csv(path, {"age": AttributeSchema("age", "continuous")})
    assert back.values("state") == d.values("state")
    assert back.values("race") == d.values("race")
    assert np.array_equal(back.scalar_values("age"), d.scalar_values("age"))


def test_ordinal_attributes():
    schema = [AttributeSchema("edu", "ordinal", "contextual", ("9", "10", "11", "12"))]
    d = Dataset.from_columns(schema, {"edu": ["9", "12", "10", "11", "9"]})
    assert np.array_equal(d.scalar_values("edu"), [9.0, 12.0, 10.0, 11.0, 9.0])
    sel = d.select([ContextPredicate("edu", "le", threshold=11.0)])
    assert sel.n_rows == 4
    with pytest.raises(DataError, match="numeric category values"):
        AttributeSchema("edu", "ordinal", "contextual", ("low", "high"))


def test_views_share_row_identity():
    d = random_dataset(500, seed=13)
    sel = d.select([ContextPredicate("state", "in", values=("CA",))])
    assert set(sel.row_ids()) <= set(d.row_ids())
    sub = sel.select([ContextPredicate("race", "in", values=("Black",))])
    assert set(sub.row_ids()) <= set(sel.row_ids())


def test_with_column_alignment():
    d = random_dataset(200, seed=14)
    sel = d.select([ContextPredicate("age", "le", threshold=50.0)])
    marked = sel.with_column(AttributeSchema("flag", "categorical", "output", ("0", "1")),
                             ["1"] * sel.n_rows)
    assert marked.values("flag") == ["1"] * sel.n_rows
    with pytest.raises(DataError):
        sel.with_column(AttributeSchema("age", "continuous"), [0.0] * sel.n_rows)
