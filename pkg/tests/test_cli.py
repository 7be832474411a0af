import json

import pytest

from uatest.cli import main
from uatest.data import berkeley_admissions
from uatest.dataset import save_csv


@pytest.fixture()
def berkeley_csv(tmp_path):
    path = tmp_path / "berkeley.csv"
    save_csv(berkeley_admissions(), path)
    schema = {
        "gender": {"kind": "categorical", "role": "protected",
                   "categories": ["Female", "Male"]},
        "department": {"kind": "categorical", "role": "contextual"},
        "admitted": {"kind": "categorical", "role": "output",
                     "categories": ["No", "Yes"]},
    }
    spath = tmp_path / "schema.json"
    spath.write_text(json.dumps(schema))
    return str(path), str(spath)


def test_help_lists_flags_for_every_subcommand(capsys):
    for cmd in ("testing", "discovery", "error-profile", "debug", "bench", "tree-vs-itemsets"):
        assert main([cmd, "--help"]) == 0
        out = capsys.readouterr().out
        assert "--seed" in out or "--state" in out


def test_unknown_flag_is_usage_error(capsys):
    assert main(["testing", "--nonsense"]) == 1
    assert main(["bogus-command"]) == 1


def test_testing_happy_path(berkeley_csv, capsys, tmp_path):
    data, schema = berkeley_csv
    code = main(["testing", "--data", data, "--schema", schema,
                 "--protected", "gender", "--output", "admitted",
                 "--context", "department", "--seed", "1"])
    assert code == 0
    out = capsys.readouterr().out
    assert "Report of associations of O=admitted on S=gender" in out
    assert "Global Population" in out


def test_cli_byte_determinism(berkeley_csv, tmp_path):
    data, schema = berkeley_csv
    outs = []
    for i in (1, 2):
        out = tmp_path / f"r{i}.txt"
        code = main(["testing", "--data", data, "--schema", schema, "--seed", "5",
                     "--out", str(out)])
        assert code == 0
        outs.append(out.read_bytes())
    assert outs[0] == outs[1]


def test_cli_json_format(berkeley_csv, tmp_path):
    data, schema = berkeley_csv
    out = tmp_path / "r.json"
    assert main(["testing", "--data", data, "--schema", schema, "--seed", "2",
                 "--format", "json", "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    assert "reports" in doc and len(doc["reports"]) == 1
    assert isinstance(doc["reports"][0]["global"]["tested"]["p"], float)


def test_debug_requires_state_file(berkeley_csv, tmp_path):
    data, schema = berkeley_csv
    code = main(["debug", "--data", data, "--state", str(tmp_path / "missing.json"),
                 "--explanatory", "department"])
    assert code == 2


def test_debug_flow_and_budget_exhaustion(berkeley_csv, tmp_path, capsys):
    data, schema = berkeley_csv
    state = tmp_path / "state.json"
    assert main(["testing", "--data", data, "--schema", schema, "--seed", "2",
                 "--budget", "2", "--state", str(state),
                 "--out", str(tmp_path / "r1.txt")]) == 0
    assert main(["debug", "--data", data, "--state", str(state),
                 "--explanatory", "department", "--out", str(tmp_path / "r2.txt")]) == 0
    text = (tmp_path / "r2.txt").read_text()
    assert "conditioned on explanatory attribute E=department" in text
    # budget of 2 is now spent
    assert main(["debug", "--data", data, "--state", str(state),
                 "--explanatory", "department"]) == 3


def test_debug_rejects_changed_data(berkeley_csv, tmp_path):
    data, schema = berkeley_csv
    state = tmp_path / "state.json"
    assert main(["testing", "--data", data, "--schema", schema, "--seed", "2",
                 "--budget", "2", "--state", str(state),
                 "--out", str(tmp_path / "r.txt")]) == 0
    other = tmp_path / "other.csv"
    other.write_text("gender,department,admitted\nFemale,A,Yes\nMale,A,No\n")
    assert main(["debug", "--data", str(other), "--state", str(state),
                 "--explanatory", "department"]) == 2


def test_bench_csv(tmp_path):
    out = tmp_path / "bench.csv"
    assert main(["bench", "--n", "20000", "--plants", "3", "--delta", "0.25",
                 "--size", "400", "--seed", "3", "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "delta,size,recall,false_discoveries,seed"
    delta, size, recall, fd, seed = lines[1].split(",")
    assert float(delta) == 0.25 and int(size) == 400 and int(seed) == 3
    assert 0.0 <= float(recall) <= 1.0


def test_tree_vs_itemsets_csv(tmp_path):
    out = tmp_path / "cmp.csv"
    assert main(["tree-vs-itemsets", "--n", "6000", "--attrs", "8", "--seed", "1",
                 "--min-size", "300", "--out", str(out)]) == 0
    lines = out.read_text().strip().splitlines()
    assert lines[0] == "strategy,candidates_considered,top3_mean_association"
    assert lines[1].startswith("guided-tree,")
    assert lines[2].startswith("itemsets,")


def test_seed_env_fallback(berkeley_csv, tmp_path, monkeypatch):
    data, schema = berkeley_csv
    a, b = tmp_path / "a.txt", tmp_path / "b.txt"
    monkeypatch.setenv("UATEST_SEED", "9")
    assert main(["testing", "--data", data, "--schema", schema, "--out", str(a)]) == 0
    monkeypatch.delenv("UATEST_SEED")
    assert main(["testing", "--data", data, "--schema", schema, "--seed", "9",
                 "--out", str(b)]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_data_error_exit_code(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,a\n1,2\n")
    assert main(["testing", "--data", str(bad), "--protected", "a", "--output", "a"]) == 2


@pytest.fixture()
def tagged_csv(tmp_path):
    import numpy as np
    rng = np.random.default_rng(5)
    n = 2000
    race = rng.choice(["black", "white"], n)
    rows = ["race,cart,person"]
    for r in race:
        cart = "1" if rng.random() < (0.25 if r == "black" else 0.05) else "0"
        person = "1" if rng.random() < 0.9 else "0"
        rows.append(f"{r},{cart},{person}")
    path = tmp_path / "tagged.csv"
    path.write_text("\n".join(rows) + "\n")
    return str(path)


def test_discovery_cli(tagged_csv, capsys):
    code = main(["discovery", "--data", tagged_csv, "--protected", "race",
                 "--output", "cart,person", "--top-k", "2", "--seed", "4",
                 "--min-size", "200"])
    assert code == 0
    out = capsys.readouterr().out
    assert "Report of associations of O=Labels on S=race" in out
    assert "cart" in out


def test_error_profile_cli(tmp_path, capsys):
    import numpy as np
    rng = np.random.default_rng(6)
    n = 3000
    rows = ["age,pred,actual"]
    for _ in range(n):
        age = rng.uniform(20, 90)
        actual = rng.normal(2, 1)
        pred = actual + rng.normal(0, 0.1 + 0.01 * (age - 20))
        rows.append(f"{age!r},{pred!r},{actual!r}")
    path = tmp_path / "preds.csv"
    path.write_text("\n".join(rows) + "\n")
    code = main(["error-profile", "--data", str(path), "--protected", "age",
                 "--output", "pred", "--ground-truth", "actual",
                 "--error", "absolute", "--seed", "6"])
    assert code == 0
    out = capsys.readouterr().out
    assert "Report of associations of O=Abs. Error(pred) on S=age" in out
    assert "CORR" in out
