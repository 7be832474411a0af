import numpy as np
import pytest
from scipy import stats as sps

from uatest.dataset import AttributeSchema, Dataset
from uatest.metrics import BoundMetric, MetricKind, binary_difference, contingency
from uatest.stats import (
    StatConfig,
    StatsError,
    TestedMetric,
    apply_corrections,
    bootstrap_ci,
    corrected_cis,
    holm_bonferroni,
    permutation_p,
)
from uatest.stats import test_metric as evaluate_metric
from tests.test_metrics import DEPT_A_SAMPLE, PRICING_GLOBAL, dataset_from_table


# -- Holm-Bonferroni ----------------------------------------------------------


def test_holm_worked_example():
    assert holm_bonferroni([0.01, 0.02, 0.04]) == pytest.approx([0.03, 0.04, 0.04], abs=1e-15)


def test_holm_identity_and_ties():
    assert holm_bonferroni([0.2]) == [0.2]
    assert holm_bonferroni([0.01, 0.01, 0.01]) == pytest.approx([0.03, 0.03, 0.03])
    assert holm_bonferroni([0.5, 0.5]) == pytest.approx([1.0, 1.0])


def test_holm_laws():
    rng = np.random.default_rng(0)
    for _ in range(100):
        ps = rng.random(rng.integers(1, 30))
        adj = np.asarray(holm_bonferroni(ps))
        assert np.all(adj >= ps - 1e-15)
        assert np.all(adj <= 1.0)
        order = np.argsort(ps, kind="stable")
        assert np.all(np.diff(adj[order]) >= -1e-15)


def test_holm_rejects_bad_input():
    with pytest.raises(StatsError):
        holm_bonferroni([0.5, 1.5])


# -- generic resampling ---------------------------------------------------------


def two_col_dataset(s, o, s_cats=("a", "b"), o_cats=("0", "1")):
    schema = [AttributeSchema("s", "categorical", "protected", s_cats),
              AttributeSchema("o", "categorical", "output", o_cats)]
    return Dataset.from_columns(schema, {"s": s, "o": o})


def diff_stat(view):
    t = contingency(view, "s", "o")
    return binary_difference(t, "1", "a", "b").value


def test_permutation_p_extreme_and_constant():
    rng = np.random.default_rng(1)
    s = ["a", "b"] * 100
    o = ["1" if x == "a" else "0" for x in s]  # perfect association
    d = two_col_dataset(s, o)
    p = permutation_p(diff_stat, d, "s", n_perm=500, seed=4)
    assert p == pytest.approx(1 / 501)
    constant = permutation_p(lambda v: 1.0, d, "s", n_perm=200, seed=4)
    assert constant == 1.0


def test_permutation_p_deterministic():
    rng = np.random.default_rng(2)
    s = rng.choice(["a", "b"], 300)
    o = rng.choice(["0", "1"], 300)
    d = two_col_dataset(list(s), list(o))
    p1 = permutation_p(diff_stat, d, "s", n_perm=300, seed=9)
    p2 = permutation_p(diff_stat, d, "s", n_perm=300, seed=9)
    assert p1 == p2


def test_bootstrap_ci_constant_statistic():
    d = two_col_dataset(["a", "b"] * 50, ["0", "1"] * 50)
    lo, hi = bootstrap_ci(lambda v: 3.25, d, n_boot=200, conf=0.95, seed=0)
    assert (lo, hi) == (3.25, 3.25)


def test_bootstrap_ci_width_shrinks_with_n():
    rng = np.random.default_rng(5)

    def make(n, seed):
        r = np.random.default_rng(seed)
        s = r.choice(["a", "b"], n)
        p = np.where(s == "a", 0.6, 0.4)
        o = np.where(r.random(n) < p, "1", "0")
        return two_col_dataset(list(s), list(o))

    small = make(100, 1)
    large = make(10000, 2)
    lo_s, hi_s = bootstrap_ci(diff_stat, small, n_boot=400, conf=0.95, seed=3)
    lo_l, hi_l = bootstrap_ci(diff_stat, large, n_boot=400, conf=0.95, seed=3)
    assert hi_s - lo_s > hi_l - lo_l


def test_bootstrap_unstable_context():
    # a statistic whose preconditions can never hold exhausts every redraw
    d = two_col_dataset(["a", "b"] * 20, ["0", "1"] * 20)

    def impossible(view):
        raise __import__("uatest.metrics", fromlist=["MetricError"]).MetricError("nope")

    with pytest.raises(StatsError, match="unstable context"):
        bootstrap_ci(impossible, d, n_boot=100, conf=0.95, seed=0)


# -- test_metric ---------------------------------------------------------------


def test_metric_staples_global_nmi():
    d = dataset_from_table(PRICING_GLOBAL, protected="income", output="price",
                           rows=("High", "Low"), cols=("<50K", ">=50K"))
    bound = BoundMetric(MetricKind("nmi"), "income", "price")
    cfg = StatConfig(seed=0, n_bootstrap=200)
    tm = evaluate_metric(d, bound, cfg)
    assert tm.method == "asymptotic"
    assert tm.p < 1e-8
    assert 0.0001 <= tm.value.value <= 0.0005
    lo, hi = tm.ci
    assert lo <= tm.value.value <= hi


def test_metric_berkeley_dept_a_diff():
    d = dataset_from_table(DEPT_A_SAMPLE)
    bound = BoundMetric(MetricKind("diff"), "gender", "admitted")
    cfg = StatConfig(seed=1)
    tm = evaluate_metric(d, bound, cfg)
    assert tm.method == "permutation+bootstrap"  # 490 rows is a small sample
    assert tm.p < 0.01
    assert tm.value.value == pytest.approx(0.22441860465116276, abs=1e-9)
    lo, hi = tm.ci
    assert lo <= tm.value.value <= hi


def test_metric_determinism_and_entropy_streams():
    rng = np.random.default_rng(8)
    s = rng.choice(["a", "b"], 400)
    o = rng.choice(["0", "1"], 400)
    d = two_col_dataset(list(s), list(o))
    bound = BoundMetric(MetricKind("diff"), "s", "o")
    cfg = StatConfig(seed=7)
    t1 = evaluate_metric(d, bound, cfg, entropy=(1, 5))
    t2 = evaluate_metric(d, bound, cfg, entropy=(1, 5))
    t3 = evaluate_metric(d, bound, cfg, entropy=(1, 6))
    assert t1 == t2
    assert t1.p != t3.p or t1.ci != t3.ci


def test_metric_corr_asymptotic_and_small():
    rng = np.random.default_rng(10)
    n = 2000
    x = rng.normal(size=n)
    y = 0.3 * x + rng.normal(size=n)
    schema = [AttributeSchema("x", "continuous", "protected"),
              AttributeSchema("y", "continuous", "output")]
    d = Dataset(schema, {"x": x, "y": y})
    bound = BoundMetric(MetricKind("corr"), "x", "y")
    tm = evaluate_metric(d, bound, StatConfig(seed=0))
    assert tm.method == "asymptotic"
    assert tm.p < 1e-10
    small = Dataset(schema, {"x": x[:300], "y": y[:300]})
    ts = evaluate_metric(small, bound, StatConfig(seed=0))
    assert ts.method == "permutation+bootstrap"
    assert ts.p < 0.05


def test_metric_ratio_always_resamples():
    d = dataset_from_table([[300, 400], [200, 100]])
    bound = BoundMetric(MetricKind("ratio"), "gender", "admitted")
    tm = evaluate_metric(d, bound, StatConfig(seed=0, small_sample_threshold=100))
    assert tm.method == "permutation+bootstrap"


# -- corrections -----------------------------------------------------------------


def make_tested(est, se, conf=0.95):
    z = sps.norm.ppf(1 - (1 - conf) / 2)
    return TestedMetric(
        value=None, ci=(est - z * se, est + z * se), p=0.01, method="asymptotic",
        _recipe=("wald", est, se),
    )


def test_corrected_cis_identity_and_containment():
    one = [make_tested(0.4, 0.05)]
    corrected_cis(one, 0.95)
    assert one[0].corrected_ci == pytest.approx(one[0].ci, abs=1e-12)

    many = [make_tested(0.1 * i, 0.05) for i in range(1, 21)]
    corrected_cis(many, 0.95)
    for t in many:
        assert t.corrected_ci[0] <= t.ci[0] + 1e-12
        assert t.corrected_ci[1] >= t.ci[1] - 1e-12


def test_corrected_wald_width_scales_with_z_quantile_ratio():
    tested = [make_tested(0.0, 0.1) for _ in range(20)]
    corrected_cis(tested, 0.95)
    raw_width = tested[0].ci[1] - tested[0].ci[0]
    corr_width = tested[0].corrected_ci[1] - tested[0].corrected_ci[0]
    expected = sps.norm.ppf(1 - 0.05 / 20 / 2) / sps.norm.ppf(1 - 0.05 / 2)
    assert corr_width / raw_width == pytest.approx(expected, abs=1e-12)


def test_apply_corrections_p_and_ci():
    tested = [make_tested(0.2, 0.05), make_tested(0.1, 0.05), make_tested(0.0, 0.05)]
    tested[0].p, tested[1].p, tested[2].p = 0.01, 0.02, 0.04
    apply_corrections(tested, 0.95)
    assert [t.corrected_p for t in tested] == pytest.approx([0.03, 0.04, 0.04])
    assert all(t.corrected_ci is not None for t in tested)


# -- distributional properties ----------------------------------------------------


def make_null_view(n, seed):
    r = np.random.default_rng(seed)
    s = r.choice(["a", "b"], n)
    o = r.choice(["0", "1"], n)
    return two_col_dataset(list(s), list(o))


def test_null_rejection_rate_asymptotic():
    cfg = StatConfig(seed=0)
    bound = BoundMetric(MetricKind("diff"), "s", "o")
    hits = 0
    runs = 1000
    for seed in range(runs):
        d = make_null_view(1200, seed)
        tm = evaluate_metric(d, bound, cfg, entropy=(seed,))
        hits += tm.p < 0.05
    assert 0.03 <= hits / runs <= 0.07


def test_holm_family_wise_error_under_null():
    cfg = StatConfig(seed=0)
    bound = BoundMetric(MetricKind("diff"), "s", "o")
    family_errors = 0
    for run in range(200):
        ps = []
        for k in range(20):
            d = make_null_view(1200, 10_000 + run * 20 + k)
            ps.append(evaluate_metric(d, bound, cfg, entropy=(run, k)).p)
        adjusted = holm_bonferroni(ps)
        family_errors += min(adjusted) < 0.05
    assert family_errors / 200 <= 0.08


def test_asymptotic_and_permutation_agree_within_factor_three():
    # moderate effect, N=1000; the permutation p cannot resolve below its
    # floor of 1/(n_perm+1), so the asymptotic value is clamped there
    bound = BoundMetric(MetricKind("diff"), "s", "o")
    n_perm = 4000  # enough resolution that Monte Carlo noise stays within the bound
    for seed in range(50):
        r = np.random.default_rng(200 + seed)
        n = 1000
        s = r.choice(["a", "b"], n)
        p1 = np.where(s == "a", 0.55, 0.45)
        o = np.where(r.random(n) < p1, "1", "0")
        d = two_col_dataset(list(s), list(o))
        perm = evaluate_metric(d, bound, StatConfig(seed=seed, n_permutations=n_perm),
                               entropy=(seed,))
        asym = evaluate_metric(d, bound,
                           StatConfig(seed=seed, small_sample_threshold=10), entropy=(seed,))
        assert perm.method == "permutation+bootstrap"
        assert asym.method == "asymptotic"
        clamped = max(asym.p, 1 / (n_perm + 1))
        ratio = perm.p / clamped
        assert 1 / 3 <= ratio <= 3, f"seed {seed}: perm {perm.p} vs asym {asym.p}"


def test_metric_nmi_multirow_permutation_branch():
    # 3 output categories force the general fixed-margin sampler
    rng = np.random.default_rng(33)
    s = rng.choice(["a", "b"], 600)
    o = np.where(rng.random(600) < np.where(s == "a", 0.5, 0.2), "x",
                 np.where(rng.random(600) < 0.5, "y", "z"))
    d = two_col_dataset(list(s), list(o), o_cats=("x", "y", "z"))
    bound = BoundMetric(MetricKind("nmi"), "s", "o")
    cfg = StatConfig(seed=12, n_permutations=300, n_bootstrap=200)
    t1 = evaluate_metric(d, bound, cfg, entropy=(3,))
    t2 = evaluate_metric(d, bound, cfg, entropy=(3,))
    assert t1 == t2
    assert t1.method == "permutation+bootstrap"
    assert t1.p < 0.05  # strong planted dependence
    lo, hi = t1.ci
    assert 0.0 <= lo <= t1.value.value <= hi <= 1.0


def test_metric_handles_absent_categories_in_context():
    # a subpopulation missing one protected category entirely: live-margin dof
    rng = np.random.default_rng(34)
    s = rng.choice(["a", "b"], 3000)   # category "c" never occurs
    o = np.where(rng.random(3000) < np.where(s == "a", 0.6, 0.4), "1", "0")
    d = two_col_dataset(list(s), list(o), s_cats=("a", "b", "c"))
    bound = BoundMetric(MetricKind("nmi"), "s", "o")
    tm = evaluate_metric(d, bound, StatConfig(seed=0, n_bootstrap=200))
    assert tm.method == "asymptotic"
    assert tm.p < 1e-6
