"""Significance and confidence machinery for association metrics.

Small populations are tested with permutation tests and percentile
bootstraps; large ones with the matching asymptotic tests. Families of
simultaneous hypotheses are corrected with Holm-Bonferroni p-values and
Bonferroni-level confidence intervals.

Every randomized procedure is reproducible from (seed, input); callers that
parallelize must derive one entropy tuple per task so results do not depend
on execution order.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import stats as sps

from .dataset import Dataset
from .metrics import (
    CORR,
    NMI,
    RATIO,
    BoundMetric,
    MetricError,
    MetricValue,
    conditional_metric,
    contingency,
    mi_from_tables,
)

logger = logging.getLogger(__name__)

ASYMPTOTIC = "asymptotic"
RESAMPLING = "permutation+bootstrap"

_BOOT_CHUNK = 256


class StatsError(Exception):
    """A statistical procedure cannot produce a valid answer on this data."""


@dataclass
class StatConfig:
    """Knobs for statistical validation.

    Populations of at most ``small_sample_threshold`` rows are tested by
    resampling; larger ones use asymptotic approximations.
    """

    conf: float = 0.95
    small_sample_threshold: int = 1000
    n_permutations: int = 1000
    n_bootstrap: int = 1000
    seed: int = 0

    def __post_init__(self) -> None:
        if not 0.0 < self.conf < 1.0:
            raise StatsError("conf must lie strictly between 0 and 1")
        if self.n_permutations < 100 or self.n_bootstrap < 100:
            raise StatsError("resampling counts must be at least 100")


@dataclass
class TestedMetric:
    """A metric estimate with its CI and p-value, before and after correction."""

    __test__ = False  # not a pytest class, despite the name

    value: MetricValue
    ci: tuple[float, float]
    p: float
    method: str
    corrected_p: float | None = None
    corrected_ci: tuple[float, float] | None = None
    _recipe: tuple = field(default=None, compare=False, repr=False)

    def significant(self, conf: float) -> bool:
        if self.corrected_p is None:
            raise StatsError("corrections have not been applied")
        return self.corrected_p <= 1.0 - conf


def _rng(cfg: StatConfig, entropy: Sequence[int]) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([cfg.seed, *entropy]))


# -- multiple-testing corrections --------------------------------------------


def holm_bonferroni(pvalues: Sequence[float]) -> list[float]:
    """Step-down Holm adjustment, returned in the input order.

    Sorted ascending, the i-th smallest p is scaled by (m - i) and running
    maxima enforce monotonicity; values are capped at 1.
    """
    ps = np.asarray(list(pvalues), dtype=np.float64)
    if np.any((ps < 0) | (ps > 1)):
        raise StatsError("p-values must lie in [0, 1]")
    m = len(ps)
    order = np.argsort(ps, kind="stable")
    adjusted = np.empty(m)
    running = 0.0
    for rank, idx in enumerate(order):
        running = max(running, min(1.0, (m - rank) * ps[idx]))
        adjusted[idx] = running
    return adjusted.tolist()


def corrected_cis(tested: Sequence[TestedMetric], conf: float) -> list[TestedMetric]:
    """Recompute each CI at the Bonferroni level 1 - (1-conf)/m.

    The widened intervals are simultaneously valid and always contain the
    raw intervals.
    """
    m = len(tested)
    if m == 0:
        return []
    level = 1.0 - (1.0 - conf) / m
    for t in tested:
        t.corrected_ci = _ci_from_recipe(t._recipe, level)
    return list(tested)


def apply_corrections(tested: Sequence[TestedMetric], conf: float) -> None:
    """Attach Holm-corrected p-values and Bonferroni-corrected CIs in place."""
    adjusted = holm_bonferroni([t.p for t in tested])
    for t, ap in zip(tested, adjusted):
        t.corrected_p = ap
    corrected_cis(tested, conf)


def _ci_from_recipe(recipe: tuple, level: float) -> tuple[float, float]:
    alpha = 1.0 - level
    kind = recipe[0]
    if kind == "percentile":
        samples, est = recipe[1], recipe[2]
        lo, hi = np.quantile(samples, [alpha / 2.0, 1.0 - alpha / 2.0])
        # a skewed resampling distribution may exclude the estimate; widen so
        # the interval always contains it
        return min(float(lo), est), max(float(hi), est)
    if kind == "wald":
        _, est, se = recipe
        z = sps.norm.ppf(1.0 - alpha / 2.0)
        return est - z * se, est + z * se
    if kind == "fisher":
        _, r, n = recipe
        if n <= 3:
            return -1.0, 1.0
        rc = min(1.0 - 1e-15, max(-1.0 + 1e-15, r))
        z = sps.norm.ppf(1.0 - alpha / 2.0)
        zr = np.arctanh(rc)
        half = z / np.sqrt(n - 3)
        return float(np.tanh(zr - half)), float(np.tanh(zr + half))
    if kind == "degenerate":
        return recipe[1], recipe[1]
    raise StatsError(f"unknown CI recipe {kind!r}")


# -- generic resampling operations --------------------------------------------


def permutation_p(statistic: Callable[[Dataset], float], view: Dataset, protected: str,
                  n_perm: int = 1000, seed: int = 0, two_sided: bool = True) -> float:
    """Permutation p-value from shuffling the protected column.

    p = (1 + #{permuted at least as extreme}) / (1 + n_perm). ``two_sided``
    compares absolute values and suits signed statistics; non-negative
    statistics should pass False.
    """
    if n_perm < 100:
        raise StatsError("n_perm must be at least 100")
    compact = _compacted(view)
    obs = statistic(compact)
    ref = abs(obs) if two_sided else obs
    attr = compact.attribute(protected)
    column = (compact.scalar_values(protected) if attr.kind == "continuous"
              else compact.codes(protected))
    rng = np.random.default_rng(seed)
    exceed = 0
    for _ in range(n_perm):
        shuffled = rng.permutation(column)
        stat = statistic(compact._replace_column(protected, shuffled))
        stat = abs(stat) if two_sided else stat
        if np.isnan(stat) or stat >= ref:
            exceed += 1
    return (1 + exceed) / (1 + n_perm)


def bootstrap_ci(statistic: Callable[[Dataset], float], view: Dataset, n_boot: int = 1000,
                 conf: float = 0.95, seed: int = 0) -> tuple[float, float]:
    """Percentile interval of ``statistic`` over row resamples with replacement.

    Resamples on which the statistic raises MetricError are redrawn up to 10
    times and then skipped; more than half skipped aborts with an
    "unstable context" error.
    """
    if n_boot < 100:
        raise StatsError("n_boot must be at least 100")
    compact = _compacted(view)
    n = compact.n_rows
    rng = np.random.default_rng(seed)
    samples = []
    skipped = 0
    for _ in range(n_boot):
        for _attempt in range(10):
            idx = rng.integers(0, n, n)
            try:
                samples.append(statistic(compact._subset(idx)))
                break
            except MetricError:
                continue
        else:
            skipped += 1
    if skipped > n_boot // 2:
        raise StatsError("unstable context: most bootstrap resamples were degenerate")
    alpha = 1.0 - conf
    lo, hi = np.quantile(samples, [alpha / 2.0, 1.0 - alpha / 2.0])
    return float(lo), float(hi)


def _compacted(view: Dataset) -> Dataset:
    """Copy a view into dense base storage so per-resample costs scale with
    the view, not with its base dataset."""
    cols = {name: view._cols[name][view._idx] for name in view.attribute_names()}
    return Dataset(view.schema, cols)


# -- the main dispatch ---------------------------------------------------------


def test_metric(view: Dataset, bound: BoundMetric, cfg: StatConfig,
                entropy: Sequence[int] = ()) -> TestedMetric:
    """Point estimate, CI, and p-value for a bound metric on one population.

    Table metrics permute by drawing fixed-margin tables (exactly the
    distribution induced by shuffling the protected column) and bootstrap by
    multinomial resampling of the joint counts, both vectorized. Conditional
    metrics always resample: the permutation shuffles the protected column
    within each explanatory stratum.
    """
    bound = bound.resolve(view)
    n = view.n_rows
    rng = _rng(cfg, entropy)
    if bound.conditional:
        return _test_conditional(view, bound, cfg, rng)
    if bound.tabular:
        return _test_tabular(view, bound, cfg, rng, n)
    if bound.kind.name == CORR:
        return _test_corr(view, bound, cfg, rng, n)
    raise MetricError(f"no statistical test for metric {bound.kind.name!r}")


# -- table metrics -------------------------------------------------------------


def _test_tabular(view: Dataset, bound: BoundMetric, cfg: StatConfig,
                  rng: np.random.Generator, n: int) -> TestedMetric:
    table = contingency(view, bound.protected, bound.output)
    counts = table.counts
    obs = float(bound.value_from_tables(view, counts))
    if np.isnan(obs):
        raise MetricError(f"{bound.kind.display} undefined on this population")
    value = MetricValue(bound.kind, obs)

    # RATIO has no asymptotic route here; it always resamples.
    resample = n <= cfg.small_sample_threshold or bound.kind.name == RATIO
    if resample:
        perm_stats = bound.value_from_tables(view, _fixed_margin_tables(counts, cfg.n_permutations, rng))
        p = _perm_pvalue(perm_stats, obs, two_sided=bound.kind.signed)
        samples = _bootstrap_table_stats(view, bound, counts, cfg.n_bootstrap, rng)
        recipe = ("percentile", samples, obs)
        return TestedMetric(value, _ci_from_recipe(recipe, cfg.conf), p, RESAMPLING, _recipe=recipe)

    if bound.kind.name == NMI:
        mi = float(mi_from_tables(counts, normalized=False))
        g = 2.0 * counts.sum() * mi
        live_r = int((counts.sum(axis=1) > 0).sum())
        live_c = int((counts.sum(axis=0) > 0).sum())
        dof = max(1, (live_r - 1) * (live_c - 1))
        p = float(sps.chi2.sf(g, dof))
        samples = _bootstrap_table_stats(view, bound, counts, cfg.n_bootstrap, rng)
        recipe = ("percentile", samples, obs)
        return TestedMetric(value, _ci_from_recipe(recipe, cfg.conf), p, ASYMPTOTIC, _recipe=recipe)

    # DIFF: two-proportion z-test with a Wald interval.
    ti, ja, jb = bound._indices(view)
    xa, xb = counts[ti, ja], counts[ti, jb]
    na, nb = counts[:, ja].sum(), counts[:, jb].sum()
    pa, pb = xa / na, xb / nb
    pooled = (xa + xb) / (na + nb)
    se0 = np.sqrt(pooled * (1.0 - pooled) * (1.0 / na + 1.0 / nb))
    p = 1.0 if se0 == 0 else float(2.0 * sps.norm.sf(abs(obs) / se0))
    se1 = float(np.sqrt(pa * (1 - pa) / na + pb * (1 - pb) / nb))
    if se1 == 0:
        return TestedMetric(value, (obs, obs), p, ASYMPTOTIC, _recipe=("degenerate", obs))
    recipe = ("wald", obs, se1)
    return TestedMetric(value, _ci_from_recipe(recipe, cfg.conf), p, ASYMPTOTIC, _recipe=recipe)


def _fixed_margin_tables(counts: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """Random tables with the observed margins; the permutation null."""
    r, c = counts.shape
    col_tot = counts.sum(axis=0).astype(np.int64)
    row_tot = counts.sum(axis=1).astype(np.int64)
    if r == 2:
        first = rng.multivariate_hypergeometric(col_tot, int(row_tot[0]), size=k)
        return np.stack([first, col_tot[None, :] - first], axis=1)
    out = np.empty((k, r, c), dtype=np.int64)
    for i in range(k):
        remaining = col_tot.copy()
        for row in range(r - 1):
            draw = rng.multivariate_hypergeometric(remaining, int(row_tot[row]))
            out[i, row] = draw
            remaining -= draw
        out[i, r - 1] = remaining
    return out


def _perm_pvalue(perm_stats: np.ndarray, obs: float, two_sided: bool) -> float:
    if two_sided:
        perm_stats = np.abs(perm_stats)
        obs = abs(obs)
    # NaN permutation statistics count as extreme, which is conservative.
    exceed = int(np.sum(np.isnan(perm_stats) | (perm_stats >= obs)))
    return (1 + exceed) / (1 + len(perm_stats))


def _bootstrap_table_stats(view: Dataset, bound: BoundMetric, counts: np.ndarray,
                           n_boot: int, rng: np.random.Generator) -> np.ndarray:
    """Bootstrap statistics via multinomial resampling of the joint counts
    (equivalent in distribution to resampling rows with replacement)."""
    flat = counts.ravel().astype(np.int64)
    n = int(flat.sum())
    probs = flat / n
    tables = rng.multinomial(n, probs, size=n_boot).reshape(n_boot, *counts.shape)
    stats_ = bound.value_from_tables(view, tables)
    for _round in range(10):
        bad = np.flatnonzero(np.isnan(stats_))
        if len(bad) == 0:
            break
        redraw = rng.multinomial(n, probs, size=len(bad)).reshape(len(bad), *counts.shape)
        stats_[bad] = bound.value_from_tables(view, redraw)
    stats_ = stats_[~np.isnan(stats_)]
    if len(stats_) < n_boot // 2:
        raise StatsError("unstable context: most bootstrap resamples were degenerate")
    return np.sort(stats_)


# -- correlation ---------------------------------------------------------------


def _corr_pairs(view: Dataset, bound: BoundMetric) -> tuple[np.ndarray, np.ndarray]:
    x = view.scalar_values(bound.protected)
    y = view.scalar_values(bound.output)
    ok = ~(np.isnan(x) | np.isnan(y))
    return x[ok], y[ok]


def _corr_value(x: np.ndarray, y: np.ndarray) -> float:
    sx, sy = x.std(), y.std()
    if len(x) < 3 or sx == 0 or sy == 0:
        raise MetricError("constant column: correlation undefined")
    return float(np.clip(((x - x.mean()) * (y - y.mean())).mean() / (sx * sy), -1.0, 1.0))


def _test_corr(view: Dataset, bound: BoundMetric, cfg: StatConfig,
               rng: np.random.Generator, n: int) -> TestedMetric:
    x, y = _corr_pairs(view, bound)
    obs = _corr_value(x, y)
    value = MetricValue(bound.kind, obs)
    m = len(x)
    if m <= cfg.small_sample_threshold:
        p = _corr_permutation_p(x, y, obs, cfg.n_permutations, rng)
        samples = _corr_bootstrap(x, y, cfg.n_bootstrap, rng)
        recipe = ("percentile", samples, obs)
        return TestedMetric(value, _ci_from_recipe(recipe, cfg.conf), p, RESAMPLING, _recipe=recipe)
    if abs(obs) >= 1.0:
        p = 0.0
    else:
        t = obs * np.sqrt((m - 2) / (1.0 - obs * obs))
        p = float(2.0 * sps.t.sf(abs(t), m - 2))
    recipe = ("fisher", obs, m)
    return TestedMetric(value, _ci_from_recipe(recipe, cfg.conf), p, ASYMPTOTIC, _recipe=recipe)


def _corr_permutation_p(x: np.ndarray, y: np.ndarray, obs: float, n_perm: int,
                        rng: np.random.Generator) -> float:
    n = len(x)
    yc = y - y.mean()
    denom = n * x.std() * y.std()
    exceed = 0
    done = 0
    while done < n_perm:
        chunk = min(_BOOT_CHUNK, n_perm - done)
        xs = np.tile(x, (chunk, 1))
        xs = rng.permuted(xs, axis=1)
        stats_ = (xs - x.mean()) @ yc / denom
        exceed += int(np.sum(np.abs(stats_) >= abs(obs)))
        done += chunk
    return (1 + exceed) / (1 + n_perm)


def _corr_bootstrap(x: np.ndarray, y: np.ndarray, n_boot: int,
                    rng: np.random.Generator) -> np.ndarray:
    n = len(x)
    out = np.empty(n_boot)
    filled = 0
    rounds = 0
    while filled < n_boot and rounds < 12:
        chunk = min(_BOOT_CHUNK, n_boot - filled)
        idx = rng.integers(0, n, size=(chunk, n))
        xs, ys = x[idx], y[idx]
        xs = xs - xs.mean(axis=1, keepdims=True)
        ys = ys - ys.mean(axis=1, keepdims=True)
        with np.errstate(divide="ignore", invalid="ignore"):
            r = (xs * ys).mean(axis=1) / (xs.std(axis=1) * ys.std(axis=1))
        good = r[~np.isnan(r)]
        take = min(len(good), n_boot - filled)
        out[filled:filled + take] = good[:take]
        filled += take
        rounds += 1
    if filled < n_boot // 2:
        raise StatsError("unstable context: most bootstrap resamples were degenerate")
    return np.sort(out[:filled])


# -- conditional metrics --------------------------------------------------------


def _test_conditional(view: Dataset, bound: BoundMetric, cfg: StatConfig,
                      rng: np.random.Generator) -> TestedMetric:
    cond = conditional_metric(view, bound)
    obs = cond.aggregate.value
    value = MetricValue(bound.kind, obs)

    e_codes = view.codes(bound.kind.explanatory)
    retained = [p.value for p in cond.strata if p.excluded is None]
    e_attr = view.attribute(bound.kind.explanatory)
    strata_rows = [np.flatnonzero(e_codes == e_attr.categories.index(cat)) for cat in retained]

    base = bound.unconditional().resolve(view)
    p = _conditional_permutation_p(view, base, strata_rows, obs, cfg.n_permutations, rng)
    samples = _conditional_bootstrap(view, bound, cfg.n_bootstrap, rng)
    recipe = ("percentile", samples, obs)
    return TestedMetric(value, _ci_from_recipe(recipe, cfg.conf), p, RESAMPLING, _recipe=recipe)


def _stratum_statistic(base: BoundMetric, view: Dataset, rows: np.ndarray,
                       s_override: np.ndarray | None = None) -> float:
    sub = view._subset(rows)
    if s_override is not None:
        sub = sub._replace_column(base.protected, s_override)
    try:
        return base.value(sub)
    except MetricError:
        return np.nan


def _conditional_permutation_p(view: Dataset, base: BoundMetric,
                               strata_rows: list[np.ndarray], obs: float,
                               n_perm: int, rng: np.random.Generator) -> float:
    """Permutation null that shuffles the protected column within each
    explanatory stratum, preserving the stratum structure."""
    compact = _compacted(view)
    attr = compact.attribute(base.protected)
    col = (compact.scalar_values(base.protected) if attr.kind == "continuous"
           else compact.codes(base.protected))
    sizes = np.array([len(r) for r in strata_rows], dtype=np.float64)
    total = sizes.sum()
    two_sided = base.kind.signed
    ref = abs(obs) if two_sided else obs
    exceed = 0
    for _ in range(n_perm):
        vals = np.empty(len(strata_rows))
        for i, rows in enumerate(strata_rows):
            vals[i] = _stratum_statistic(base, compact, rows, rng.permutation(col[rows]))
        stat = float(np.sum(sizes * vals) / total)
        if two_sided:
            stat = abs(stat)
        if np.isnan(stat) or stat >= ref:
            exceed += 1
    return (1 + exceed) / (1 + n_perm)


def _conditional_bootstrap(view: Dataset, bound: BoundMetric, n_boot: int,
                           rng: np.random.Generator) -> np.ndarray:
    compact = _compacted(view)
    n = compact.n_rows
    samples = []
    skipped = 0
    for _ in range(n_boot):
        for _attempt in range(10):
            idx = rng.integers(0, n, n)
            try:
                samples.append(conditional_metric(compact._subset(idx), bound).aggregate.value)
                break
            except MetricError:
                continue
        else:
            skipped += 1
    if skipped > n_boot // 2:
        raise StatsError("unstable context: most bootstrap resamples were degenerate")
    return np.sort(np.asarray(samples))
