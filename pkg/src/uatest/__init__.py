"""uatest: discover, test, and rank unwarranted associations between
protected user attributes and application outputs."""

from .dataset import (
    AttributeSchema,
    BudgetError,
    ContextPredicate,
    DataError,
    DataSource,
    Dataset,
    load_csv,
    make_datasource,
    save_csv,
    schema_from_json,
)
from .metrics import (
    BoundMetric,
    ContingencyTable,
    MetricError,
    MetricKind,
    MetricValue,
    RegressionScores,
    binary_difference,
    binary_ratio,
    conditional_metric,
    contingency,
    logistic_label_scores,
    mutual_information,
    pearson_correlation,
)
from .stats import (
    StatConfig,
    StatsError,
    TestedMetric,
    apply_corrections,
    bootstrap_ci,
    corrected_cis,
    holm_bonferroni,
    permutation_p,
    test_metric,
)
from .tree import ContextNode, TreeParams, TreeStats, enumerate_splits, find_contexts, score_split
from .investigations import (
    DISCOVERY,
    ERROR_PROFILING,
    TESTING,
    Finding,
    InvestigationRun,
    InvestigationSpec,
    ReportModel,
    ValidationResult,
    compute_error,
    debug_with_explanatory,
    filter_and_rank,
    run_investigation,
    train,
    validate,
)
from .report import parse_json, render_json, render_text
from .synth import (
    BenchResult,
    CategoricalSpec,
    DetectionScore,
    PlantSpec,
    PopulationSpec,
    generate,
    make_disjoint_plants,
    run_detection_benchmark,
    score_detection,
    tree_vs_itemsets,
)
from .data import berkeley_admissions

__version__ = "0.1.0"
