"""Command-line front door.

Subcommands: testing, discovery, error-profile (run one investigation and
write its report), debug (re-validate a saved investigation's contexts with
an explanatory attribute on the next budgeted test set), bench (planted
disparity recall benchmark), and tree-vs-itemsets (guided vs unguided
subpopulation search comparison).

Exit codes: 0 success, 1 usage error, 2 data error, 3 budget exhausted.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys

from .dataset import (
    BudgetError,
    ContextPredicate,
    DataError,
    DataSource,
    load_csv,
    save_csv,
    schema_from_json,
)
from .investigations import (
    DISCOVERY,
    ERROR_PROFILING,
    TESTING,
    InvestigationSpec,
    TrainedInvestigation,
    TrainUnit,
    debug_with_explanatory,
    filter_and_rank,
    train,
    validate,
)
from .metrics import BoundMetric, MetricError, MetricKind
from .report import render_text, report_to_obj
from .stats import StatConfig, StatsError
from .synth import run_detection_benchmark, tree_vs_itemsets
from .tree import ContextNode, TreeParams, TreeStats

USAGE_ERROR = 1
DATA_ERROR = 2
BUDGET_ERROR = 3

STATE_VERSION = 1


def _default_seed() -> int:
    env = os.environ.get("UATEST_SEED")
    return int(env) if env else 0


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--conf", type=float, default=0.95, help="confidence level")
    p.add_argument("--seed", type=int, default=None,
                   help="master seed (falls back to UATEST_SEED, then 0)")
    p.add_argument("--min-size", type=int, default=100, help="minimum context size")
    p.add_argument("--max-depth", type=int, default=5, help="maximum context depth")
    p.add_argument("--threads", type=int, default=os.cpu_count(),
                   help="worker cap for validation; results are thread-count invariant")
    p.add_argument("--format", choices=("text", "json"), default="text", help="report format")
    p.add_argument("--out", default=None, help="output path (default: stdout)")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--data", required=True, help="CSV file with a header row")
    p.add_argument("--schema", default=None,
                   help="sidecar JSON schema: {column: {kind, role, categories?}}")


def _add_investigation(p: argparse.ArgumentParser) -> None:
    _add_data(p)
    p.add_argument("--protected", default=None, help="comma-separated protected attributes")
    p.add_argument("--output", default=None, help="output attribute (comma-separated for discovery)")
    p.add_argument("--context", default=None, help="comma-separated contextual attributes")
    p.add_argument("--explanatory", default=None, help="explanatory attribute to condition on")
    p.add_argument("--metric", choices=("diff", "ratio", "nmi", "corr"), default=None,
                   help="metric override (default: auto-select by data types)")
    p.add_argument("--budget", type=int, default=1, help="number of adaptive investigations")
    p.add_argument("--train-fraction", type=float, default=0.5, help="training split fraction")
    p.add_argument("--state", default=None, help="state file for follow-up debug runs")
    _add_common(p)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="uatest",
        description="Audit application outputs for unwarranted associations "
                    "with protected user attributes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("testing", help="test a suspected association",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_investigation(p)

    p = sub.add_parser("discovery", help="rank a label space and test the strongest labels",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_investigation(p)
    p.add_argument("--top-k", type=int, default=35, help="labels to test per protected attribute")

    p = sub.add_parser("error-profile", help="test per-user prediction error for associations",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_investigation(p)
    p.add_argument("--ground-truth", required=True, help="ground-truth column for the output")
    p.add_argument("--error", choices=("absolute", "zero_one"), default="absolute",
                   help="error function")

    p = sub.add_parser("debug", help="re-validate a saved run's contexts with an explanatory attribute",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    _add_data(p)
    p.add_argument("--state", required=True, help="state file written by a previous run")
    p.add_argument("--explanatory", required=True, help="explanatory attribute to condition on")
    p.add_argument("--threads", type=int, default=os.cpu_count())
    p.add_argument("--format", choices=("text", "json"), default="text")
    p.add_argument("--out", default=None)

    p = sub.add_parser("bench", help="planted-disparity detection benchmark",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--n", type=int, default=100_000, help="population size")
    p.add_argument("--plants", type=int, default=10, help="number of planted contexts")
    p.add_argument("--delta", type=float, default=0.15, help="planted half-effect")
    p.add_argument("--size", type=int, default=2000, help="expected plant size in rows")
    p.add_argument("--dump-data", default=None,
                   help="also write the generated population as CSV")
    _add_common(p)

    p = sub.add_parser("tree-vs-itemsets", help="guided tree vs unguided itemset enumeration",
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument("--n", type=int, default=10_000, help="population size")
    p.add_argument("--attrs", type=int, default=15, help="number of contextual attributes")
    _add_common(p)
    p.set_defaults(min_size=500)

    return parser


def _emit(text: str, out: str | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        with open(out, "w") as fh:
            fh.write(text)


def _load_dataset(args):
    schema = "infer"
    if args.schema:
        with open(args.schema) as fh:
            schema = schema_from_json(json.load(fh))
    return load_csv(args.data, schema)


def _roles_from(args, data) -> tuple[tuple[str, ...], tuple[str, ...] | str, tuple[str, ...], str | None]:
    def listed(flag):
        return tuple(s.strip() for s in flag.split(",") if s.strip()) if flag else ()

    protected = listed(args.protected) or tuple(
        a.name for a in data.schema if a.role == "protected")
    outputs = listed(args.output) or tuple(
        a.name for a in data.schema if a.role == "output")
    context = listed(args.context) or tuple(
        a.name for a in data.schema if a.role == "contextual")
    explanatory = args.explanatory or next(
        (a.name for a in data.schema if a.role == "explanatory"), None)
    if not protected:
        raise DataError("no protected attributes given (use --protected or a schema role)")
    if not outputs:
        raise DataError("no output attribute given (use --output or a schema role)")
    return protected, outputs, context, explanatory


def _file_sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _reports_text(reports, fmt: str) -> str:
    if fmt == "json":
        return json.dumps({"reports": [report_to_obj(r) for r in reports]}, indent=2) + "\n"
    return "\n".join(render_text(r) for r in reports)


# -- state persistence -------------------------------------------------------


def _bound_to_obj(b: BoundMetric) -> dict:
    return {"metric": b.kind.name, "explanatory": b.kind.explanatory,
            "protected": b.protected, "output": b.output,
            "target": b.target, "group_a": b.group_a, "group_b": b.group_b}


def _bound_from_obj(obj: dict) -> BoundMetric:
    return BoundMetric(MetricKind(obj["metric"], obj.get("explanatory")),
                       obj["protected"], obj["output"], obj.get("target"),
                       obj.get("group_a"), obj.get("group_b"))


def _predicate_obj(p: ContextPredicate) -> dict:
    if p.op == "in":
        return {"attribute": p.attribute, "op": p.op, "values": list(p.values)}
    return {"attribute": p.attribute, "op": p.op, "threshold": p.threshold}


def _save_state(path: str, args, spec: InvestigationSpec, source: DataSource,
                trained: TrainedInvestigation, reports) -> None:
    state = {
        "version": STATE_VERSION,
        "data_sha256": _file_sha256(args.data),
        "datasource": {
            "budget": source.budget,
            "train_fraction": source.train_fraction,
            "seed": source.seed,
            "min_size": source.min_size,
            "consumed": source.consumed,
        },
        "spec": {
            "kind": spec.kind,
            "protected": list(spec.protected),
            "output": list(spec.output) if isinstance(spec.output, tuple) else spec.output,
            "contextual": list(spec.contextual),
            "metric": spec.metric,
            "top_k": spec.top_k,
            "ground_truth": spec.ground_truth,
            "error_kind": spec.error_kind,
            "tree": {"min_size": spec.tree.min_size, "max_depth": spec.tree.max_depth,
                     "quantile_splits": spec.tree.quantile_splits},
            "stats": {"conf": spec.stats.conf,
                      "small_sample_threshold": spec.stats.small_sample_threshold,
                      "n_permutations": spec.stats.n_permutations,
                      "n_bootstrap": spec.stats.n_bootstrap,
                      "seed": spec.stats.seed},
        },
        "train_size": trained.train_size,
        "dropped_train": trained.dropped_train,
        "output_display": trained.output_display,
        "units": [
            {
                "protected": u.protected,
                "output": u.output,
                "label": u.label,
                "bound": _bound_to_obj(u.bound),
                "contexts": [
                    {"predicates": [_predicate_obj(p) for p in c.predicates],
                     "n_train": c.n_train,
                     "train_metric": None if c.train_metric != c.train_metric
                     else c.train_metric}
                    for c in u.contexts
                ],
            }
            for u in trained.units
        ],
        "reports": [report_to_obj(r) for r in reports],
    }
    with open(path, "w") as fh:
        json.dump(state, fh, indent=2)


def _restore_state(path: str, data_path: str):
    with open(path) as fh:
        state = json.load(fh)
    if state.get("version") != STATE_VERSION:
        raise DataError(f"unsupported state file version in {path}")
    if state["data_sha256"] != _file_sha256(data_path):
        raise DataError("data file does not match the one recorded in the state file")
    spec_obj = state["spec"]
    spec = InvestigationSpec(
        kind=spec_obj["kind"],
        protected=tuple(spec_obj["protected"]),
        output=tuple(spec_obj["output"]) if isinstance(spec_obj["output"], list) else spec_obj["output"],
        contextual=tuple(spec_obj["contextual"]),
        metric=spec_obj.get("metric"),
        top_k=spec_obj["top_k"],
        ground_truth=spec_obj.get("ground_truth"),
        error_kind=spec_obj.get("error_kind", "absolute"),
        tree=TreeParams(**spec_obj["tree"]),
        stats=StatConfig(**spec_obj["stats"]),
    )
    units = []
    for uo in state["units"]:
        contexts = []
        for co in uo["contexts"]:
            preds = tuple(
                ContextPredicate(p["attribute"], p["op"],
                                 values=tuple(p["values"]) if "values" in p else None,
                                 threshold=p.get("threshold"))
                for p in co["predicates"]
            )
            metric_value = co["train_metric"]
            contexts.append(ContextNode(preds, co["n_train"],
                                        float("nan") if metric_value is None else metric_value,
                                        None))
        units.append(TrainUnit(uo["protected"], uo["output"], uo.get("label"),
                               _bound_from_obj(uo["bound"]), contexts, TreeStats()))
    trained = TrainedInvestigation(spec, units, state["train_size"],
                                   state["dropped_train"], state["output_display"])
    return state, trained


# -- subcommand implementations ------------------------------------------------


def _run_investigation_cmd(args, kind: str) -> int:
    data = _load_dataset(args)
    protected, outputs, context, explanatory = _roles_from(args, data)
    seed = args.seed if args.seed is not None else _default_seed()
    if kind == DISCOVERY:
        output = outputs
    else:
        if len(outputs) != 1:
            raise DataError(f"{kind} takes exactly one output attribute, got {list(outputs)}")
        output = outputs[0]
    spec = InvestigationSpec(
        kind=kind,
        protected=protected,
        output=output,
        contextual=context,
        explanatory=explanatory,
        metric=args.metric,
        top_k=getattr(args, "top_k", 35),
        ground_truth=getattr(args, "ground_truth", None),
        error_kind=getattr(args, "error", "absolute"),
        tree=TreeParams(min_size=args.min_size, max_depth=args.max_depth),
        stats=StatConfig(conf=args.conf, seed=seed),
    )
    source = DataSource(data, budget=args.budget, train_fraction=args.train_fraction,
                        seed=seed, min_size=args.min_size)
    trained = train(spec, source.train)
    validated = validate(trained, source.next_test_set(), threads=args.threads)
    reports = filter_and_rank(validated)
    _emit(_reports_text(reports, args.format), args.out)
    if args.state:
        _save_state(args.state, args, spec, source, trained, reports)
    return 0


def _debug_cmd(args) -> int:
    state, trained = _restore_state(args.state, args.data)
    data = load_csv(args.data, _schema_for_debug(trained, args))
    ds_obj = state["datasource"]
    source = DataSource(data, budget=ds_obj["budget"], train_fraction=ds_obj["train_fraction"],
                        seed=ds_obj["seed"], min_size=ds_obj["min_size"])
    for _ in range(ds_obj["consumed"]):
        source.next_test_set()
    fresh = source.next_test_set()
    run = debug_with_explanatory(trained, args.explanatory, fresh, threads=args.threads)
    _emit(_reports_text(run.reports, args.format), args.out)
    state["datasource"]["consumed"] = source.consumed
    state["reports"] = [report_to_obj(r) for r in run.reports]
    with open(args.state, "w") as fh:
        json.dump(state, fh, indent=2)
    return 0


def _schema_for_debug(trained: TrainedInvestigation, args):
    if getattr(args, "schema", None):
        with open(args.schema) as fh:
            return schema_from_json(json.load(fh))
    return "infer"


def _bench_cmd(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    result = run_detection_benchmark(
        n=args.n, n_plants=args.plants, delta=args.delta, plant_size=args.size,
        seed=seed, conf=args.conf, min_size=args.min_size, max_depth=args.max_depth,
        threads=args.threads,
    )
    lines = ["delta,size,recall,false_discoveries,seed",
             f"{result.delta},{result.plant_size},{result.recall},"
             f"{result.false_discoveries},{result.seed}"]
    _emit("\n".join(lines) + "\n", args.out)
    if args.dump_data:
        save_csv(result.data, args.dump_data)
    return 0


def _tree_vs_itemsets_cmd(args) -> int:
    seed = args.seed if args.seed is not None else _default_seed()
    rows = tree_vs_itemsets(n=args.n, n_attrs=args.attrs, seed=seed,
                            min_size=args.min_size, max_depth=args.max_depth)
    lines = ["strategy,candidates_considered,top3_mean_association"]
    lines += [f"{r.strategy},{r.candidates_considered},{r.top3_mean_association}" for r in rows]
    _emit("\n".join(lines) + "\n", args.out)
    return 0


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        # argparse exits 0 for --help, 2 for usage problems
        return 0 if exc.code == 0 else USAGE_ERROR
    try:
        if args.command == "testing":
            return _run_investigation_cmd(args, TESTING)
        if args.command == "discovery":
            return _run_investigation_cmd(args, DISCOVERY)
        if args.command == "error-profile":
            return _run_investigation_cmd(args, ERROR_PROFILING)
        if args.command == "debug":
            return _debug_cmd(args)
        if args.command == "bench":
            return _bench_cmd(args)
        if args.command == "tree-vs-itemsets":
            return _tree_vs_itemsets_cmd(args)
        parser.error(f"unknown command {args.command!r}")
    except BudgetError as exc:
        sys.stderr.write(f"uatest: {exc}\n")
        return BUDGET_ERROR
    except FileNotFoundError as exc:
        sys.stderr.write(f"uatest: {exc}\n")
        return DATA_ERROR
    except (DataError, MetricError, StatsError) as exc:
        sys.stderr.write(f"uatest: {exc}\n")
        return DATA_ERROR
    return 0


run = main  # canonical operation name


if __name__ == "__main__":
    sys.exit(main())
