"""Command-line pipeline wiring.

Each subcommand is one stage: simulate → ingest → reconstruct → label →
build-dataset → train → evaluate → report.  Stages communicate only
through files; every output directory gets a manifest.json recording the
stage's effective configuration (never wall-clock state or input paths,
so reruns with the same seed are byte-identical).
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import re
import sys
from concurrent.futures import ProcessPoolExecutor
from fractions import Fraction

from .config import (
    BLOCKS_PER_HOUR,
    DEFAULT_LOCKERS,
    PERIOD_BLOCKS,
    THETA_LIQUIDITY,
    THETA_PRICE,
    THETA_RECOVERY,
)
from .corpus import Corpus, write_manifest
from .errors import InvalidParams, MissingMetadata, RugwatchError
from .events import read_fixture, write_fixture
from .features import (
    ACTIVITY_SAMPLES_NON_MALICIOUS,
    EARLY_HOURS,
    METHOD_ACTIVITY,
    METHOD_EARLY24,
    TRAINABLE_FEATURES,
    TokenReplay,
    build_dataset,
    plan_activity,
    plan_early24,
    read_feature_csv,
)
from .gbdt import METRIC_KEYS, Model, binary_metrics, cross_validate, design_matrix, write_cv_csv
from .labeling import (
    Thresholds,
    is_eligible,
    label_token,
    read_labels_csv,
    summarize,
    write_labels_csv,
)
from .report import (
    activity_markdown,
    activity_table,
    hours_markdown,
    hours_table,
    plot_activity,
    plot_hours,
    plot_label_distribution,
    plot_recovery_histogram,
    write_activity_csv,
    write_hours_csv,
    write_markdown_report,
)
from .rpc import DEFAULT_WINDOW, fetch_range
from .simulate import ChainConfig, generate_batch

log = logging.getLogger(__name__)

PREDICTIONS_CSV_FIELDS = ["token", "eval_block", "label", "proba", "predicted"]


def _pmap(fn, jobs, threads: int) -> list:
    """Order-preserving map; thread count never changes the results."""
    if threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(fn, jobs))
    return [fn(job) for job in jobs]


def _thresholds(args) -> Thresholds:
    return Thresholds(
        liquidity_md=Fraction(args.theta_liq),
        price_md=Fraction(args.theta_price),
        recovery=Fraction(args.theta_rc),
    )


def _lockers(args) -> tuple[str, ...]:
    if args.locker:
        return tuple(address.lower() for address in args.locker)
    return DEFAULT_LOCKERS


def _write_json(payload: dict, path) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(payload, handle, indent=2, sort_keys=True)
        handle.write("\n")


def _replay(token: str, corpus: Corpus, horizon: int, lockers, period_blocks: int) -> TokenReplay:
    meta = corpus.metas.get(token)
    if meta is None:
        raise MissingMetadata(f"no metadata for token {token}")
    replay = TokenReplay(token, corpus.events(token), meta, lockers=lockers, period_blocks=period_blocks)
    replay.advance(horizon)
    return replay


# -------------------------------------------------------------- simulate


def _chain_from_config(config: dict) -> ChainConfig:
    kwargs = {}
    for key in ("horizon_block", "creation_low", "creation_high"):
        if key in config:
            kwargs[key] = int(config[key])
    if "fee" in config:
        kwargs["fee"] = Fraction(str(config["fee"]))
    if "locker" in config:
        kwargs["locker"] = str(config["locker"]).lower()
    return ChainConfig(**kwargs)


def cmd_simulate(args) -> int:
    with open(args.spec, "r", encoding="utf-8") as handle:
        scenario = json.load(handle)
    counts = {str(kind): int(count) for kind, count in scenario.get("counts", {}).items()}
    if not counts:
        raise InvalidParams("scenario file lists no token counts")
    chain = _chain_from_config(scenario)
    generate_batch(counts, args.seed, args.out, chain, threads=args.threads)
    return 0


# ---------------------------------------------------------------- ingest


def cmd_ingest(args) -> int:
    token = args.token.lower()
    if args.fixture:
        events = read_fixture(args.fixture)
        source = {"source": "fixture"}
    else:
        if not args.address or args.from_block is None or args.to_block is None:
            raise InvalidParams("--rpc needs --address, --from-block, and --to-block")
        addresses = [address.lower() for address in args.address]
        events = fetch_range(args.rpc, addresses, args.from_block, args.to_block, window=args.window)
        source = {
            "source": "rpc",
            "from_block": args.from_block,
            "to_block": args.to_block,
            "window": args.window,
        }
    os.makedirs(os.path.join(args.out, "events"), exist_ok=True)
    write_fixture(os.path.join(args.out, "events", f"{token}.jsonl"), events)
    write_manifest(args.out, "ingest", {"seed": args.seed, "token": token, "n_events": len(events), **source})
    return 0


# ----------------------------------------------------------- reconstruct


def cmd_reconstruct(args) -> int:
    corpus = Corpus(args.corpus)
    tokens = [token.lower() for token in args.token] if args.token else corpus.tokens()
    lockers = _lockers(args)
    os.makedirs(os.path.join(args.out, "series"), exist_ok=True)
    written = 0
    for token in tokens:
        replay = _replay(token, corpus, args.horizon, lockers, args.period_blocks)
        primary = replay.primary_pool()
        if primary is None or primary.n_syncs == 0:
            log.warning("skipping %s: no pool activity at or before block %d", token, args.horizon)
            continue
        primary.write_series_csv(os.path.join(args.out, "series", f"{token}.csv"))
        written += 1
    write_manifest(
        args.out,
        "reconstruct",
        {
            "seed": args.seed,
            "horizon_block": args.horizon,
            "period_blocks": args.period_blocks,
            "lockers": list(lockers),
            "n_tokens": written,
        },
    )
    return 0


# ----------------------------------------------------------------- label


def _label_job(job):
    token, events, meta, horizon, thresholds, allowlisted, lockers, period_blocks = job
    replay = TokenReplay(token, events, meta, lockers=lockers, period_blocks=period_blocks)
    replay.advance(horizon)
    primary = replay.primary_pool()
    if not is_eligible(primary, meta.decimals):
        return None
    return label_token(
        token,
        primary,
        replay.last_activity_block(),
        horizon,
        thresholds,
        allowlisted,
        timestamps=replay.timestamps,
    )


def cmd_label(args) -> int:
    corpus = Corpus(args.corpus)
    thresholds = _thresholds(args)
    lockers = _lockers(args)
    jobs = [
        (
            token,
            corpus.events(token),
            corpus.metas[token],
            args.horizon,
            thresholds,
            token in corpus.allowlist,
            lockers,
            args.period_blocks,
        )
        for token in corpus.tokens()
    ]
    results = _pmap(_label_job, jobs, args.threads)
    records = [record for record in results if record is not None]
    skipped = len(results) - len(records)
    if skipped:
        log.info("%d tokens below the trading-activity floor were not labeled", skipped)
    os.makedirs(args.out, exist_ok=True)
    write_labels_csv(records, os.path.join(args.out, "labels.csv"))
    summary = summarize(records)
    _write_json(summary, os.path.join(args.out, "summary.json"))
    write_manifest(
        args.out,
        "label",
        {
            "seed": args.seed,
            "horizon_block": args.horizon,
            "thresholds": thresholds.as_dict(),
            "period_blocks": args.period_blocks,
            "lockers": list(lockers),
            "n_tokens": summary["n_tokens"],
            "n_ineligible": skipped,
        },
    )
    return 0


# ---------------------------------------------------------- build-dataset


def cmd_build_dataset(args) -> int:
    corpus = Corpus(args.corpus)
    labels = read_labels_csv(args.labels)
    lockers = _lockers(args)
    replays = {
        row["token"]: _replay(row["token"], corpus, args.horizon, lockers, args.period_blocks)
        for row in labels
    }
    if args.method == METHOD_ACTIVITY:
        plans = plan_activity(labels, replays, args.seed, samples_non_malicious=args.samples)
    else:
        plans = plan_early24(labels, replays, blocks_per_hour=args.blocks_per_hour, hours=args.hours)
    build_dataset(
        args.method,
        plans,
        corpus,
        args.out,
        args.seed,
        thresholds=_thresholds(args),
        lockers=lockers,
        period_blocks=args.period_blocks,
        threads=args.threads,
        extra_manifest={
            "horizon_block": args.horizon,
            "blocks_per_hour": args.blocks_per_hour,
            "period_blocks": args.period_blocks,
            "lockers": list(lockers),
        },
    )
    return 0


# ----------------------------------------------------------------- train


def cmd_train(args) -> int:
    if args.method == METHOD_EARLY24:
        if args.hour is None:
            raise InvalidParams("--hour is required when training on hourly datasets")
        if not 1 <= args.hour <= 99:
            raise InvalidParams(f"--hour out of range: {args.hour}")
        dataset_csv = os.path.join(args.dataset, f"hour_{args.hour:02d}.csv")
    else:
        if args.hour is not None:
            raise InvalidParams("--hour only applies to early24 training")
        dataset_csv = os.path.join(args.dataset, "features.csv")
    rows, _ = read_feature_csv(dataset_csv)
    X, y, groups, _ = design_matrix(rows)
    report = cross_validate(
        X,
        y,
        groups,
        seed=args.seed,
        n_trials=args.trials,
        n_splits=args.folds,
        threads=args.threads,
        rounds=args.rounds,
        patience=args.patience,
        feature_names=tuple(TRAINABLE_FEATURES),
    )
    os.makedirs(args.out, exist_ok=True)
    report.model.save(os.path.join(args.out, "model.json"))
    for fold_result, model in zip(report.folds, report.models):
        model.save(os.path.join(args.out, f"model_fold{fold_result.fold}.json"))
    write_cv_csv(report, os.path.join(args.out, "cv.csv"))
    metrics = {
        "method": args.method,
        "hour": args.hour,
        "n_rows": len(rows),
        "summary": report.summary(),
        "per_fold": [
            {
                "fold": fold.fold,
                "trial": fold.trial,
                "inner_f1": fold.inner_f1,
                "rounds": fold.rounds,
                "params": fold.params.as_dict(),
                "metrics": fold.metrics,
            }
            for fold in report.folds
        ],
    }
    _write_json(metrics, os.path.join(args.out, "metrics.json"))
    write_manifest(
        args.out,
        "train",
        {
            "seed": args.seed,
            "method": args.method,
            "hour": args.hour,
            "trials": args.trials,
            "folds": args.folds,
            "rounds": args.rounds,
            "patience": args.patience,
            "n_rows": len(rows),
            "feature_names": list(TRAINABLE_FEATURES),
        },
    )
    return 0


# -------------------------------------------------------------- evaluate


def cmd_evaluate(args) -> int:
    model = Model.load(args.model)
    rows, _ = read_feature_csv(args.features)
    X, y, _, _ = design_matrix(rows)
    proba = model.predict_proba(X)
    predicted = model.predict_label(X)
    os.makedirs(args.out, exist_ok=True)
    with open(os.path.join(args.out, "predictions.csv"), "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle)
        writer.writerow(PREDICTIONS_CSV_FIELDS)
        for row, p, label in zip(rows, proba, predicted):
            writer.writerow([row["token"], row["eval_block"], row["label"], repr(float(p)), int(label)])
    _write_json(binary_metrics(y, predicted), os.path.join(args.out, "metrics.json"))
    write_manifest(args.out, "evaluate", {"seed": args.seed, "n_rows": len(rows), "threshold": 0.5})
    return 0


# ---------------------------------------------------------------- report


def cmd_report(args) -> int:
    if not (args.labels or args.activity or args.early24):
        raise InvalidParams("nothing to report: pass --labels, --activity, or --early24")
    os.makedirs(args.out, exist_ok=True)
    sections: list[tuple[str, str]] = []
    produced: list[str] = []

    if args.labels:
        label_rows = read_labels_csv(args.labels)
        summary = summarize(label_rows)
        _write_json(summary, os.path.join(args.out, "label_summary.json"))
        plot_label_distribution(summary, os.path.join(args.out, "labels.png"))
        plot_recovery_histogram(label_rows, os.path.join(args.out, "recovery.png"))
        counts = ", ".join(f"{name}: {count}" for name, count in summary["by_label"].items())
        body = (
            f"{summary['n_tokens']} labeled tokens — {counts}.\n\n"
            "![label distribution](labels.png)\n\n![recovery](recovery.png)"
        )
        sections.append(("Labels", body))
        produced += ["label_summary.json", "labels.png", "recovery.png"]

    if args.activity:
        with open(os.path.join(args.activity, "metrics.json"), "r", encoding="utf-8") as handle:
            metrics = json.load(handle)
        table = activity_table(metrics["summary"])
        write_activity_csv(table, os.path.join(args.out, "activity_table.csv"))
        plot_activity(table, os.path.join(args.out, "activity.png"))
        sections.append(
            ("Detection, sampled activity", activity_markdown(table) + "\n![metrics](activity.png)")
        )
        produced += ["activity_table.csv", "activity.png"]

    if args.early24:
        summaries = {}
        for name in sorted(os.listdir(args.early24)):
            match = re.fullmatch(r"hour_(\d{2})", name)
            metrics_path = os.path.join(args.early24, name, "metrics.json")
            if match and os.path.exists(metrics_path):
                with open(metrics_path, "r", encoding="utf-8") as handle:
                    summaries[int(match.group(1))] = json.load(handle)["summary"]
        if not summaries:
            raise InvalidParams("no hour_XX/metrics.json files found under the hourly training directory")
        rows = hours_table(summaries)
        write_hours_csv(rows, os.path.join(args.out, "early24_hours.csv"))
        plot_hours(rows, os.path.join(args.out, "hours.png"))
        sections.append(
            ("Detection by snapshot hour", hours_markdown(rows) + "\n![metrics by hour](hours.png)")
        )
        produced += ["early24_hours.csv", "hours.png"]

    write_markdown_report(sections, os.path.join(args.out, "report.md"))
    produced.append("report.md")
    write_manifest(
        args.out,
        "report",
        {"seed": args.seed, "sections": [heading for heading, _ in sections], "files": sorted(produced)},
    )
    return 0


# ---------------------------------------------------------------- parser


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed; all randomness derives from it")
    parser.add_argument("--threads", type=int, default=1, help="worker processes for parallel stages")
    parser.add_argument("--out", required=True, help="output directory (created if missing)")


def _add_domain(parser: argparse.ArgumentParser, horizon: bool = True) -> None:
    if horizon:
        parser.add_argument("--horizon", type=int, required=True, help="last block visible to this stage")
    parser.add_argument("--theta-liq", default=str(THETA_LIQUIDITY), help="liquidity max-drop cutoff (fraction)")
    parser.add_argument("--theta-price", default=str(THETA_PRICE), help="price max-drop cutoff (fraction)")
    parser.add_argument("--theta-rc", default=str(THETA_RECOVERY), help="recovery cutoff (fraction)")
    parser.add_argument("--period-blocks", type=int, default=PERIOD_BLOCKS, help="blocks per analysis period")
    parser.add_argument("--locker", action="append", default=None, help="LP locker address (repeatable)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rugwatch", description="Token lifecycle analysis pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a scripted token corpus")
    p.add_argument("--spec", required=True, help="JSON file with scenario counts and chain settings")
    _add_common(p)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("ingest", help="collect one token's event stream into fixture form")
    p.add_argument("--token", required=True, help="token address the stream belongs to")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--fixture", help="existing event JSONL to validate and normalize")
    source.add_argument("--rpc", help="JSON-RPC endpoint to fetch logs from")
    p.add_argument("--address", action="append", default=None, help="emitter address filter (repeatable)")
    p.add_argument("--from-block", type=int, default=None)
    p.add_argument("--to-block", type=int, default=None)
    p.add_argument("--window", type=int, default=DEFAULT_WINDOW, help="blocks per getLogs page")
    _add_common(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("reconstruct", help="export per-pool price/liquidity series")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--token", action="append", default=None, help="restrict to these tokens (repeatable)")
    _add_domain(p)
    _add_common(p)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("label", help="apply the labeling rules to every corpus token")
    p.add_argument("--corpus", required=True, help="corpus directory")
    _add_domain(p)
    _add_common(p)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("build-dataset", help="snapshot features at planned evaluation blocks")
    p.add_argument("--corpus", required=True, help="corpus directory")
    p.add_argument("--labels", required=True, help="labels.csv from the label stage")
    p.add_argument("--method", required=True, choices=[METHOD_ACTIVITY, METHOD_EARLY24])
    p.add_argument("--samples", type=int, default=ACTIVITY_SAMPLES_NON_MALICIOUS,
                   help="eval points per non-malicious token (activity)")
    p.add_argument("--blocks-per-hour", type=int, default=BLOCKS_PER_HOUR)
    p.add_argument("--hours", type=int, default=EARLY_HOURS, help="hourly snapshots per token (early24)")
    _add_domain(p)
    _add_common(p)
    p.set_defaults(func=cmd_build_dataset)

    p = sub.add_parser("train", help="cross-validated model search on a built dataset")
    p.add_argument("--dataset", required=True, help="build-dataset output directory")
    p.add_argument("--method", required=True, choices=[METHOD_ACTIVITY, METHOD_EARLY24])
    p.add_argument("--hour", type=int, default=None, help="which hourly dataset to train on (early24)")
    p.add_argument("--trials", type=int, default=30, help="random-search trials per fold")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--rounds", type=int, default=200, help="boosting-round budget")
    p.add_argument("--patience", type=int, default=20, help="early-stopping patience on the inner holdout")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="score a saved model on a feature CSV")
    p.add_argument("--model", required=True, help="model.json from the train stage")
    p.add_argument("--features", required=True, help="feature CSV to score")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("report", help="render tables and figures from stage outputs")
    p.add_argument("--labels", default=None, help="labels.csv to summarize")
    p.add_argument("--activity", default=None, help="train output directory for the activity run")
    p.add_argument("--early24", default=None, help="directory holding hour_XX train outputs")
    _add_common(p)
    p.set_defaults(func=cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else 2
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except RugwatchError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
