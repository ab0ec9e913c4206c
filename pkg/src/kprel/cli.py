"""Umbrella command-line interface for the pipeline.

Subcommands read and write the JSONL/CSV interfaces defined by the
library modules. Every command exits 0 on success and nonzero with a
one-line diagnostic on failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import signal
import sys
from pathlib import Path

from . import dataio, evalkit, judge, labels, scorer, serve, simkit
from .errors import KprelError, UndefinedMetricError
from .text import featurize_pairs

ENV_BIND = "KPREL_BIND"
ENV_MODEL = "KPREL_MODEL"
ENV_THRESHOLD = "KPREL_THRESHOLD"

DEFAULT_BIND = "127.0.0.1:8080"


def _load_model(path: str) -> scorer.RelevanceModel:
    return scorer.load_model(Path(path).read_bytes())


def _resolve_threshold(args) -> float:
    if getattr(args, "threshold", None) is not None:
        return args.threshold
    if getattr(args, "calibration", None) is not None:
        doc = json.loads(Path(args.calibration).read_text(encoding="utf-8"))
        return float(doc["threshold"])
    raise KprelError("either --threshold or --calibration is required")


def _cmd_ingest(args) -> int:
    kind = args.kind
    out = Path(args.output)
    if kind == "clicks":
        records = dataio.read_click_records(Path(args.input))
        if not args.keep_all:
            records = labels.filter_clicks(records)
        count = dataio.write_jsonl(records, out)
    elif kind == "human":
        examples = []
        for j in dataio.read_human_judgments(Path(args.input)):
            label = labels.binarize_human(j)
            if label is not None:
                examples.append(
                    labels.LabeledExample(j.title, j.category, j.keyphrase, label, "human")
                )
        count = dataio.write_jsonl(examples, out)
    elif kind == "search":
        count = dataio.write_jsonl(dataio.read_search_records(Path(args.input)), out)
    else:  # judgments
        count = dataio.write_jsonl(dataio.read_judge_verdicts(Path(args.input)), out)
    print(f"ingested {count} {kind} records -> {out}")
    return 0


def _cmd_mix(args) -> int:
    strategy = labels.MixStrategy.parse(args.strategy)
    clicks = dataio.read_click_records(Path(args.clicks)) if args.clicks else []
    search = dataio.read_search_records(Path(args.search)) if args.search else []
    judgments = dataio.read_judge_verdicts(Path(args.judgments)) if args.judgments else []
    dataset = labels.mix(strategy, clicks=clicks, search=search, judgments=judgments)
    dataio.write_jsonl(dataset, Path(args.output))
    positives = sum(1 for e in dataset if e.label == labels.LABEL_RELEVANT)
    print(
        f"{strategy.name}: {len(dataset)} examples "
        f"({positives} positive, {len(dataset) - positives} negative) -> {args.output}"
    )
    return 0


def _cmd_judge(args) -> int:
    out = Path(args.output)
    if args.simulated:
        if not args.config:
            raise KprelError("--simulated requires --config pointing at a simulator config")
        config = _sim_config_from_file(Path(args.config), seed=args.seed)
        world = simkit.generate_world(config)
        verdicts = judge.simulated_judge(world, args.epsilon)
        dataio.write_jsonl(verdicts, out)
        print(f"simulated judge: {len(verdicts)} verdicts (epsilon={args.epsilon}) -> {out}")
        return 0
    if not args.backend_url:
        raise KprelError("either --backend-url or --simulated is required")
    if not args.pairs:
        raise KprelError("--pairs is required with --backend-url")
    rows = dataio.read_recommendations(Path(args.pairs))
    pairs = [
        judge.PromptRequest(
            title=r.title, keyphrase=r.keyphrase, item_id=r.item_id, category=r.category
        )
        for r in rows
    ]
    token = os.environ.get(args.auth_token_env) if args.auth_token_env else None
    backend = judge.HTTPJudgeBackend(
        args.backend_url,
        auth_token=token,
        max_batch_size=args.batch_size,
        timeout=args.timeout,
    )
    cache = judge.VerdictCache(Path(args.cache)) if args.cache else None
    result = judge.judge_batch(
        pairs,
        backend,
        cache=cache,
        judge_kind=args.judge_kind,
        max_concurrency=args.concurrency,
    )
    dataio.write_jsonl(result.verdicts, out)
    print(
        f"judged {len(result.verdicts)} pairs "
        f"(cache hits {result.cache_hits}, backend calls {result.backend_calls}, "
        f"skipped {len(result.skipped)}, failed {len(result.failed)}) -> {out}"
    )
    return 1 if result.failed else 0


def _cmd_train(args) -> int:
    dataset = dataio.read_labeled_examples(Path(args.dataset))
    config = scorer.TrainConfig(
        learning_rate=args.learning_rate,
        epochs=args.epochs,
        seed=args.seed,
        l2=args.l2,
        positive_class_weight=args.positive_class_weight,
    )
    result = scorer.train(dataset, config, trained_on=args.strategy)
    Path(args.output).write_bytes(scorer.save_model(result.model))
    print(
        f"trained {result.model.version} on {result.n_examples} examples "
        f"({result.n_positive} positive): loss {result.final_loss:.6f}, "
        f"accuracy {result.train_accuracy:.4f} -> {args.output}"
    )
    return 0


def _cmd_calibrate(args) -> int:
    model = _load_model(args.model)
    click_log = dataio.read_click_records(Path(args.clicks))
    result = evalkit.calibrate(model, click_log, target=args.target, weighting=args.weighting)
    Path(args.output).write_text(
        json.dumps(dataclasses.asdict(result), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    print(
        f"threshold {result.threshold:.6f} retains {result.achieved_retention:.4f} "
        f"of clicks ({result.weighting}, {result.clicked_pairs_seen} clicked pairs) "
        f"-> {args.output}"
    )
    return 0


def _cmd_eval(args) -> int:
    model = _load_model(args.model)
    click_log = dataio.read_click_records(Path(args.clicks))
    calibration = evalkit.calibrate(
        model, click_log, target=args.target, weighting=args.weighting
    )
    doc = {
        "model": args.model,
        "threshold": calibration.threshold,
        "clicks_retained": calibration.achieved_retention,
        "weighting": calibration.weighting,
        "sales_retention": evalkit.sales_retention(model, calibration.threshold, click_log),
    }
    if args.recommendations:
        recs = dataio.read_recommendations(Path(args.recommendations))
        doc["keyphrases_per_item"] = _keyphrases_per_item(model, calibration.threshold, recs)
        if args.search_verdicts:
            oracle = dataio.load_search_oracle(Path(args.search_verdicts))
            try:
                doc["search_pass_rate"] = evalkit.search_pass_rate(
                    model, calibration.threshold, recs, oracle
                )
            except UndefinedMetricError:
                doc["search_pass_rate"] = None
    text = json.dumps(doc, indent=2, sort_keys=True) + "\n"
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    print(text, end="")
    return 0


def _keyphrases_per_item(model, threshold, recs) -> float:
    features = featurize_pairs((r.keyphrase, r.category, r.title) for r in recs)
    scores = scorer.score_features(model, features)
    n_items = len({r.item_id for r in recs})
    survivors = int((scores >= threshold).sum())
    return survivors / n_items if n_items else 0.0


def _cmd_compare(args) -> int:
    named = []
    for spec in args.model:
        name, _, path = spec.partition("=")
        if not path:
            raise KprelError(f"--model expects NAME=PATH, got {spec!r}")
        named.append((name, _load_model(path)))
    click_log = dataio.read_click_records(Path(args.clicks))
    recommendations = dataio.read_recommendations(Path(args.recommendations))
    oracle = dataio.load_search_oracle(Path(args.search_verdicts))
    reports = evalkit.compare(
        named,
        click_log,
        recommendations,
        oracle,
        target=args.target,
        baseline_name=args.baseline,
        weighting=args.weighting,
    )
    sys.stdout.write(evalkit.render_compare_table(reports))
    if args.json_out:
        Path(args.json_out).write_text(
            evalkit.compare_report_json(reports, args.baseline, args.target, args.weighting),
            encoding="utf-8",
        )
    if args.csv_out:
        Path(args.csv_out).write_text(evalkit.compare_report_csv(reports), encoding="utf-8")
    return 0


def _sim_config_from_file(path: Path | None, seed: int | None = None) -> simkit.SimConfig:
    fields = {}
    if path is not None:
        doc = json.loads(Path(path).read_text(encoding="utf-8"))
        known = {f.name for f in dataclasses.fields(simkit.SimConfig)}
        unknown = set(doc) - known
        if unknown:
            raise KprelError(f"unknown simulator config fields: {sorted(unknown)}")
        fields.update(doc)
    if seed is not None:
        fields["seed"] = seed
    return simkit.SimConfig(**fields)


def _cmd_simulate(args) -> int:
    config = _sim_config_from_file(Path(args.config) if args.config else None, seed=args.seed)
    world = simkit.generate_world(config)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    (out_dir / "config.json").write_text(
        json.dumps(dataclasses.asdict(config), indent=2, sort_keys=True) + "\n",
        encoding="utf-8",
    )
    log = simkit.run_auctions(world)
    dataio.write_jsonl(log, out_dir / "clicks.jsonl")
    dataio.write_jsonl(world.recommendation_pool(), out_dir / "recommendations.jsonl")
    dataio.write_ground_truth(
        (
            (it.item_id, kp.text, bool(world.relevant[i, j]))
            for i, it in enumerate(world.items)
            for j, kp in enumerate(world.keyphrases)
        ),
        out_dir / "ground_truth.jsonl",
    )
    dataio.write_search_verdicts(
        (
            (it.item_id, kp.text, bool(world.search_pass[i, j]))
            for i, it in enumerate(world.items)
            for j, kp in enumerate(world.keyphrases)
        ),
        out_dir / "search_verdicts.jsonl",
    )
    dataio.write_jsonl(simkit.search_relevance_records(world), out_dir / "search_relevance.jsonl")
    print(
        f"simulated {config.n_items} items x {config.n_keyphrases} keyphrases "
        f"(seed {config.seed}): {len(log)} click records -> {out_dir}"
    )
    return 0


def _cmd_batch_infer(args) -> int:
    model = _load_model(args.model)
    threshold = _resolve_threshold(args)
    pairs = dataio.read_recommendations(Path(args.pairs))
    snapshot, rejects = serve.batch_infer(model, threshold, pairs, partitions=args.partitions)
    out = Path(args.out)
    serve.write_snapshot(snapshot, out)
    serve.write_rejects(rejects, Path(str(out) + ".rejects"))
    print(
        f"scored {snapshot.header.record_count} pairs "
        f"({len(rejects)} rejected) -> {out}"
    )
    return 0


def _cmd_diff_merge(args) -> int:
    full = serve.read_snapshot(Path(args.full))
    diff = serve.read_snapshot(Path(args.diff))
    merged = serve.diff_merge(full, diff, allow_version_change=args.allow_version_change)
    serve.write_snapshot(merged, Path(args.out))
    print(
        f"merged {full.header.record_count} + {diff.header.record_count} "
        f"-> {merged.header.record_count} records -> {args.out}"
    )
    return 0


def resolve_serve_settings(args) -> tuple[str, str, float]:
    """Serve configuration with precedence: flags > environment > defaults."""
    bind = args.bind or os.environ.get(ENV_BIND) or DEFAULT_BIND
    model_path = args.model or os.environ.get(ENV_MODEL)
    if not model_path:
        raise KprelError(f"--model or {ENV_MODEL} is required")
    if args.threshold is not None:
        threshold = args.threshold
    elif getattr(args, "calibration", None):
        threshold = _resolve_threshold(args)
    elif os.environ.get(ENV_THRESHOLD):
        threshold = float(os.environ[ENV_THRESHOLD])
    else:
        threshold = 0.5
    return bind, model_path, threshold


def _cmd_serve(args) -> int:
    bind, model_path, threshold = resolve_serve_settings(args)
    host, _, port = bind.partition(":")
    service = serve.RelevanceService(
        Path(model_path), threshold, host=host or "127.0.0.1", port=int(port or 0)
    )
    if hasattr(signal, "SIGHUP"):
        signal.signal(signal.SIGHUP, lambda *_: service.reload())
    actual_host, actual_port = service.address
    print(
        f"serving {service.model_version} at http://{actual_host}:{actual_port} "
        f"(threshold {threshold})",
        flush=True,
    )
    try:
        service.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        service.stop()
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kprel", description="Advertiser keyphrase relevance pipeline."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate and normalize a raw label source")
    p.add_argument("--kind", required=True, choices=["clicks", "human", "search", "judgments"])
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--keep-all", action="store_true",
                   help="for clicks: skip the impression/click/CTR positivity filter")
    p.set_defaults(func=_cmd_ingest)

    p = sub.add_parser("mix", help="materialize a training dataset under a mixing strategy")
    p.add_argument("--strategy", required=True)
    p.add_argument("--clicks", help="filtered click positives (JSONL or CSV)")
    p.add_argument("--search", help="search relevance records (JSONL)")
    p.add_argument("--judgments", help="judge verdicts (JSONL)")
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_mix)

    p = sub.add_parser("judge", help="collect judge verdicts for item/keyphrase pairs")
    p.add_argument("--pairs", help="pairs to judge (recommendations JSONL)")
    p.add_argument("--output", required=True)
    p.add_argument("--backend-url", help="HTTP judge backend endpoint")
    p.add_argument("--auth-token-env", help="environment variable holding the bearer token")
    p.add_argument("--batch-size", type=int, default=100)
    p.add_argument("--timeout", type=float, default=30.0)
    p.add_argument("--concurrency", type=int, default=1)
    p.add_argument("--cache", help="append-only JSONL verdict cache")
    p.add_argument("--judge-kind", default="general", choices=["general", "finetuned"])
    p.add_argument("--simulated", action="store_true",
                   help="use the simulated judge over a simulator config")
    p.add_argument("--config", help="simulator config.json (with --simulated)")
    p.add_argument("--epsilon", type=float, default=0.05)
    p.add_argument("--seed", type=int, help="override the config seed")
    p.set_defaults(func=_cmd_judge)

    p = sub.add_parser("train", help="train a relevance model on a labeled dataset")
    p.add_argument("--dataset", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--strategy", default="custom", help="tag recorded as trained_on")
    p.add_argument("--learning-rate", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--l2", type=float, default=1e-4)
    p.add_argument("--positive-class-weight", type=float, default=1.0)
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("calibrate", help="pick the click-retention threshold for a model")
    p.add_argument("--model", required=True)
    p.add_argument("--clicks", required=True)
    p.add_argument("--target", type=float, default=0.95)
    p.add_argument("--weighting", default="by_clicks", choices=list(evalkit.WEIGHTING_MODES))
    p.add_argument("--output", required=True)
    p.set_defaults(func=_cmd_calibrate)

    p = sub.add_parser("eval", help="evaluate one model's business metrics")
    p.add_argument("--model", required=True)
    p.add_argument("--clicks", required=True)
    p.add_argument("--recommendations")
    p.add_argument("--search-verdicts")
    p.add_argument("--target", type=float, default=0.95)
    p.add_argument("--weighting", default="by_clicks", choices=list(evalkit.WEIGHTING_MODES))
    p.add_argument("--output")
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("compare", help="compare calibrated models against a baseline")
    p.add_argument("--model", action="append", required=True, metavar="NAME=PATH")
    p.add_argument("--baseline", required=True)
    p.add_argument("--clicks", required=True)
    p.add_argument("--recommendations", required=True)
    p.add_argument("--search-verdicts", required=True)
    p.add_argument("--target", type=float, default=0.95)
    p.add_argument("--weighting", default="by_clicks", choices=list(evalkit.WEIGHTING_MODES))
    p.add_argument("--json-out")
    p.add_argument("--csv-out")
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("simulate", help="generate a synthetic marketplace and its files")
    p.add_argument("--config", help="simulator config JSON; defaults used when omitted")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("batch-infer", help="score a pair file into a snapshot")
    p.add_argument("--model", required=True)
    p.add_argument("--threshold", type=float)
    p.add_argument("--calibration", help="calibration JSON produced by `calibrate`")
    p.add_argument("--pairs", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--partitions", type=int, default=1)
    p.set_defaults(func=_cmd_batch_infer)

    p = sub.add_parser("diff-merge", help="merge a diff snapshot into a full snapshot")
    p.add_argument("--full", required=True)
    p.add_argument("--diff", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--allow-version-change", action="store_true")
    p.set_defaults(func=_cmd_diff_merge)

    p = sub.add_parser("serve", help="run the near-real-time scoring service")
    p.add_argument("--bind", help=f"HOST:PORT (default {DEFAULT_BIND}; env {ENV_BIND})")
    p.add_argument("--model", help=f"model file (env {ENV_MODEL})")
    p.add_argument("--threshold", type=float, help=f"decision threshold (env {ENV_THRESHOLD})")
    p.add_argument("--calibration", help="calibration JSON produced by `calibrate`")
    p.set_defaults(func=_cmd_serve)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except KprelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
