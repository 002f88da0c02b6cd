"""Operator surface: subcommands wiring the pipeline modules into
reproducible runs driven by a single config file.

Exit codes: 0 success, 1 error, 2 usage, 3 partial success (bronze quota
unmet; partial output was still written).
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
from pathlib import Path

from . import augment, config as cfg, corpus, evaluator, gateway as gw, plots, report, taxonomy, textproc, trainer

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_PARTIAL = 3

DEFAULT_BACKENDS = ["toy:alpha=0.5", "toy:alpha=1.0", "toy:alpha=2.0"]


def _output_dir(config: dict) -> Path:
    value = config.get("output_dir")
    if not value:
        raise cfg.ConfigError("config is missing output_dir")
    path = cfg.resolve_path(config, value, must_exist=False)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load_schema(config: dict) -> tuple[taxonomy.GuidelineSchema, Path | None]:
    value = config.get("guideline")
    if value is None:
        return taxonomy.load_default_guideline(), None
    path = cfg.resolve_path(config, value)
    return taxonomy.load_guideline(path.read_text("utf-8")), path


def _build_gateway(config: dict) -> gw.Gateway:
    sect = cfg.section(config, "gateway")
    mode = sect.get("mode", "replay")
    transcript_dir = cfg.resolve_path(config, sect.get("transcript_dir"), must_exist=False)
    gateway_config = gw.GatewayConfig(
        mode=mode,
        transcript_dir=transcript_dir,
        retry_limit=int(sect.get("retry_limit", 2)),
        backoff=tuple(float(x) for x in sect.get("backoff", (0.5, 1.0))),
        max_in_flight=int(sect.get("max_in_flight", 4)),
        request_timeout=float(sect.get("request_timeout", 60.0)),
    )
    provider = None
    if mode in ("live", "record"):
        provider = gw.HttpChatProvider.from_env(timeout=gateway_config.request_timeout)
    return gw.Gateway(gateway_config, provider)


def _pipeline_config(sect: dict) -> augment.PipelineConfig:
    if "model_id" not in sect:
        raise cfg.ConfigError("section is missing model_id")
    return augment.PipelineConfig(
        model_id=sect["model_id"],
        annotate_temperature=float(sect.get("annotate_temperature", 0.0)),
        verify_temperature=float(sect.get("verify_temperature", 0.0)),
        generate_temperature=float(sect.get("generate_temperature", 0.7)),
        max_output_tokens=int(sect.get("max_output_tokens", 1024)),
        max_note_words=int(sect.get("max_note_words", 800)),
        prompt_suffix=sect.get("prompt_suffix", ""),
        name_blocklist=tuple(sect.get("name_blocklist", ())),
        max_workers=sect.get("max_workers"),
    )


def _write_report_files(out: Path, stem: str, run_report: augment.RunReport) -> None:
    with open(out / f"{stem}_report.json", "w", encoding="utf-8") as fh:
        json.dump(run_report.as_dict(), fh, indent=2, sort_keys=True, ensure_ascii=False)
        fh.write("\n")
    (out / f"{stem}_report.txt").write_text(run_report.render_text(), encoding="utf-8")


def _write_stats_files(out: Path, stem: str, items) -> corpus.DatasetStats:
    dataset_stats = corpus.stats(items)
    (out / f"{stem}_stats.txt").write_text(
        corpus.render_stats_table(dataset_stats, labels=report.REPORT_LABELS), encoding="utf-8"
    )
    (out / f"{stem}_stats.tsv").write_text(
        corpus.render_stats_table(dataset_stats, labels=report.REPORT_LABELS, sep="\t"), encoding="utf-8"
    )
    return dataset_stats


def cmd_annotate(config: dict) -> int:
    out = _output_dir(config)
    sect = cfg.section(config, "annotate")
    notes_path = cfg.resolve_path(config, cfg.require(config, "annotate", "notes"))
    schema, guideline_path = _load_schema(config)
    gateway = _build_gateway(config)
    pipeline = _pipeline_config(sect)
    notes = augment.read_notes_jsonl(notes_path)
    with cfg.OutputLock(out):
        sentences, run_report = augment.run_silver(notes, schema, gateway, pipeline)
        corpus.write_labeled_jsonl(out / "silver.jsonl", sentences)
        _write_report_files(out, "silver", run_report)
        _write_stats_files(out, "silver", sentences)
        inputs = [notes_path] + ([guideline_path] if guideline_path else [])
        cfg.write_manifest(out, "annotate", config, inputs, extra={"sentences": len(sentences)})
    print(f"annotate: {len(sentences)} silver sentences from {len(notes)} notes -> {out}")
    return EXIT_OK


def cmd_generate(config: dict) -> int:
    out = _output_dir(config)
    sect = cfg.section(config, "generate")
    quota_map = cfg.require(config, "generate", "quota")
    quota = augment.QuotaPlan(
        targets={int(k): int(v) for k, v in quota_map.items()},
        max_requests=int(sect.get("max_requests", 100)),
    )
    schema, guideline_path = _load_schema(config)
    gateway = _build_gateway(config)
    pipeline = _pipeline_config(sect)
    with cfg.OutputLock(out):
        sentences, run_report = augment.run_bronze(schema, gateway, quota, pipeline)
        corpus.write_labeled_jsonl(out / "bronze.jsonl", sentences)
        _write_report_files(out, "bronze", run_report)
        _write_stats_files(out, "bronze", sentences)
        inputs = [guideline_path] if guideline_path else []
        cfg.write_manifest(out, "generate", config, inputs, extra={"sentences": len(sentences)})
    status = "quota unmet, partial output" if run_report.quota_unmet else "quotas met"
    print(f"generate: {len(sentences)} bronze sentences ({status}) -> {out}")
    return EXIT_PARTIAL if run_report.quota_unmet else EXIT_OK


def cmd_build(config: dict) -> int:
    out = _output_dir(config)
    sect = cfg.section(config, "build")
    gold_path = cfg.resolve_path(config, cfg.require(config, "build", "gold"))
    ratios = tuple(float(r) for r in sect.get("ratios", (0.8, 0.1, 0.1)))
    seed = int(sect.get("seed", config.get("seed", 0)))
    stop_words = None
    if sect.get("stopwords"):
        stop_words = textproc.load_stop_words(cfg.resolve_path(config, sect["stopwords"]))

    inputs = [gold_path]
    with cfg.OutputLock(out):
        gold = corpus.deduplicate(corpus.read_labeled_jsonl(gold_path))
        gold_split = corpus.split(gold, ratios=ratios, seed=seed)
        corpus.write_labeled_jsonl(out / "gold_train.jsonl", gold_split.train)
        corpus.write_labeled_jsonl(out / "gold_validation.jsonl", gold_split.validation)
        corpus.write_labeled_jsonl(out / "gold_test.jsonl", gold_split.test)

        stats_by_tier = {"gold": _write_stats_files(out, "gold", gold)}
        for tier in ("silver", "bronze"):
            if sect.get(tier):
                path = cfg.resolve_path(config, sect[tier])
                inputs.append(path)
                items = corpus.deduplicate(corpus.read_labeled_jsonl(path))
                corpus.write_labeled_jsonl(out / f"{tier}.jsonl", items)
                stats_by_tier[tier] = _write_stats_files(out, tier, items)

        if sect.get("negatives_pool"):
            pool_path = cfg.resolve_path(config, sect["negatives_pool"])
            inputs.append(pool_path)
            pool = augment.read_notes_jsonl(pool_path)
            negatives = corpus.sample_negatives(
                pool,
                gold,
                ratio=float(sect.get("negative_ratio", 5.0)),
                seed=seed,
                stop_words=stop_words,
                min_content_tokens=int(sect.get("min_content_tokens", 5)),
            )
            negative_split = corpus.split(negatives, ratios=ratios, seed=seed)
            corpus.write_labeled_jsonl(out / "negatives.jsonl", negatives)
            corpus.write_labeled_jsonl(out / "negatives_train.jsonl", negative_split.train)
            corpus.write_labeled_jsonl(out / "negatives_validation.jsonl", negative_split.validation)
            corpus.write_labeled_jsonl(out / "negatives_test.jsonl", negative_split.test)
            stats_by_tier["negative"] = _write_stats_files(out, "negatives", negatives)

        plots.save_distribution_figure(stats_by_tier, out / "distribution.png")
        extra = {}
        if sect.get("cohens_kappa") is not None:
            # Supplied gold-data inter-annotator agreement, echoed verbatim.
            extra["cohens_kappa"] = float(sect["cohens_kappa"])
            with open(out / "gold_stats.txt", "a", encoding="utf-8") as fh:
                fh.write(f"Cohen's kappa (supplied)  {extra['cohens_kappa']}\n")
        cfg.write_manifest(out, "build", config, inputs, seeds={"split": seed}, extra=extra or None)
    print(f"build: gold {len(gold)} -> {len(gold_split.train)}/{len(gold_split.validation)}/{len(gold_split.test)} -> {out}")
    return EXIT_OK


def _load_built(out: Path, name: str, required: bool = True):
    path = out / name
    if not path.exists():
        if required:
            raise cfg.ConfigError(f"missing built dataset {path}; run the build command first")
        return None
    return corpus.read_labeled_jsonl(path)


def _binary_view(gold_split: corpus.DatasetSplit, negatives: dict) -> corpus.DatasetSplit:
    return corpus.DatasetSplit(
        train=tuple(corpus.to_binary(gold_split.train)) + tuple(negatives["train"]),
        validation=tuple(corpus.to_binary(gold_split.validation)) + tuple(negatives["validation"]),
        test=tuple(corpus.to_binary(gold_split.test)) + tuple(negatives["test"]),
        seed=gold_split.seed,
    )


def cmd_train(config: dict) -> int:
    out = _output_dir(config)
    sect = cfg.section(config, "train")
    data_dir = cfg.resolve_path(config, sect.get("data_dir"), must_exist=True) if sect.get("data_dir") else out
    tasks = list(sect.get("tasks", ["binary", "multiclass"]))
    combinations = list(sect.get("combinations", list(corpus.COMBINATIONS)))
    backends = tuple(sect.get("backends", DEFAULT_BACKENDS))
    preset_name = sect.get("preset", "body")
    if preset_name not in trainer.PRESETS:
        raise cfg.ConfigError(f"unknown preset {preset_name!r} (available: {sorted(trainer.PRESETS)})")
    train_config = trainer.PRESETS[preset_name]
    overrides = {}
    if "epochs" in sect:
        overrides["epochs"] = int(sect["epochs"])
    if "seed" in sect or "seed" in config:
        overrides["seed"] = int(sect.get("seed", config.get("seed", 0)))
    if overrides:
        train_config = dataclasses.replace(train_config, **overrides)

    gold_split = corpus.DatasetSplit(
        train=tuple(_load_built(data_dir, "gold_train.jsonl")),
        validation=tuple(_load_built(data_dir, "gold_validation.jsonl")),
        test=tuple(_load_built(data_dir, "gold_test.jsonl")),
        seed=int(sect.get("seed", config.get("seed", 0))),
    )
    silver = _load_built(data_dir, "silver.jsonl", required=False)
    bronze = _load_built(data_dir, "bronze.jsonl", required=False)
    negatives = None
    if "binary" in tasks:
        negatives = {
            part: _load_built(data_dir, f"negatives_{part}.jsonl") for part in ("train", "validation", "test")
        }

    eval_dir = out / "eval"
    checkpoint_dir = out / "checkpoints"
    cells = []
    with cfg.OutputLock(out):
        eval_dir.mkdir(parents=True, exist_ok=True)
        for task in tasks:
            if task == "binary":
                split_view = _binary_view(gold_split, negatives)
                task_bronze = corpus.to_binary(bronze) if bronze else None
                task_silver = corpus.to_binary(silver) if silver else None
            else:
                split_view, task_bronze, task_silver = gold_split, bronze, silver
            for combination in combinations:
                plan = trainer.ExperimentPlan(
                    task=task, combination=combination, backends=backends, preset=preset_name
                )
                stages = corpus.combine(split_view, combination, bronze=task_bronze, silver=task_silver)
                ensemble = trainer.train_ensemble(plan, stages, split_view.validation, train_config)
                test_texts = [item.text for item in split_view.test]
                golds = [item.class_id for item in split_view.test]
                preds = trainer.ensemble_predict(ensemble, test_texts)
                cell = plan.cell_name()
                for index, member in enumerate(ensemble.members):
                    slug = member.backend.backend_id.replace(":", "_").replace("=", "-").replace(",", "_")
                    trainer.save_member(member, checkpoint_dir / cell / f"member{index}_{slug}")
                payload = {
                    "task": task,
                    "combination": combination,
                    "stage_log": ensemble.stage_log,
                    "golds": golds,
                    "preds": preds,
                    "members": [
                        {
                            "backend_id": member.backend.backend_id,
                            "best_epoch": member.best_epoch,
                            "val_accuracy": member.val_accuracy,
                            "stage_log": member.stage_log,
                        }
                        for member in ensemble.members
                    ],
                }
                with open(eval_dir / f"{cell}.json", "w", encoding="utf-8") as fh:
                    json.dump(payload, fh, sort_keys=True, ensure_ascii=False)
                    fh.write("\n")
                cells.append(cell)
        cfg.write_manifest(
            out,
            "train",
            config,
            [data_dir / "gold_train.jsonl"],
            seeds={"train": train_config.seed},
            extra={"cells": cells},
        )
    print(f"train: {len(cells)} ensemble cells -> {eval_dir}")
    return EXIT_OK


def cmd_report(config: dict) -> int:
    out = _output_dir(config)
    sect = cfg.section(config, "report")
    alpha = float(sect.get("alpha", 0.05))
    written = []
    with cfg.OutputLock(out):
        if sect.get("values"):
            values_path = cfg.resolve_path(config, sect["values"])
            by_task = report.cells_from_values_file(values_path)
            inputs = [values_path]
        else:
            eval_dir = cfg.resolve_path(config, sect.get("eval_dir"), must_exist=False) if sect.get("eval_dir") else out / "eval"
            if not eval_dir.exists():
                raise cfg.ConfigError(f"no eval directory at {eval_dir}; run the train command first")
            by_task = {}
            payloads = {}
            for path in sorted(eval_dir.glob("*.json")):
                with open(path, encoding="utf-8") as fh:
                    payload = json.load(fh)
                payloads.setdefault(payload["task"], {})[payload["combination"]] = payload
            for task, combos in payloads.items():
                if "G" not in combos:
                    raise report.MissingBaseline(f"task {task!r} has no gold-only cell")
                baseline = combos["G"]
                cells = {}
                for combination, payload in combos.items():
                    significant = None
                    if combination != "G":
                        result = evaluator.significance_test(
                            baseline["preds"], payload["preds"], payload["golds"], alpha=alpha
                        )
                        significant = result.significant
                    cells[combination] = report.cell_from_predictions(
                        payload["preds"], payload["golds"], task, significant=significant
                    )
                by_task[task] = cells
            inputs = sorted(eval_dir.glob("*.json"))
        for task, cells in sorted(by_task.items()):
            (out / f"report_{task}.txt").write_text(report.render_report(cells, task), encoding="utf-8")
            (out / f"report_{task}.tsv").write_text(report.render_report(cells, task, sep="\t"), encoding="utf-8")
            plots.save_report_figure(cells, task, out / f"report_{task}.png")
            written.extend([f"report_{task}.txt", f"report_{task}.tsv", f"report_{task}.png"])
        cfg.write_manifest(out, "report", config, list(inputs), extra={"files": written})
    print(f"report: wrote {', '.join(written)} -> {out}")
    return EXIT_OK


def cmd_review(config: dict, ingest: str | None = None) -> int:
    out = _output_dir(config)
    sect = cfg.section(config, "review")
    ingest = ingest or sect.get("ingest")
    with cfg.OutputLock(out):
        if ingest:
            sheet_path = cfg.resolve_path(config, ingest)
            sheet = evaluator.read_review_sheet(sheet_path)
            summary = evaluator.review_accuracy(sheet)
            payload = {"accuracy": summary.accuracy, "histogram": dict(summary.histogram), "n": summary.n}
            with open(out / "review_summary.json", "w", encoding="utf-8") as fh:
                json.dump(payload, fh, indent=2, sort_keys=True)
                fh.write("\n")
            lines = [f"reviewed: {summary.n}", f"accuracy: {summary.accuracy:.2f}", "errors:"]
            lines += [f"  {kind}: {count}" for kind, count in sorted(summary.histogram.items())] or ["  (none)"]
            (out / "review_summary.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")
            cfg.write_manifest(out, "review", config, [sheet_path], extra={"mode": "ingest"})
            print(f"review: accuracy {summary.accuracy:.2f} over {summary.n} items -> {out}")
        else:
            dataset_path = cfg.resolve_path(config, cfg.require(config, "review", "dataset"))
            dataset = corpus.read_labeled_jsonl(dataset_path)
            n = int(sect.get("n", 100))
            seed = int(sect.get("seed", config.get("seed", 0)))
            sheet = evaluator.sample_for_review(dataset, n=n, seed=seed)
            evaluator.write_review_sheet(sheet, out / "review_sheet.jsonl")
            cfg.write_manifest(
                out, "review", config, [dataset_path], seeds={"review": seed}, extra={"mode": "sample", "n": n}
            )
            print(f"review: sampled {n} of {len(dataset)} items -> {out / 'review_sheet.jsonl'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adsynth", description=__doc__)
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("annotate", "label supplied notes (silver pipeline)"),
        ("generate", "generate synthetic annotated notes (bronze pipeline)"),
        ("build", "normalize, deduplicate, split, and sample negatives"),
        ("train", "train the ensemble over the experiment matrix"),
        ("report", "render comparison tables and figures"),
        ("review", "sample a human review sheet or ingest a completed one"),
    ):
        command = sub.add_parser(name, help=help_text)
        command.add_argument("--config", required=True, help="path to the run config file")
        command.add_argument("--output-dir", help="override the configured output directory")
        command.add_argument("--seed", type=int, help="override the configured seed")
        if name == "review":
            command.add_argument("--ingest", help="completed review sheet to summarize")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
    try:
        config = cfg.load_config(args.config)
        if args.output_dir:
            config["output_dir"] = str(Path(args.output_dir).resolve())
        if args.seed is not None:
            config["seed"] = args.seed
        if args.command == "annotate":
            return cmd_annotate(config)
        if args.command == "generate":
            return cmd_generate(config)
        if args.command == "build":
            return cmd_build(config)
        if args.command == "train":
            return cmd_train(config)
        if args.command == "report":
            return cmd_report(config)
        if args.command == "review":
            return cmd_review(config, ingest=getattr(args, "ingest", None))
        raise cfg.ConfigError(f"unknown command {args.command!r}")
    except Exception as exc:  # surfaced as a clean message; exit code signals failure
        print(f"adsynth {args.command}: error: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
