"""
lesion-sense command line.

    lesion-sense ontology validate data/demo_lexicon.tsv
    lesion-sense mine --corpus corpus.jsonl --lexicon lexicon.tsv
    lesion-sense synth --config configs/smoke.cfg --out runs/synth
    lesion-sense dataset split --corpus corpus.jsonl --lexicon lexicon.tsv --out runs/split
    lesion-sense train --config configs/default.cfg --corpus train.jsonl --patches patches/
    lesion-sense eval --checkpoint runs/default/model.ckpt --test-corpus test.jsonl
    lesion-sense predict --checkpoint runs/default/model.ckpt --corpus test.jsonl
    lesion-sense run --config configs/smoke.cfg
    lesion-sense ablate --config configs/ablation.cfg

Exit codes: 0 success, 1 usage or configuration error, 2 data error.
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from annotator.checkpoint import load_checkpoint, save_checkpoint
from annotator.evaluation import category_report, evaluate_scores, format_topk, topk_report
from annotator.model import predict_scores
from annotator.train import TrainingSet, train, write_epoch_csv, write_loss_csv
from cli.ablation import AblationRunner, parse_seeds, parse_variants
from cli.config import RunConfig, load_run_config
from cli.flow import (
    VERSION,
    bbox_array,
    evaluation_targets,
    load_patches,
    network_for,
    run_flow,
    select_label_subset,
    write_eval_outputs,
    write_manifest,
)
from cli.logging_config import setup_logging
from mining.dataset import (
    LabelSubset,
    build_corpus,
    filter_labels,
    label_matrix,
    patient_split,
    read_corpus,
    write_corpus,
    write_mined,
)
from mining.ontology import load_ontology
from mining.synth import synth_generate, write_synth_corpus
from utils.errors import ConfigError, DataError, LesionSenseError, error_payload
from utils.metrics import error_counter, set_app_info, write_metrics
from utils.storage import write_json, write_jsonl

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2

DEFAULT_TEST_FRACTION = 0.2

# command-line flag -> paths.<key>
PATH_FLAGS = {
    "lexicon": "lexicon",
    "corpus": "corpus",
    "test_corpus": "test_corpus",
    "patches": "patches",
    "volumes": "volumes",
    "checkpoint": "checkpoint",
}


class UsageArgumentParser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; here 2 means a data error."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ----------------------------------------------------------------------------
# Helpers


def _load_config(args: argparse.Namespace) -> RunConfig:
    overrides = list(args.set or [])
    for flag, key in PATH_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            overrides.append(f"paths.{key}={value}")
    if args.out is not None:
        overrides.append(f"paths.output_dir={args.out}")
    cfg = load_run_config(args.config, overrides, threads=args.threads, seed=args.seed)
    setup_logging(args.log_level or os.environ.get("LOG_LEVEL") or cfg.log_level)
    return cfg


def _require_path(value: Optional[Path], key: str, must_exist: bool = True) -> Path:
    if value is None:
        flag = "--" + key.replace("_", "-")
        raise ConfigError(
            f"paths.{key} is not set; pass {flag} or set it in the config", code="missing_path"
        )
    if must_exist and not Path(value).exists():
        raise ConfigError(f"paths.{key} does not exist: {value}", code="missing_path")
    return Path(value)


def _output_dir(cfg: RunConfig) -> Path:
    out_dir = Path(cfg.paths.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    return out_dir


def _path_inputs(cfg: RunConfig, *keys: str) -> Dict[str, Optional[Path]]:
    return {key: getattr(cfg.paths, key) for key in keys}


def _print_summary(rows) -> None:
    for name, mean, std, n_labels in rows:
        print(f"{name}: mean_auc={mean:.4f} std_auc={std:.4f} n_labels={n_labels}")


# ----------------------------------------------------------------------------
# Commands


def cmd_ontology_validate(args: argparse.Namespace, cfg: RunConfig) -> int:
    path = Path(args.lexicon_path) if args.lexicon_path else _require_path(cfg.paths.lexicon, "lexicon")
    o = load_ontology(path)
    print(f"K={o.size}, 0 errors")
    for category, count in o.category_counts().items():
        print(f"{category}: {count}")
    print(f"depth: {o.depth()}")
    if args.out is not None:
        write_manifest(_output_dir(cfg), "ontology validate", cfg, {"lexicon": path}, [])
    return EXIT_OK


def cmd_mine(args: argparse.Namespace, cfg: RunConfig) -> int:
    o = load_ontology(_require_path(cfg.paths.lexicon, "lexicon"))
    records = read_corpus(_require_path(cfg.paths.corpus, "corpus"))
    corpus = build_corpus(records, o, threads=cfg.threads)
    if args.out is None:
        write_mined(sys.stdout, corpus, o)
        return EXIT_OK

    out_dir = _output_dir(cfg)
    write_mined(out_dir / "mined.jsonl", corpus, o)
    write_manifest(out_dir, "mine", cfg, _path_inputs(cfg, "lexicon", "corpus"), ["mined.jsonl"])
    logger.info(f"Mined {len(corpus)} records into {out_dir / 'mined.jsonl'}")
    return EXIT_OK


def cmd_synth(args: argparse.Namespace, cfg: RunConfig) -> int:
    out_dir = _output_dir(cfg)
    corpus = synth_generate(cfg.synth)
    paths = write_synth_corpus(out_dir, corpus)
    outputs = [path.name for path in paths.values()]
    write_manifest(out_dir, "synth", cfg, {}, outputs)
    print(json.dumps(corpus.stats.to_json(), sort_keys=True))
    return EXIT_OK


def cmd_dataset_split(args: argparse.Namespace, cfg: RunConfig) -> int:
    o = load_ontology(_require_path(cfg.paths.lexicon, "lexicon"))
    records = read_corpus(_require_path(cfg.paths.corpus, "corpus"))
    corpus = build_corpus(records, o, threads=cfg.threads)
    fraction = cfg.split.test_fraction or DEFAULT_TEST_FRACTION
    train_part, test_part = patient_split(corpus, fraction, cfg.split.seed)

    out_dir = _output_dir(cfg)
    write_corpus(out_dir / "train.jsonl", (record for record, _ in train_part))
    write_corpus(out_dir / "test.jsonl", (record for record, _ in test_part))
    write_json(
        out_dir / "split.json",
        {
            "train": [record.lesion_id for record, _ in train_part],
            "test": [record.lesion_id for record, _ in test_part],
        },
    )
    outputs = ["train.jsonl", "test.jsonl", "split.json"]
    write_manifest(out_dir, "dataset split", cfg, _path_inputs(cfg, "lexicon", "corpus"), outputs)
    print(f"train={len(train_part)} test={len(test_part)}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace, cfg: RunConfig) -> int:
    o = load_ontology(_require_path(cfg.paths.lexicon, "lexicon"))
    records = read_corpus(_require_path(cfg.paths.corpus, "corpus"))
    corpus = build_corpus(records, o, threads=cfg.threads)
    train_labels = label_matrix(corpus, o.size)

    test_targets = None
    if cfg.paths.test_corpus is not None:
        test_records = read_corpus(_require_path(cfg.paths.test_corpus, "test_corpus"))
        test_corpus = build_corpus(test_records, o, threads=cfg.threads)
        test_targets = evaluation_targets(test_corpus, o, cfg.eval.use_truth_labels)
    subset = select_label_subset(train_labels, test_targets, o, cfg.eval)

    training_set = TrainingSet(
        patches=load_patches(records, cfg.paths.patches, cfg.paths.volumes),
        bboxes=bbox_array(records),
        labels=subset.project(train_labels),
    )
    result = train(training_set, network_for(cfg.network, len(subset)), cfg.loss, cfg.schedule)

    out_dir = _output_dir(cfg)
    save_checkpoint(out_dir / "model.ckpt", result.params, subset.ids)
    write_loss_csv(out_dir / "loss.csv", result)
    write_epoch_csv(out_dir / "epochs.csv", result)
    write_json(
        out_dir / "labels.json",
        {"label_ids": list(subset.ids), "label_names": list(subset.names)},
    )
    write_metrics(out_dir / "metrics.prom")
    outputs = ["model.ckpt", "model.ckpt.json", "model.ckpt.cfg", "loss.csv", "epochs.csv", "labels.json"]
    inputs = _path_inputs(cfg, "lexicon", "corpus", "test_corpus", "patches", "volumes")
    write_manifest(out_dir, "train", cfg, inputs, outputs)
    print(f"final_loss={result.epochs[-1].mean_loss:.6f} labels={len(subset)}")
    return EXIT_OK


def _checkpoint_subset(label_ids: Sequence[int], o) -> LabelSubset:
    bad = [i for i in label_ids if not 0 <= i < o.size]
    if bad:
        raise DataError(
            f"Checkpoint label ids {bad} are outside the lexicon (K={o.size})",
            code="label_mismatch",
        )
    return LabelSubset.from_ids(label_ids, o)


def _eval_corpus_path(cfg: RunConfig) -> Path:
    if cfg.paths.test_corpus is not None:
        return _require_path(cfg.paths.test_corpus, "test_corpus")
    return _require_path(cfg.paths.corpus, "corpus")


def cmd_eval(args: argparse.Namespace, cfg: RunConfig) -> int:
    params, _, label_ids = load_checkpoint(_require_path(cfg.paths.checkpoint, "checkpoint", False))
    o = load_ontology(_require_path(cfg.paths.lexicon, "lexicon"))
    records = read_corpus(_eval_corpus_path(cfg))
    corpus = build_corpus(records, o, threads=cfg.threads)
    targets = evaluation_targets(corpus, o, cfg.eval.use_truth_labels)

    model_subset = _checkpoint_subset(label_ids, o)
    subset = model_subset.intersect(filter_labels(targets, o, cfg.eval.min_count), o)
    patches = load_patches(records, cfg.paths.patches, cfg.paths.volumes)
    all_scores = predict_scores(params, patches, bbox_array(records), batch_size=cfg.eval.batch_size)
    scores = all_scores[:, [model_subset.position(i) for i in subset.ids]]

    per_label, skipped = evaluate_scores(scores, subset.project(targets), subset, threads=cfg.threads)
    report = category_report(per_label, o)
    report.skipped = skipped

    out_dir = _output_dir(cfg)
    outputs = write_eval_outputs(out_dir, report, scores, targets, subset, cfg.eval)
    inputs = _path_inputs(cfg, "checkpoint", "lexicon", "corpus", "test_corpus", "patches", "volumes")
    write_manifest(out_dir, "eval", cfg, inputs, outputs)
    _print_summary(report.rows())
    return EXIT_OK


def cmd_predict(args: argparse.Namespace, cfg: RunConfig) -> int:
    params, _, label_ids = load_checkpoint(_require_path(cfg.paths.checkpoint, "checkpoint", False))
    o = load_ontology(_require_path(cfg.paths.lexicon, "lexicon"))
    records = read_corpus(_eval_corpus_path(cfg))
    if args.lesion:
        wanted = set(args.lesion)
        unknown = sorted(wanted - {record.lesion_id for record in records})
        if unknown:
            raise DataError(f"Unknown lesion ids: {unknown}", code="unknown_lesion")
        records = [record for record in records if record.lesion_id in wanted]
    corpus = build_corpus(records, o, threads=cfg.threads)
    targets = evaluation_targets(corpus, o, cfg.eval.use_truth_labels)

    subset = _checkpoint_subset(label_ids, o)
    k = min(args.k or cfg.eval.k, len(subset))
    patches = load_patches(records, cfg.paths.patches, cfg.paths.volumes)
    scores = predict_scores(params, patches, bbox_array(records), batch_size=cfg.eval.batch_size)
    projected = subset.project(targets)

    rows: List[Dict] = []
    for row, record in enumerate(records):
        truth = [int(i) for i in np.flatnonzero(projected[row])]
        report = topk_report(scores[row], truth, k)
        print(f"{record.lesion_id}: {record.sentence.text}")
        for line in format_topk(report, scores[row], subset.names):
            print(f"  {line}")
        rows.append(
            {
                "lesion_id": record.lesion_id,
                "topk": [
                    {
                        "label_id": subset.ids[i],
                        "label_name": subset.names[i],
                        "score": round(float(scores[row, i]), 6),
                        "tag": "TP" if i in report.tp else "FP",
                    }
                    for i in report.ranked
                ],
                "fn": [subset.names[i] for i in sorted(report.fn)],
            }
        )

    if args.out is not None:
        out_dir = _output_dir(cfg)
        write_jsonl(out_dir / "predictions.jsonl", rows)
        inputs = _path_inputs(cfg, "checkpoint", "lexicon", "corpus", "test_corpus", "patches", "volumes")
        write_manifest(out_dir, "predict", cfg, inputs, ["predictions.jsonl"])
    return EXIT_OK


def cmd_run(args: argparse.Namespace, cfg: RunConfig) -> int:
    response = run_flow(cfg, write_patches=args.write_patches)
    if "error" in response:
        error_counter.labels(error_type=response["error"], component="run").inc()
        print(json.dumps(response, sort_keys=True), file=sys.stderr)
        return EXIT_DATA
    print(json.dumps(response["summary"], sort_keys=True))
    return EXIT_OK


def cmd_ablate(args: argparse.Namespace, cfg: RunConfig) -> int:
    runner = AblationRunner(cfg, parse_variants(args.variants), parse_seeds(args.seeds))
    summary = runner.run()
    out_dir = _output_dir(cfg)
    outputs = runner.write(out_dir)
    write_metrics(out_dir / "metrics.prom")
    write_manifest(
        out_dir,
        "ablate",
        cfg,
        {},
        outputs,
        extra={"variants": [v.name for v in runner.variants], "ablation_seeds": runner.seeds},
    )
    for entry in summary:
        overall = entry["overall"]
        print(f"{entry['variant']}: overall={'-' if overall is None else f'{overall:.4f}'}")
    return EXIT_OK


# ----------------------------------------------------------------------------
# Parser


def _common_options() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Key-value config file")
    common.add_argument(
        "--set",
        action="append",
        metavar="KEY=VALUE",
        help="Override one config value (repeatable), e.g. schedule.epochs=3",
    )
    common.add_argument("--threads", type=int, help="Worker threads for mining and evaluation")
    common.add_argument("--seed", type=int, help="Set split, synth, schedule and init seeds")
    common.add_argument(
        "--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR", "CRITICAL"]
    )
    common.add_argument("--out", help="Output directory (paths.output_dir)")
    return common


def _add_path_flags(parser: argparse.ArgumentParser, *names: str) -> None:
    for name in names:
        parser.add_argument(f"--{name.replace('_', '-')}", dest=name, help=f"paths.{name}")


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = UsageArgumentParser(
        prog="lesion-sense",
        description="Lesion label mining, multi-label annotation training and evaluation",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {VERSION}")
    commands = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    ontology = commands.add_parser("ontology", help="Lexicon tools")
    ontology_commands = ontology.add_subparsers(dest="ontology_command", required=True)
    validate = ontology_commands.add_parser(
        "validate", parents=[common], help="Load a lexicon and report K, categories and depth"
    )
    validate.add_argument("lexicon_path", nargs="?", help="Lexicon TSV (default: paths.lexicon)")
    validate.set_defaults(handler=cmd_ontology_validate, command_name="ontology validate")

    mine = commands.add_parser("mine", parents=[common], help="Mine labels from a corpus")
    _add_path_flags(mine, "corpus", "lexicon")
    mine.set_defaults(handler=cmd_mine, command_name="mine")

    synth = commands.add_parser("synth", parents=[common], help="Generate a synthetic corpus")
    synth.set_defaults(handler=cmd_synth, command_name="synth")

    dataset = commands.add_parser("dataset", help="Dataset tools")
    dataset_commands = dataset.add_subparsers(dest="dataset_command", required=True)
    split = dataset_commands.add_parser(
        "split", parents=[common], help="Patient-level train/test split"
    )
    _add_path_flags(split, "corpus", "lexicon")
    split.set_defaults(handler=cmd_dataset_split, command_name="dataset split")

    train_cmd = commands.add_parser("train", parents=[common], help="Train a model")
    _add_path_flags(train_cmd, "corpus", "test_corpus", "lexicon", "patches", "volumes")
    train_cmd.set_defaults(handler=cmd_train, command_name="train")

    eval_cmd = commands.add_parser("eval", parents=[common], help="Evaluate a checkpoint")
    _add_path_flags(eval_cmd, "checkpoint", "corpus", "test_corpus", "lexicon", "patches", "volumes")
    eval_cmd.set_defaults(handler=cmd_eval, command_name="eval")

    predict = commands.add_parser("predict", parents=[common], help="Top-k labels per lesion")
    _add_path_flags(predict, "checkpoint", "corpus", "test_corpus", "lexicon", "patches", "volumes")
    predict.add_argument("--lesion", action="append", help="Lesion id to predict (repeatable)")
    predict.add_argument("-k", type=int, help="Number of labels to list (default: eval.k)")
    predict.set_defaults(handler=cmd_predict, command_name="predict")

    run = commands.add_parser("run", parents=[common], help="Synthetic pipeline end to end")
    run.add_argument(
        "--write-patches", action="store_true", help="Also write the synthetic patch store"
    )
    run.set_defaults(handler=cmd_run, command_name="run")

    ablate = commands.add_parser("ablate", parents=[common], help="Fusion/loss ablation")
    ablate.add_argument(
        "--variants", help="Comma-separated variants, e.g. global_pool+plain,multiscale+weighted"
    )
    ablate.add_argument("--seeds", help="Comma-separated seeds (default 0,1,2,3,4)")
    ablate.set_defaults(handler=cmd_ablate, command_name="ablate")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    setup_logging(args.log_level)
    set_app_info(VERSION, args.command_name)

    try:
        cfg = _load_config(args)
        return args.handler(args, cfg)
    except ConfigError as e:
        error_counter.labels(error_type=e.code, component=args.command_name).inc()
        print(json.dumps(error_payload(e)), file=sys.stderr)
        return EXIT_USAGE
    except LesionSenseError as e:
        error_counter.labels(error_type=e.code, component=args.command_name).inc()
        logger.error(f"{args.command_name} failed: {e.hint}")
        print(json.dumps(error_payload(e)), file=sys.stderr)
        return EXIT_DATA
    except OSError as e:
        error_counter.labels(error_type="io_error", component=args.command_name).inc()
        logger.error(f"{args.command_name} failed: {e}")
        print(json.dumps(error_payload(e)), file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
