"""Command-line entry point: stats, preprocess, train, predict, evaluate.

Every paper-style configuration is a named preset (a JSON data file under
``legalseq/data/presets``); a run is fully determined by preset + config
file + flag overrides, merged in that order. Results go to files; logs go
to stderr. Exit codes: 0 success, 2 user/config error, 3 runtime failure.

The ``LEGALSEQ_CACHE`` environment variable sets the weight-cache
directory for pretrained encoder backends.
"""

from __future__ import annotations

import argparse
import json
import logging
import random
import sys
from dataclasses import asdict
from importlib import resources
from pathlib import Path

from . import corpus as corpus_mod
from . import evaluation, textprep, train as train_mod
from .corpus import LabelSet
from .errors import ConfigError, TrainingAborted, UserError
from .hierarchical import RoleModelConfig, RoleTrainingTask, build_role_model
from .span_ner import NerTrainingTask, SpanNerConfig, build_ner_model
from .train import TrainConfig

log = logging.getLogger("legalseq")


def list_presets() -> list[str]:
    files = resources.files("legalseq.data.presets")
    return sorted(p.name[:-5] for p in files.iterdir() if p.name.endswith(".json"))


def load_preset(name: str) -> dict:
    path = resources.files("legalseq.data.presets").joinpath(f"{name}.json")
    if not path.is_file():
        raise ConfigError(f"unknown preset {name!r}; available: {list_presets()}")
    return json.loads(path.read_text("utf-8"))


def _deep_merge(base: dict, override: dict) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _deep_merge(out[k], v)
        else:
            out[k] = v
    return out


def resolve_run_config(args: argparse.Namespace) -> dict:
    cfg: dict = {}
    if getattr(args, "preset", None):
        cfg = _deep_merge(cfg, load_preset(args.preset))
    if getattr(args, "config", None):
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file not found: {path}")
        try:
            cfg = _deep_merge(cfg, json.loads(path.read_text("utf-8")))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: malformed JSON at position {e.pos}: {e.msg}") from e
    overrides: dict = {}
    if getattr(args, "seed", None) is not None:
        overrides.setdefault("train", {})["seed"] = args.seed
    if getattr(args, "backend", None):
        overrides.setdefault("model", {})["backend"] = args.backend
    for key in ("train_path", "val_path"):
        if getattr(args, key, None):
            overrides.setdefault("paths", {})[key.removesuffix("_path")] = getattr(args, key)
    if getattr(args, "out", None):
        overrides.setdefault("paths", {})["out"] = args.out
    cfg = _deep_merge(cfg, overrides)
    if "task" not in cfg:
        raise ConfigError("run config must declare task: 'rr' or 'ner' (via preset or config)")
    if cfg["task"] not in ("rr", "ner"):
        raise ConfigError(f"unknown task {cfg['task']!r}")
    return cfg


def _dataclass_from(cls, values: dict):
    fields = {f.name for f in cls.__dataclass_fields__.values()}
    unknown = sorted(set(values) - fields)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {unknown}")
    return cls(**values)


def _load_labels(cfg: dict, task: str) -> LabelSet:
    path = cfg.get("labels")
    if path:
        return LabelSet.from_file(path)
    return LabelSet.default_rr() if task == "rr" else LabelSet.default_ner()


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_stats(args: argparse.Namespace) -> int:
    labels = LabelSet.from_file(args.labels) if args.labels else (
        LabelSet.default_rr() if args.task == "rr" else LabelSet.default_ner()
    )
    if args.task == "rr":
        docs = corpus_mod.load_rr_corpus(args.corpus, labels)
        stats = corpus_mod.compute_stats(docs, labels)
    else:
        examples = corpus_mod.load_ner_corpus(args.corpus, labels)
        stats = corpus_mod.compute_ner_stats(examples, labels)
    out = Path(args.out)
    evaluation.emit_report(
        out,
        stats=stats,
        metrics={
            "doc_count": stats.doc_count,
            "sentence_count": stats.sentence_count,
            "short_sentence_count": stats.short_sentence_count,
        },
        figures=not args.no_figures,
    )
    log.info(
        "docs=%d sentences=%d short(<%d tokens)=%d",
        stats.doc_count, stats.sentence_count,
        corpus_mod.SHORT_SENTENCE_TOKENS, stats.short_sentence_count,
    )
    return 0


def cmd_preprocess(args: argparse.Namespace) -> int:
    labels = LabelSet.from_file(args.labels) if args.labels else LabelSet.default_rr()
    docs = corpus_mod.load_rr_corpus(args.corpus, labels)
    if args.steps is not None:
        steps = tuple(s for s in args.steps.split(",") if s)
        cfg = textprep.RegularizeConfig(enabled_steps=steps)
        docs = [textprep.regularize_document(d, cfg) for d in docs]
    if args.augment:
        docs = textprep.augment_swap(docs, seed=args.seed)
    corpus_mod.save_rr_corpus(docs, labels, args.out)
    log.info("wrote %d documents to %s", len(docs), args.out)
    return 0


def _build_task(cfg: dict, labels: LabelSet):
    model_cfg = dict(cfg.get("model", {}))
    if cfg["task"] == "rr":
        model_cfg.setdefault("num_labels", len(labels))
        mc = _dataclass_from(RoleModelConfig, model_cfg)
        model = build_role_model(mc)
        return RoleTrainingTask(model=model, labels=labels)
    model_cfg.setdefault("num_entity_labels", len(labels))
    mc = _dataclass_from(SpanNerConfig, model_cfg)
    model = build_ner_model(mc)
    return NerTrainingTask(model=model, labels=labels)


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_run_config(args)
    paths = cfg.get("paths", {})
    for key in ("train", "val", "out"):
        if key not in paths:
            raise ConfigError(f"missing required path {key!r} (flag or config)")
    labels = _load_labels(cfg, cfg["task"])
    tc = _dataclass_from(TrainConfig, cfg.get("train", {}))

    train_mod.set_seed(tc.seed)
    if cfg["task"] == "rr":
        train_data = corpus_mod.load_rr_corpus(paths["train"], labels)
        val_data = corpus_mod.load_rr_corpus(paths["val"], labels)
        prep = cfg.get("preprocess", {})
        if prep.get("regularize"):
            reg_cfg = textprep.RegularizeConfig()
            train_data = [textprep.regularize_document(d, reg_cfg) for d in train_data]
        if prep.get("augment"):
            train_data = textprep.augment_swap(train_data, seed=tc.seed)
    else:
        train_data = corpus_mod.load_ner_corpus(paths["train"], labels)
        val_data = corpus_mod.load_ner_corpus(paths["val"], labels)

    task = _build_task(cfg, labels)
    if cfg.get("init_state"):
        payload = train_mod.load_checkpoint(cfg["init_state"])
        copied, skipped = load_state_overlap(task.model, payload["state"])
        log.info("initialized %d tensors from %s (%d skipped)",
                 copied, cfg["init_state"], skipped)
    ckpt, history = train_mod.train(task, train_data, val_data, tc, out_dir=paths["out"])
    evaluation.emit_report(paths["out"], history=history, figures=not args.no_figures)
    log.info(
        "best epoch %d with metric %.6f; checkpoint: %s",
        history.best_epoch, history.best_metric, ckpt,
    )
    return 0


def load_state_overlap(module, state: dict) -> tuple[int, int]:
    """Copy tensors whose name and shape match; report (copied, skipped)."""
    own = module.state_dict()
    copied = skipped = 0
    merged = {}
    for name, tensor in state.items():
        if name in own and own[name].shape == tensor.shape:
            merged[name] = tensor
            copied += 1
        else:
            skipped += 1
    own.update(merged)
    module.load_state_dict(own)
    return copied, skipped


def cmd_predict(args: argparse.Namespace) -> int:
    payload = train_mod.load_checkpoint(args.checkpoint)
    labels = LabelSet(names=tuple(payload["labels"]), kind=payload["label_kind"])
    if args.labels:
        wanted = LabelSet.from_file(args.labels)
        if wanted.names != labels.names:
            raise ConfigError(
                "label set mismatch between checkpoint and --labels: "
                f"{list(labels.names)} vs {list(wanted.names)}"
            )
    records = []
    if payload["task"] == "rr":
        mc = _dataclass_from(RoleModelConfig, payload["model_config"])
        model = build_role_model(mc)
        model.load_state_dict(payload["state"])
        model.eval()
        docs = corpus_mod.load_rr_corpus_for_prediction(args.corpus)
        for doc in docs:
            anns = []
            if doc.sentences:
                pred = model.predict_document(doc)
                anns = [
                    {"start": s.start_char, "end": s.end_char,
                     "label": labels.name(p), "text": s.surface}
                    for s, p in zip(doc.sentences, pred)
                ]
            records.append({"id": doc.doc_id, "data": {"text": doc.text}, "annotations": anns})
    else:
        mc = _dataclass_from(SpanNerConfig, payload["model_config"])
        model = build_ner_model(mc)
        model.load_state_dict(payload["state"])
        model.eval()
        examples = corpus_mod.load_ner_corpus_for_prediction(args.corpus)
        for ex in examples:
            spans = model.predict_entities(ex.text)
            anns = [
                {"start": s.start_char, "end": s.end_char,
                 "label": labels.name(s.label), "text": s.surface}
                for s in spans
            ]
            records.append({"id": ex.doc_id, "data": {"text": ex.text}, "annotations": anns})
    corpus_mod.write_json(records, args.out)
    log.info("wrote predictions for %d records to %s", len(records), args.out)
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    labels = LabelSet.from_file(args.labels) if args.labels else (
        LabelSet.default_rr() if args.task == "rr" else LabelSet.default_ner()
    )
    out = Path(args.out)
    if args.task == "rr":
        gold_docs = {d.doc_id: d for d in corpus_mod.load_rr_corpus(args.gold, labels)}
        pred_docs = {d.doc_id: d for d in corpus_mod.load_rr_corpus(args.pred, labels)}
        _check_ids(gold_docs, pred_docs)
        gold: list[int] = []
        pred: list[int] = []
        for doc_id, gdoc in gold_docs.items():
            pdoc = pred_docs[doc_id]
            if len(pdoc.sentences) != len(gdoc.sentences):
                raise UserError(
                    f"doc {doc_id!r}: prediction has {len(pdoc.sentences)} sentences, "
                    f"gold has {len(gdoc.sentences)}"
                )
            gold.extend(gdoc.labels)
            pred.extend(pdoc.labels)
        exclude = labels.index(args.exclude_label) if args.exclude_label else None
        f1 = evaluation.micro_f1(gold, pred, exclude=exclude)
        conf = evaluation.confusion(gold, pred, labels)
        evaluation.emit_report(
            out, conf=conf, metrics={"micro_f1": f1}, figures=not args.no_figures
        )
        log.info("micro F1 = %.6f over %d sentences", f1, len(gold))
    else:
        gold_ex = {e.doc_id: e for e in corpus_mod.load_ner_corpus(args.gold, labels)}
        pred_ex = {e.doc_id: e for e in corpus_mod.load_ner_corpus(args.pred, labels)}
        _check_ids(gold_ex, pred_ex)
        gold_spans = [
            (doc_id, s.start_char, s.end_char, s.label)
            for doc_id, ex in gold_ex.items() for s in ex.entities
        ]
        pred_spans = [
            (doc_id, s.start_char, s.end_char, s.label)
            for doc_id, ex in pred_ex.items() for s in ex.entities
        ]
        report = evaluation.span_f1(gold_spans, pred_spans)
        evaluation.emit_report(out, metrics={
            "precision": report.precision,
            "recall": report.recall,
            "f1": report.f1,
            "true_positives": report.true_positives,
            "false_positives": report.false_positives,
            "false_negatives": report.false_negatives,
        }, figures=not args.no_figures)
        log.info("span F1 = %.6f (P=%.6f R=%.6f)", report.f1, report.precision, report.recall)
    return 0


def _check_ids(gold: dict, pred: dict) -> None:
    missing = sorted(set(gold) - set(pred))
    extra = sorted(set(pred) - set(gold))
    if missing or extra:
        raise UserError(
            f"doc-id mismatch between gold and predictions: missing={missing} extra={extra}"
        )


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="legalseq",
        description="Sequence labeling for legal documents: rhetorical roles and entities.",
        epilog=f"Presets: {', '.join(list_presets())}. "
               f"Set {('LEGALSEQ_CACHE')} to control the pretrained-weight cache directory.",
    )
    parser.add_argument("--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("stats", help="dataset statistics and distribution reports")
    p.add_argument("--task", choices=("rr", "ner"), default="rr")
    p.add_argument("--corpus", required=True, help="corpus JSON file")
    p.add_argument("--labels", help="label-set JSON (default: packaged labels)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true", help="CSV outputs only")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("preprocess", help="regularize and/or augment an RR corpus")
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels")
    p.add_argument("--out", required=True, help="output corpus JSON path")
    p.add_argument("--steps", help="comma-separated regularization steps (omit flag to skip)")
    p.add_argument("--augment", action="store_true", help="double the corpus by sentence swap")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_preprocess)

    p = sub.add_parser("train", help="train a preset or configured model")
    p.add_argument("--preset", help=f"one of: {', '.join(list_presets())}")
    p.add_argument("--config", help="run-config JSON merged over the preset")
    p.add_argument("--train", dest="train_path", help="training corpus JSON")
    p.add_argument("--val", dest="val_path", help="validation corpus JSON")
    p.add_argument("--out", help="output directory (checkpoint, history)")
    p.add_argument("--seed", type=int)
    p.add_argument("--backend", help="encoder backend override, e.g. hash64 or hf:<path>")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="predict with a trained checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--labels", help="label-set JSON that must match the checkpoint")
    p.add_argument("--out", required=True, help="predictions JSON path")
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="score predictions against gold annotations")
    p.add_argument("--task", choices=("rr", "ner"), required=True)
    p.add_argument("--gold", required=True)
    p.add_argument("--pred", required=True)
    p.add_argument("--labels")
    p.add_argument("--exclude-label", help="drop one class from micro F1 pooling")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--no-figures", action="store_true")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        stream=sys.stderr,
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except UserError as e:
        log.error("%s", e)
        return 2
    except (TrainingAborted, OSError) as e:
        log.error("%s", e)
        return 3


if __name__ == "__main__":
    sys.exit(main())
