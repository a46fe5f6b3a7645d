"""Command-line interface: train, eval, infer, reba, synth, gradcheck.

Every command is deterministic given its --seed (or has no randomness at
all), writes results to stdout / --out, and reports failures as
`error: ...` on stderr with a nonzero exit status.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .data import (
    JOINT_NAMES_13,
    SequenceFormatError,
    SkeletonSequence,
    load_dataset,
    load_sequence,
    synthesize_dataset,
    write_sequence,
)
from .graph import GraphError
from .model import CheckpointError, load_checkpoint
from .reba import (
    RebaError,
    assess_sequence,
    load_action_mapping,
    load_reba_tables,
)
from .train import (
    evaluate_model,
    load_train_config,
    log_to_csv,
    predict_sequence_probs,
    train_run,
)
from .verify import gradcheck_suite

RECORD_HEADER = "frame,score_a,score_b,final,risk_band,label"


def _reba_names(seq: SkeletonSequence) -> tuple[str, ...]:
    if seq.joint_names is not None:
        return tuple(seq.joint_names)
    if seq.joint_count == len(JOINT_NAMES_13):
        return JOINT_NAMES_13
    raise RebaError(
        f"sequence has {seq.joint_count} unnamed joints; scoring needs named joints"
    )


def _parse_gravity(text: str) -> tuple[float, float, float]:
    parts = [p for p in text.split(",") if p.strip()]
    if len(parts) != 3:
        raise ValueError(f"gravity wants three comma-separated numbers, got {text!r}")
    return tuple(float(p) for p in parts)


def _assessment_records(assessments, adjusted: bool):
    lines = [RECORD_HEADER]
    warnings: list[str] = []
    for fa in assessments:
        score = fa.adjusted if (adjusted and fa.adjusted is not None) else fa.raw
        if score is None:
            lines.append(f"{fa.frame},,,,unscorable,{fa.label}")
        else:
            lines.append(
                f"{fa.frame},{score.score_a},{score.score_b},{score.final},"
                f"{score.risk_band},{fa.label}"
            )
        warnings.extend(w for w in fa.warnings if w != "unscorable frame")
    return "\n".join(lines) + "\n", sorted(set(warnings))


def _emit(text: str, out_path: str | None) -> None:
    if out_path is None:
        sys.stdout.write(text)
    else:
        with open(out_path, "w", encoding="utf-8") as fh:
            fh.write(text)


# ---- commands -----------------------------------------------------------------


def cmd_train(args) -> int:
    config = load_train_config(args.config)
    dataset = load_dataset(args.data)
    os.makedirs(args.out, exist_ok=True)

    def progress(record):
        print(
            f"lr {record.lr:g} fold {record.fold} epoch {record.epoch}: "
            f"loss {record.loss:.4f} map {record.frame_map:.2f} "
            f"edit {record.edit:.2f} f1 {record.f1:.2f}"
        )

    result = train_run(config, dataset, progress=progress)
    with open(os.path.join(args.out, "log.csv"), "w", encoding="utf-8") as fh:
        fh.write(log_to_csv(result.log))
    with open(os.path.join(args.out, "best.ckpt"), "wb") as fh:
        fh.write(result.best_checkpoint)
    summary = [
        f"best: lr={result.best['lr']:g} fold={result.best['fold']} "
        f"epoch={result.best['epoch']} map={result.best['frame_map']:.4f}"
    ]
    for lr, (mean, std) in result.lr_summary.items():
        summary.append(f"lr {lr:g}: map {mean:.4f} +/- {std:.4f} across folds")
    for item in result.aborted:
        summary.append(f"aborted: lr={item['lr']:g} fold={item['fold']} ({item['reason']})")
    text = "\n".join(summary) + "\n"
    with open(os.path.join(args.out, "summary.txt"), "w", encoding="utf-8") as fh:
        fh.write(text)
    print(text, end="")
    return 0


def cmd_eval(args) -> int:
    model = load_checkpoint(args.checkpoint)
    dataset = load_dataset(args.data)
    vocab = list(model.config.labels)
    if not vocab:
        raise CheckpointError("checkpoint carries no label vocabulary")
    report = evaluate_model(
        model, dataset, vocab, args.window, args.stride,
        f1_threshold=args.f1_threshold,
    )
    for name, value in report.rows():
        print(f"{name:<12} {value:.2f}")
    if args.report:
        lines = ["metric,value"]
        lines += [f"{name},{value:.6f}" for name, value in report.rows()]
        lines += [f"ap_{vocab[k]},{ap:.6f}" for k, ap in sorted(report.per_class_ap.items())]
        with open(args.report, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")
    if args.plots:
        from .metrics import plot_confusion, plot_precision_curves

        os.makedirs(args.plots, exist_ok=True)
        probs = np.concatenate(
            [predict_sequence_probs(model, s, args.window, args.stride) for s in dataset]
        )
        labels = np.concatenate(
            [[vocab.index(l) for l in s.labels] for s in dataset]
        )
        plot_precision_curves(probs, labels, vocab, os.path.join(args.plots, "precision.png"))
        plot_confusion(report.confusion, vocab, os.path.join(args.plots, "confusion.png"))
    return 0


def cmd_infer(args) -> int:
    model = load_checkpoint(args.checkpoint)
    seq = load_sequence(args.input)
    expected = model.hierarchy.node_counts[0]
    if seq.joint_count != expected:
        raise SequenceFormatError(
            f"sequence has {seq.joint_count} joints but the checkpoint expects {expected}"
        )
    vocab = list(model.config.labels)
    if not vocab:
        raise CheckpointError("checkpoint carries no label vocabulary")
    tables = load_reba_tables(args.reba_tables)
    mapping = load_action_mapping(args.mapping)
    probs = predict_sequence_probs(model, seq, args.window, args.stride)
    predicted = [vocab[int(i)] for i in probs.argmax(axis=1)]
    assessments = assess_sequence(
        seq.joints, _reba_names(seq), tables,
        labels=predicted, mapping=mapping, gravity=_parse_gravity(args.gravity),
    )
    text, warnings = _assessment_records(assessments, adjusted=True)
    _emit(text, args.out)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_reba(args) -> int:
    seq = load_sequence(args.input)
    tables = load_reba_tables(args.tables)
    mapping = load_action_mapping(args.mapping) if args.mapping else None
    labels = seq.labels if seq.labels is not None else None
    assessments = assess_sequence(
        seq.joints, _reba_names(seq), tables,
        labels=labels, mapping=mapping, gravity=_parse_gravity(args.gravity),
    )
    text, warnings = _assessment_records(assessments, adjusted=mapping is not None)
    _emit(text, args.out)
    for w in warnings:
        print(f"warning: {w}", file=sys.stderr)
    return 0


def cmd_synth(args) -> int:
    if args.classes < 2:
        raise ValueError("synthesis needs at least 2 classes")
    dataset = synthesize_dataset(
        classes=args.classes,
        sequences=args.sequences,
        noise=args.noise,
        seed=args.seed,
        image_features=args.image_features,
    )
    os.makedirs(args.out, exist_ok=True)
    for seq in dataset:
        write_sequence(seq, os.path.join(args.out, f"{seq.name}.seq"))
    print(f"wrote {len(dataset)} sequences to {args.out}")
    return 0


def cmd_gradcheck(args) -> int:
    results = gradcheck_suite(seed=args.seed, tolerance=args.tolerance, epsilon=args.epsilon)
    for r in results:
        print(r.line())
    failed = [r for r in results if not r.passed]
    if failed:
        print(f"error: {len(failed)} component(s) above tolerance", file=sys.stderr)
        return 1
    print(f"all {len(results)} components within {args.tolerance:g}")
    return 0


# ---- parser ---------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="skelact",
        description="Skeleton action recognition with pyramid graph convolutions "
        "and ergonomic risk scoring.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a config file")
    p.add_argument("--config", required=True, help="key = value training config")
    p.add_argument("--data", required=True, help="directory of .seq files")
    p.add_argument("--out", required=True, help="output directory for log and checkpoint")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--window", type=int, default=80)
    p.add_argument("--stride", type=int, default=80)
    p.add_argument("--f1-threshold", type=float, default=0.1)
    p.add_argument("--report", help="write metrics as CSV to this file")
    p.add_argument("--plots", help="write precision/confusion plots into this directory")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("infer", help="per-frame labels plus adjusted risk scores")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True, help="one .seq file")
    p.add_argument("--reba-tables", default=None, help="tables file (packaged default)")
    p.add_argument("--mapping", default=None, help="label-to-factor mapping file (packaged default)")
    p.add_argument("--window", type=int, default=80)
    p.add_argument("--stride", type=int, default=80)
    p.add_argument("--gravity", default="0,-1,0")
    p.add_argument("--out", help="write records here instead of stdout")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("reba", help="risk scores from geometry only, no model")
    p.add_argument("--input", required=True)
    p.add_argument("--tables", default=None)
    p.add_argument("--mapping", default=None, help="adjust with the file's own labels")
    p.add_argument("--gravity", default="0,-1,0")
    p.add_argument("--out")
    p.set_defaults(func=cmd_reba)

    p = sub.add_parser("synth", help="generate a labeled synthetic dataset")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--sequences", type=int, required=True)
    p.add_argument("--noise", type=float, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--image-features", action="store_true")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("gradcheck", help="finite-difference check of every layer")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tolerance", type=float, default=1e-4)
    p.add_argument("--epsilon", type=float, default=1e-5)
    p.set_defaults(func=cmd_gradcheck)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (GraphError, RebaError, SequenceFormatError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
