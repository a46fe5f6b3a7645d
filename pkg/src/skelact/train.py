"""Training harness: Adam, sliding windows, k-fold splits, and the run loop.

Sequences are cut into fixed-length windows (overlapping stride for
training, abutting stride for evaluation); the final short window is
zero-padded and masked so padding contributes neither loss nor gradient.
Cross-validation folds split whole sequences, never frames.  Everything
deterministic flows from one integer seed: model init, shuffling, and
fold assignment, so a repeated run reproduces logs and checkpoints bit
for bit.  A non-finite loss aborts the run; in grid mode the remaining
learning rates still run.

The config file is plain `key = value` text mirroring TrainConfig fields;
the training log is CSV with one row per (epoch, fold).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field

import numpy as np

from .data import SkeletonSequence, label_vocabulary
from .graph import build_hierarchy, default_hierarchy, load_part_spec
from .metrics import EvalReport, evaluate_streams
from .model import (
    ModelConfig,
    PgnModel,
    WindowBatch,
    checkpoint_bytes,
    compute_loss,
)
from .tensor import Tensor, backward


@dataclass
class TrainConfig:
    """Run settings; defaults follow the reference online setup."""

    window: int = 80
    stride: int = 40
    eval_stride: int = 80
    batch_size: int = 128
    learning_rate: float = 0.05
    lr_grid: tuple[float, ...] = ()
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    epochs: int = 100
    folds: int = 5
    seed: int = 0
    multi_loss: bool = True
    edge_importance: bool = True
    fusion: bool = False
    fusion_finetune: bool = False
    fusion_size: int = 256
    hidden_size: int = 256
    channels: tuple[int, ...] = (64, 128, 256)
    levels: int = 3
    part_spec: str = ""
    f1_threshold: float = 0.1

    def __post_init__(self):
        if self.window < 1 or self.stride < 1 or self.eval_stride < 1:
            raise ValueError("window and strides must be positive")
        if self.epochs < 1 or self.batch_size < 1 or self.folds < 1:
            raise ValueError("epochs, batch_size, and folds must be positive")


_TUPLE_FIELDS = {"lr_grid": float, "channels": int}


def config_to_text(cfg: TrainConfig) -> str:
    lines = ["# training configuration"]
    for f in dataclasses.fields(cfg):
        value = getattr(cfg, f.name)
        if f.name in _TUPLE_FIELDS:
            rendered = ",".join(repr(v) for v in value)
        elif isinstance(value, bool):
            rendered = "true" if value else "false"
        elif isinstance(value, float):
            rendered = repr(value)
        else:
            rendered = str(value)
        lines.append(f"{f.name} = {rendered}")
    return "\n".join(lines) + "\n"


def config_from_text(text: str) -> TrainConfig:
    """Parse `key = value` lines; unknown keys are an error, not a typo sink."""
    fields = {f.name: f for f in dataclasses.fields(TrainConfig)}
    values: dict = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise ValueError(f"line {lineno}: expected `key = value`, got {raw.strip()!r}")
        key = key.strip()
        value = value.strip()
        if key not in fields:
            raise ValueError(f"line {lineno}: unknown config key {key!r}")
        if key in _TUPLE_FIELDS:
            conv = _TUPLE_FIELDS[key]
            values[key] = tuple(conv(v) for v in value.split(",") if v.strip()) if value else ()
        elif fields[key].type == "bool":
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError(f"line {lineno}: bad boolean {value!r}")
            values[key] = value.lower() in ("true", "1")
        elif fields[key].type == "int":
            values[key] = int(value)
        elif fields[key].type == "float":
            values[key] = float(value)
        else:
            values[key] = value
    return TrainConfig(**values)


def load_train_config(path: str) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return config_from_text(fh.read())


# ---- optimizer --------------------------------------------------------------


@dataclass
class AdamState:
    """First/second moment accumulators keyed by parameter name."""

    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0

    @classmethod
    def init(cls, params: dict[str, Tensor]) -> "AdamState":
        return cls(
            m={k: np.zeros_like(p.data) for k, p in params.items()},
            v={k: np.zeros_like(p.data) for k, p in params.items()},
        )


def adam_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One bias-corrected Adam update, in place on the parameter tensors."""
    state.t += 1
    bc1 = 1.0 - beta1**state.t
    bc2 = 1.0 - beta2**state.t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if weight_decay:
            g = g + weight_decay * p.data
        m = state.m[name]
        v = state.v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)


# ---- windows and folds -------------------------------------------------------


@dataclass
class Window:
    """One fixed-length slice of a sequence (zero-padded at the tail)."""

    inputs: np.ndarray          # (3, N, T)
    labels: np.ndarray          # (T,)
    mask: np.ndarray            # (T,) 1 = real frame, 0 = padding
    image: np.ndarray | None    # (D, T)
    origin: tuple[int, int]     # (sequence index, start frame)


def make_windows(
    joints: np.ndarray,
    labels: np.ndarray,
    window: int,
    stride: int,
    image: np.ndarray | None = None,
    seq_index: int = 0,
) -> list[Window]:
    """Slide a window of `window` frames at `stride` over one sequence.

    `joints` is (T, N, 3).  Every start in range(0, T, stride) yields one
    window; a tail shorter than `window` is zero-padded with mask 0, so at
    stride == window the unpadded frames tile the sequence exactly once.
    """
    length = joints.shape[0]
    data = np.transpose(joints, (2, 1, 0))  # (3, N, T_total)
    img = None if image is None else np.transpose(image, (1, 0))
    out = []
    for start in range(0, length, stride):
        end = min(start + window, length)
        real = end - start
        x = np.zeros((3, joints.shape[1], window))
        x[:, :, :real] = data[:, :, start:end]
        lab = np.zeros(window, dtype=np.int64)
        lab[:real] = labels[start:end]
        mask = np.zeros(window)
        mask[:real] = 1.0
        im = None
        if img is not None:
            im = np.zeros((img.shape[0], window))
            im[:, :real] = img[:, start:end]
        out.append(Window(x, lab, mask, im, (seq_index, start)))
    return out


def batch_windows(windows: list[Window]) -> WindowBatch:
    image = None
    if windows[0].image is not None:
        image = np.stack([w.image for w in windows])
    return WindowBatch(
        inputs=np.stack([w.inputs for w in windows]),
        labels=np.stack([w.labels for w in windows]),
        mask=np.stack([w.mask for w in windows]),
        image=image,
        origin=[w.origin for w in windows],
    )


def kfold_split(count: int, folds: int, seed: int) -> list[tuple[np.ndarray, np.ndarray]]:
    """Whole-sequence folds: shuffle once, then deal contiguous chunks.

    Every sequence lands in exactly one validation fold.  folds == 1 is the
    degenerate overfit mode: train and validate on everything.
    """
    if folds > count:
        raise ValueError(f"cannot split {count} sequences into {folds} folds")
    perm = np.random.default_rng(seed).permutation(count)
    if folds == 1:
        return [(perm.copy(), perm.copy())]
    chunks = np.array_split(perm, folds)
    out = []
    for i in range(folds):
        val = chunks[i]
        train = np.concatenate([c for j, c in enumerate(chunks) if j != i])
        out.append((train, val))
    return out


# ---- evaluation (stitched windows) ------------------------------------------


def _encode_labels(seq: SkeletonSequence, vocab: list[str]) -> np.ndarray:
    index = {name: i for i, name in enumerate(vocab)}
    unknown = sorted({l for l in seq.labels if l not in index})
    if unknown:
        raise ValueError(f"sequence {seq.name!r} has labels outside the vocabulary: {unknown}")
    return np.array([index[l] for l in seq.labels], dtype=np.int64)


def predict_sequence_probs(
    model: PgnModel,
    seq: SkeletonSequence,
    window: int,
    stride: int,
    batch_size: int = 32,
) -> np.ndarray:
    """Per-frame class probabilities, stitched from sliding windows.

    Windows are causal and processed in order; where they overlap, the
    later window's predictions win.
    """
    joints = seq.joints
    length = joints.shape[0]
    dummy = np.zeros(length, dtype=np.int64)
    image = seq.image_features if model.config.fusion else None
    if model.config.fusion and image is None:
        raise ValueError(f"fusion model needs image features; {seq.name!r} has none")
    windows = make_windows(joints, dummy, window, stride, image=image)
    probs = np.zeros((length, model.config.class_count))
    for i in range(0, len(windows), batch_size):
        chunk = windows[i : i + batch_size]
        wb = batch_windows(chunk)
        _, p = model.predict(wb.inputs, wb.image)
        for w, win_probs in zip(chunk, p):
            start = w.origin[1]
            real = int(w.mask.sum())
            probs[start : start + real] = win_probs[:real]
    return probs


def evaluate_model(
    model: PgnModel,
    sequences: list[SkeletonSequence],
    vocab: list[str],
    window: int,
    stride: int,
    batch_size: int = 32,
    f1_threshold: float = 0.1,
) -> EvalReport:
    probs = [predict_sequence_probs(model, s, window, stride, batch_size) for s in sequences]
    truth = [_encode_labels(s, vocab) for s in sequences]
    return evaluate_streams(probs, truth, model.config.class_count, f1_threshold)


# ---- the run loop ------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    fold: int
    lr: float
    loss: float
    frame_map: float
    edit: float
    f1: float


@dataclass
class TrainResult:
    log: list[EpochRecord]
    best_checkpoint: bytes | None
    best: dict
    vocab: list[str]
    lr_summary: dict[float, tuple[float, float]]
    aborted: list[dict]


class TrainDiverged(RuntimeError):
    """Loss became non-finite; training on NaNs is never useful."""


def _model_seed(seed: int, lr_index: int, fold: int) -> int:
    return int(np.random.SeedSequence([seed, lr_index, fold]).generate_state(1)[0])


def train_run(
    config: TrainConfig,
    dataset: list[SkeletonSequence],
    progress=None,
) -> TrainResult:
    """Full (optionally grid-searched) cross-validated training run."""
    vocab = label_vocabulary(dataset)
    if config.part_spec:
        spec, topology = load_part_spec(config.part_spec)
        if topology is None:
            raise ValueError("part spec file must include the skeleton edges")
        hierarchy = build_hierarchy(topology, spec)
    else:
        hierarchy = default_hierarchy()
    n_joints = hierarchy.node_counts[0]
    for seq in dataset:
        if seq.joint_count != n_joints:
            raise ValueError(
                f"sequence {seq.name!r} has {seq.joint_count} joints, hierarchy expects {n_joints}"
            )
    image_size = 0
    if config.fusion:
        missing = [s.name for s in dataset if s.image_features is None]
        if missing:
            raise ValueError(f"fusion is enabled but sequences lack image features: {missing}")
        image_size = dataset[0].image_features.shape[1]
    model_cfg_base = dict(
        class_count=len(vocab),
        labels=vocab,
        channels=tuple(config.channels),
        hidden_size=config.hidden_size,
        levels=config.levels,
        edge_importance=config.edge_importance,
        fusion=config.fusion,
        image_feature_size=image_size,
        fusion_size=config.fusion_size,
    )
    encoded = [_encode_labels(s, vocab) for s in dataset]
    lrs = config.lr_grid if config.lr_grid else (config.learning_rate,)
    folds = kfold_split(len(dataset), config.folds, config.seed)
    log: list[EpochRecord] = []
    aborted: list[dict] = []
    best = {"frame_map": -1.0, "lr": None, "fold": None, "epoch": None}
    best_blob: bytes | None = None
    lr_summary: dict[float, tuple[float, float]] = {}
    for li, lr in enumerate(lrs):
        fold_maps = []
        for fi, (train_idx, val_idx) in enumerate(folds):
            model = PgnModel(
                hierarchy, ModelConfig(**model_cfg_base), seed=_model_seed(config.seed, li, fi)
            )
            trainable = model.trainable_params(config.fusion and config.fusion_finetune)
            state = AdamState.init(trainable)
            windows: list[Window] = []
            for si in train_idx:
                seq = dataset[si]
                image = seq.image_features if config.fusion else None
                windows.extend(
                    make_windows(
                        seq.joints, encoded[si], config.window, config.stride,
                        image=image, seq_index=int(si),
                    )
                )
            shuffle_rng = np.random.default_rng(
                np.random.SeedSequence([config.seed, li, fi, 1])
            )
            val_seqs = [dataset[i] for i in val_idx]
            fold_best = -1.0
            try:
                for epoch in range(1, config.epochs + 1):
                    order = shuffle_rng.permutation(len(windows))
                    losses = []
                    for b in range(0, len(order), config.batch_size):
                        wb = batch_windows([windows[i] for i in order[b : b + config.batch_size]])
                        logits = model.forward(
                            Tensor(wb.inputs),
                            None if wb.image is None else Tensor(wb.image),
                        )
                        loss = compute_loss(logits, wb.labels, wb.mask, config.multi_loss)
                        value = float(loss.data)
                        if not np.isfinite(value):
                            raise TrainDiverged(
                                f"non-finite loss at lr={lr} fold={fi} epoch={epoch}"
                            )
                        losses.append(value)
                        grad_map = backward(loss)
                        grads = {k: grad_map.get(p) for k, p in trainable.items()}
                        adam_step(
                            trainable, grads, state, lr,
                            config.beta1, config.beta2, config.eps, config.weight_decay,
                        )
                    report = evaluate_model(
                        model, val_seqs, vocab, config.window, config.eval_stride,
                        batch_size=config.batch_size, f1_threshold=config.f1_threshold,
                    )
                    record = EpochRecord(
                        epoch=epoch, fold=fi, lr=lr, loss=float(np.mean(losses)),
                        frame_map=report.frame_map, edit=report.edit, f1=report.f1,
                    )
                    log.append(record)
                    if progress is not None:
                        progress(record)
                    if report.frame_map > fold_best:
                        fold_best = report.frame_map
                    if report.frame_map > best["frame_map"]:
                        best = {
                            "frame_map": report.frame_map, "lr": lr, "fold": fi, "epoch": epoch,
                        }
                        best_blob = checkpoint_bytes(model)
            except TrainDiverged as exc:
                aborted.append({"lr": lr, "fold": fi, "reason": str(exc)})
                continue
            fold_maps.append(fold_best)
        if fold_maps:
            lr_summary[lr] = (float(np.mean(fold_maps)), float(np.std(fold_maps)))
    if best_blob is None:
        raise RuntimeError("every run diverged before producing a checkpoint")
    return TrainResult(
        log=log,
        best_checkpoint=best_blob,
        best=best,
        vocab=vocab,
        lr_summary=lr_summary,
        aborted=aborted,
    )


def log_to_csv(log: list[EpochRecord]) -> str:
    lines = ["epoch,fold,lr,loss,map,edit,f1"]
    for r in log:
        lines.append(
            f"{r.epoch},{r.fold},{r.lr:.6g},{r.loss:.6f},"
            f"{r.frame_map:.6f},{r.edit:.6f},{r.f1:.6f}"
        )
    return "\n".join(lines) + "\n"
