"""Online segmentation metrics: frame mAP, segmental edit score, F1@k.

All metrics score a predicted per-frame label stream against ground truth.
Segment-level metrics first run-length encode the streams; the edit score
normalizes Levenshtein distance over segment label strings, and F1@k
matches same-label segments one-to-one by temporal IoU, walking predicted
segments in chronological (score-free) order and giving each its highest-
IoU ground-truth segment, first occurrence winning ties.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .kernels import levenshtein


@dataclass
class SegmentSequence:
    """Run-length encoding of a frame label stream (half-open intervals)."""

    labels: np.ndarray
    starts: np.ndarray
    ends: np.ndarray
    length: int

    def __len__(self) -> int:
        return len(self.labels)

    def expand(self) -> np.ndarray:
        """Back to per-frame labels; inverse of segment()."""
        out = np.empty(self.length, dtype=self.labels.dtype)
        for lab, s, e in zip(self.labels, self.starts, self.ends):
            out[s:e] = lab
        return out


def segment(frame_labels) -> SegmentSequence:
    """Run-length encode a per-frame label stream."""
    arr = np.asarray(frame_labels)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("need a non-empty 1-D label stream")
    change = np.flatnonzero(arr[1:] != arr[:-1]) + 1
    starts = np.concatenate(([0], change))
    ends = np.concatenate((change, [arr.size]))
    return SegmentSequence(arr[starts], starts, ends, int(arr.size))


def _as_ids(pred, truth) -> tuple[np.ndarray, np.ndarray]:
    pred = np.asarray(pred)
    truth = np.asarray(truth)
    if pred.dtype.kind in "iu" and truth.dtype.kind in "iu":
        return pred.astype(np.int64), truth.astype(np.int64)
    joint = np.concatenate((pred, truth))
    _, inverse = np.unique(joint, return_inverse=True)
    return inverse[: pred.size].astype(np.int64), inverse[pred.size :].astype(np.int64)


def frame_map(probs: np.ndarray, labels: np.ndarray) -> tuple[float, dict[int, float]]:
    """Frame-wise mean average precision, in percent.

    `probs` is (frames, classes) class scores, `labels` integer ground
    truth.  Per class: rank frames by score (stable sort, so ties keep
    frame order), average the precision measured at each positive frame.
    Classes absent from the ground truth are excluded from the mean.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ValueError("probs must be (frames, classes) with matching labels")
    present = np.unique(labels)
    per_class: dict[int, float] = {}
    for c in present:
        order = np.argsort(-probs[:, c], kind="stable")
        positives = (labels[order] == c).astype(np.float64)
        cum = np.cumsum(positives)
        ranks = np.arange(1, labels.size + 1)
        precision_at_pos = (cum / ranks)[positives > 0]
        per_class[int(c)] = float(precision_at_pos.mean()) * 100.0
    return float(np.mean(list(per_class.values()))), per_class


def edit_score(pred, truth) -> float:
    """100 * (1 - Levenshtein(pred segments, truth segments) / max count)."""
    pred, truth = _as_ids(pred, truth)
    a = segment(pred).labels
    b = segment(truth).labels
    denom = max(len(a), len(b))
    if denom == 0:
        return 100.0
    return 100.0 * (1.0 - levenshtein(a, b) / denom)


@dataclass
class F1Result:
    tp: int
    fp: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        denom = 2 * self.tp + self.fp + self.fn
        return 100.0 * 2.0 * self.tp / denom if denom else 100.0


def _iou(s1: int, e1: int, s2: int, e2: int) -> float:
    inter = min(e1, e2) - max(s1, s2)
    if inter <= 0:
        return 0.0
    union = max(e1, e2) - min(s1, s2)
    return inter / union


def f1_counts(pred, truth, threshold: float = 0.1) -> F1Result:
    """Greedy chronological one-to-one segment matching at IoU >= threshold.

    Each predicted segment, in temporal order, claims its highest-IoU
    same-label ground-truth segment (earliest wins exact ties); the claim
    is a true positive only if that segment is still unclaimed and the IoU
    clears the threshold.  Unclaimed ground-truth segments are false
    negatives.
    """
    pred, truth = _as_ids(pred, truth)
    ps = segment(pred)
    ts = segment(truth)
    used = np.zeros(len(ts), dtype=bool)
    tp = fp = 0
    for lab, s, e in zip(ps.labels, ps.starts, ps.ends):
        ious = np.array(
            [
                _iou(s, e, ts.starts[j], ts.ends[j]) if ts.labels[j] == lab else 0.0
                for j in range(len(ts))
            ]
        )
        best = int(np.argmax(ious)) if len(ious) else -1
        if best >= 0 and ious[best] >= threshold and not used[best] and ious[best] > 0:
            tp += 1
            used[best] = True
        else:
            fp += 1
    fn = int((~used).sum())
    return F1Result(tp=tp, fp=fp, fn=fn)


def f1_overlap(pred, truth, threshold: float = 0.1) -> float:
    return f1_counts(pred, truth, threshold).f1


def confusion(pred, truth, class_count: int) -> np.ndarray:
    """Counts matrix with ground truth on rows, predictions on columns."""
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if pred.shape != truth.shape:
        raise ValueError("streams must have equal length")
    out = np.zeros((class_count, class_count), dtype=np.int64)
    np.add.at(out, (truth, pred), 1)
    return out


def mean_std(values) -> tuple[float, float]:
    """Mean and population standard deviation, for fold aggregation."""
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


@dataclass
class EvalReport:
    """Stitched evaluation of a model over a set of sequences."""

    frame_map: float
    edit: float
    f1: float
    per_class_ap: dict[int, float]
    confusion: np.ndarray
    per_sequence_edit: list[float] = field(default_factory=list)
    counts: F1Result | None = None

    def rows(self) -> list[tuple[str, float]]:
        return [("map", self.frame_map), ("edit", self.edit), ("f1", self.f1)]


def evaluate_streams(
    probs_per_seq: list[np.ndarray],
    truth_per_seq: list[np.ndarray],
    class_count: int,
    f1_threshold: float = 0.1,
) -> EvalReport:
    """Aggregate metrics over several sequences.

    mAP pools frames across sequences; edit averages per-sequence scores;
    F1 accumulates segment counts globally.
    """
    if len(probs_per_seq) != len(truth_per_seq) or not probs_per_seq:
        raise ValueError("need matching, non-empty probability/label lists")
    all_probs = np.concatenate(probs_per_seq, axis=0)
    all_truth = np.concatenate(truth_per_seq, axis=0)
    m, per_class = frame_map(all_probs, all_truth)
    edits = []
    tp = fp = fn = 0
    conf = np.zeros((class_count, class_count), dtype=np.int64)
    for probs, truth in zip(probs_per_seq, truth_per_seq):
        pred = probs.argmax(axis=-1)
        edits.append(edit_score(pred, truth))
        counts = f1_counts(pred, truth, f1_threshold)
        tp += counts.tp
        fp += counts.fp
        fn += counts.fn
        conf += confusion(pred, truth, class_count)
    total = F1Result(tp=tp, fp=fp, fn=fn)
    return EvalReport(
        frame_map=m,
        edit=float(np.mean(edits)),
        f1=total.f1,
        per_class_ap=per_class,
        confusion=conf,
        per_sequence_edit=edits,
        counts=total,
    )


# ---- optional plot emission -------------------------------------------------


def plot_precision_curves(probs: np.ndarray, labels: np.ndarray, class_names, path: str) -> None:
    """Precision-recall curve per class present in the ground truth."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    labels = np.asarray(labels, dtype=np.int64)
    fig, ax = plt.subplots(figsize=(6, 5))
    for c in np.unique(labels):
        order = np.argsort(-probs[:, c], kind="stable")
        pos = (labels[order] == c).astype(np.float64)
        cum = np.cumsum(pos)
        prec = cum / np.arange(1, labels.size + 1)
        rec = cum / max(pos.sum(), 1.0)
        ax.plot(rec, prec, label=str(class_names[c]) if class_names else str(c))
    ax.set_xlabel("recall")
    ax.set_ylabel("precision")
    ax.set_ylim(0, 1.05)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)


def plot_confusion(matrix: np.ndarray, class_names, path: str) -> None:
    """Heat map of the confusion matrix (rows truth, columns prediction)."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 5))
    im = ax.imshow(matrix, cmap="viridis")
    fig.colorbar(im, ax=ax)
    ticks = range(matrix.shape[0])
    names = [str(class_names[i]) if class_names else str(i) for i in ticks]
    ax.set_xticks(list(ticks), names, rotation=90, fontsize=6)
    ax.set_yticks(list(ticks), names, fontsize=6)
    ax.set_xlabel("predicted")
    ax.set_ylabel("truth")
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
