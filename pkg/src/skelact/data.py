"""Skeleton sequence container, its text file format, and a synthetic
dataset generator.

File format (version 1) is line-oriented and escape-free.  Header lines
are `key value` pairs; each frame is one comma-separated record whose
fields are space-separated numbers:

    version 1
    joints 13
    names r_ankle l_ankle ... head      (optional)
    rate 30.0
    coords y-up
    frame <index>,<x y z  * joints>[,<label>[,<image feature floats>]]

Frame indices must be strictly increasing; every record must carry
exactly 3 * joints coordinates.  Floats are written with shortest
round-trip repr, so load(write(seq)) is an exact identity.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field

import numpy as np

FORMAT_VERSION = 1
SEQUENCE_SUFFIX = ".seq"


class SequenceFormatError(ValueError):
    """Raised for malformed sequence files; messages name the line."""


@dataclass
class SkeletonSequence:
    """One recorded sequence: (frames, joints, 3) positions plus labels."""

    joints: np.ndarray
    labels: list[str] | None = None
    image_features: np.ndarray | None = None
    joint_names: tuple[str, ...] | None = None
    frame_rate: float = 30.0
    coords: str = "y-up"
    name: str = ""

    def __post_init__(self):
        self.joints = np.asarray(self.joints, dtype=np.float64)
        if self.joints.ndim != 3 or self.joints.shape[2] != 3:
            raise ValueError("joints must be (frames, joints, 3)")
        if self.labels is not None and len(self.labels) != self.frame_count:
            raise ValueError("one label per frame required")
        if self.image_features is not None:
            self.image_features = np.asarray(self.image_features, dtype=np.float64)
            if self.image_features.shape[0] != self.frame_count:
                raise ValueError("one image feature row per frame required")

    @property
    def frame_count(self) -> int:
        return self.joints.shape[0]

    @property
    def joint_count(self) -> int:
        return self.joints.shape[1]


def write_sequence(seq: SkeletonSequence, path: str) -> None:
    lines = [f"version {FORMAT_VERSION}", f"joints {seq.joint_count}"]
    if seq.joint_names:
        lines.append("names " + " ".join(seq.joint_names))
    lines.append(f"rate {repr(float(seq.frame_rate))}")
    lines.append(f"coords {seq.coords}")
    for t in range(seq.frame_count):
        coords = " ".join(repr(float(v)) for v in seq.joints[t].reshape(-1))
        fields = [f"frame {t}", coords]
        has_label = seq.labels is not None
        has_feats = seq.image_features is not None
        if has_label or has_feats:
            fields.append(seq.labels[t] if has_label else "")
        if has_feats:
            fields.append(" ".join(repr(float(v)) for v in seq.image_features[t]))
        lines.append(",".join(fields))
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(lines) + "\n")


def load_sequence(path: str) -> SkeletonSequence:
    """Parse a sequence file, rejecting malformed records by line number."""
    joint_count = None
    names = None
    rate = 30.0
    coords = "y-up"
    version = None
    frames: list[np.ndarray] = []
    labels: list[str] = []
    feats: list[np.ndarray] = []
    any_label = False
    last_index = -1
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("frame "):
                if joint_count is None:
                    raise SequenceFormatError(f"{path}:{lineno}: frame record before `joints` header")
                parts = line.split(",")
                head = parts[0].split()
                if len(head) != 2:
                    raise SequenceFormatError(f"{path}:{lineno}: malformed frame header")
                try:
                    index = int(head[1])
                except ValueError as exc:
                    raise SequenceFormatError(f"{path}:{lineno}: bad frame index") from exc
                if index <= last_index:
                    raise SequenceFormatError(
                        f"{path}:{lineno}: frame indices must be strictly increasing"
                    )
                last_index = index
                if len(parts) < 2:
                    raise SequenceFormatError(f"{path}:{lineno}: missing coordinates")
                try:
                    values = np.array([float(v) for v in parts[1].split()])
                except ValueError as exc:
                    raise SequenceFormatError(f"{path}:{lineno}: bad coordinate value") from exc
                if values.size != 3 * joint_count:
                    raise SequenceFormatError(
                        f"{path}:{lineno}: expected {3 * joint_count} coordinates, got {values.size}"
                    )
                frames.append(values.reshape(joint_count, 3))
                label = parts[2].strip() if len(parts) > 2 else ""
                labels.append(label)
                if label:
                    any_label = True
                if len(parts) > 3 and parts[3].strip():
                    try:
                        feats.append(np.array([float(v) for v in parts[3].split()]))
                    except ValueError as exc:
                        raise SequenceFormatError(f"{path}:{lineno}: bad image feature value") from exc
                else:
                    feats.append(None)
                if len(parts) > 4:
                    raise SequenceFormatError(f"{path}:{lineno}: too many fields")
            else:
                key, _, value = line.partition(" ")
                if key == "version":
                    version = int(value)
                    if version != FORMAT_VERSION:
                        raise SequenceFormatError(
                            f"{path}:{lineno}: unsupported format version {version}"
                        )
                elif key == "joints":
                    joint_count = int(value)
                elif key == "names":
                    names = tuple(value.split())
                elif key == "rate":
                    rate = float(value)
                elif key == "coords":
                    coords = value.strip()
                else:
                    raise SequenceFormatError(f"{path}:{lineno}: unknown header {key!r}")
    if version is None:
        raise SequenceFormatError(f"{path}: missing `version` header")
    if not frames:
        raise SequenceFormatError(f"{path}: no frame records")
    have_feats = [f for f in feats if f is not None]
    image_features = None
    if have_feats:
        if len(have_feats) != len(frames):
            raise SequenceFormatError(f"{path}: image features must cover every frame or none")
        dims = {f.size for f in have_feats}
        if len(dims) != 1:
            raise SequenceFormatError(f"{path}: inconsistent image feature dimensions {sorted(dims)}")
        image_features = np.stack(have_feats)
    return SkeletonSequence(
        joints=np.stack(frames),
        labels=labels if any_label else None,
        image_features=image_features,
        joint_names=names,
        frame_rate=rate,
        coords=coords,
        name=os.path.splitext(os.path.basename(path))[0],
    )


def load_dataset(directory: str) -> list[SkeletonSequence]:
    """All *.seq files in a directory, sorted by file name."""
    paths = sorted(
        os.path.join(directory, f)
        for f in os.listdir(directory)
        if f.endswith(SEQUENCE_SUFFIX)
    )
    if not paths:
        raise FileNotFoundError(f"no {SEQUENCE_SUFFIX} files in {directory}")
    return [load_sequence(p) for p in paths]


def label_vocabulary(sequences: list[SkeletonSequence]) -> list[str]:
    """Sorted unique labels across a dataset (deterministic class ids)."""
    seen = set()
    for seq in sequences:
        if seq.labels is None:
            raise ValueError(f"sequence {seq.name!r} has no labels")
        seen.update(seq.labels)
    return sorted(seen)


# ---- synthetic data ---------------------------------------------------------

JOINT_NAMES_13 = (
    "r_ankle", "l_ankle", "r_knee", "l_knee", "r_hip", "l_hip",
    "r_wrist", "l_wrist", "r_elbow", "l_elbow", "r_shoulder", "l_shoulder",
    "head",
)

_BASE_POSE = np.array(
    [
        [-0.15, 0.00, 0.0],  # r_ankle
        [0.15, 0.00, 0.0],   # l_ankle
        [-0.15, 0.45, 0.0],  # r_knee
        [0.15, 0.45, 0.0],   # l_knee
        [-0.15, 0.90, 0.0],  # r_hip
        [0.15, 0.90, 0.0],   # l_hip
        [-0.25, 0.90, 0.0],  # r_wrist
        [0.25, 0.90, 0.0],   # l_wrist
        [-0.25, 1.17, 0.0],  # r_elbow
        [0.25, 1.17, 0.0],   # l_elbow
        [-0.20, 1.45, 0.0],  # r_shoulder
        [0.20, 1.45, 0.0],   # l_shoulder
        [0.00, 1.65, 0.0],   # head
    ]
)

DEFAULT_CLASS_NAMES = (
    "stand",
    "box-bend-pick-up-low",
    "walk",
    "box-stand-place-medium",
    "rod-walk-hold-high",
    "reach",
)


def synth_class_names(classes: int) -> list[str]:
    names = list(DEFAULT_CLASS_NAMES[:classes])
    names += [f"act{k:02d}" for k in range(len(names), classes)]
    return names


def _motif_frame(k: int, classes: int, t: int, rate: float) -> np.ndarray:
    """Deterministic pose for class k at frame t.

    The left-wrist height is the designed separator: class k keeps it at
    0.2 + k / max(classes - 1, 1), oscillating by +-0.04, so at zero noise
    one coordinate threshold splits any two classes.  Odd classes also
    bend the trunk forward so ergonomic scores vary by action.
    """
    pose = _BASE_POSE.copy()
    gap = 1.0 / max(classes - 1, 1)
    phase = 2.0 * np.pi * (0.5 + 0.25 * k) * t / rate
    height = 0.2 + k * gap + 0.04 * np.sin(phase)
    reach = 0.15 + 0.1 * np.sin(phase + 0.7)
    if k % 2 == 1:
        theta = np.deg2rad(25.0 + 5.0 * np.sin(phase))
        mid_hip = pose[4:6].mean(axis=0)
        rot = np.array(
            [
                [1.0, 0.0, 0.0],
                [0.0, np.cos(theta), -np.sin(theta)],
                [0.0, np.sin(theta), np.cos(theta)],
            ]
        )
        for j in (10, 11, 12):
            pose[j] = (pose[j] - mid_hip) @ rot.T + mid_hip
    for wrist, sign in ((6, -1.0), (7, 1.0)):
        pose[wrist] = [sign * 0.25, height, reach]
    pose[8] = (pose[10] + pose[6]) / 2.0 + [-0.03, 0.0, 0.05]
    pose[9] = (pose[11] + pose[7]) / 2.0 + [0.03, 0.0, 0.05]
    return pose


def synthesize_sequence(
    rng: np.random.Generator,
    classes: int,
    noise: float,
    min_segments: int = 2,
    max_segments: int = 5,
    min_len: int = 30,
    max_len: int = 60,
    rate: float = 30.0,
    image_features: bool = False,
    name: str = "synthetic",
) -> SkeletonSequence:
    """One multi-action sequence with known per-frame labels."""
    names = synth_class_names(classes)
    n_segments = int(rng.integers(min_segments, max_segments + 1))
    ks: list[int] = []
    for _ in range(n_segments):
        k = int(rng.integers(classes))
        while ks and k == ks[-1] and classes > 1:
            k = int(rng.integers(classes))
        ks.append(k)
    frames = []
    labels = []
    feats = []
    t = 0
    for k in ks:
        seg_len = int(rng.integers(min_len, max_len + 1))
        for _ in range(seg_len):
            frames.append(_motif_frame(k, classes, t, rate))
            labels.append(names[k])
            if image_features:
                one_hot = np.zeros(classes)
                one_hot[k] = 1.0
                feats.append(one_hot + rng.normal(0.0, 0.25, classes))
            t += 1
    joints = np.stack(frames)
    if noise > 0:
        joints = joints + rng.normal(0.0, noise, joints.shape)
    return SkeletonSequence(
        joints=joints,
        labels=labels,
        image_features=np.stack(feats) if feats else None,
        joint_names=JOINT_NAMES_13,
        frame_rate=rate,
        coords="y-up",
        name=name,
    )


def synthesize_dataset(
    classes: int,
    sequences: int,
    noise: float,
    seed: int,
    image_features: bool = False,
    **kwargs,
) -> list[SkeletonSequence]:
    """Deterministic multi-action dataset; same seed, same bytes."""
    if classes < 1 or sequences < 1:
        raise ValueError("need at least one class and one sequence")
    rng = np.random.default_rng(seed)
    return [
        synthesize_sequence(
            rng, classes, noise, image_features=image_features,
            name=f"synthetic{i:03d}", **kwargs,
        )
        for i in range(sequences)
    ]
