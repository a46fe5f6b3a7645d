"""The three-level pyramid graph network and its checkpoint format.

Bottom-up, each level runs a graph convolution then pools into the next
coarser graph (joints -> parts -> three body groups).  Top-down, 1x1
lateral projections are summed with upsampled coarser features, FPN-style;
the coarsest level passes through unprojected.  Every level feeds its own
LSTM + linear classifier, and per-frame class probabilities from the three
heads are averaged for prediction.  An optional fusion gate blends
per-frame image features into the finest level before its head.

Checkpoints are a small versioned binary container: magic, format version,
a JSON config block with its SHA-256 digest, the init seed, named float64
parameter blobs (little-endian), and a trailing SHA-256 checksum.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import tensor as tp
from .graph import Hierarchy, PartSpec, SkeletonTopology, build_hierarchy
from .layers import (
    FusionGate,
    GapLayer,
    GcnLayer,
    LateralConv,
    Linear,
    LstmCell,
    fusion_forward,
    gap_forward,
    gcn_forward,
    lateral_forward,
    lstm_forward,
    relu,
    upsample_add,
)
from .tensor import Tensor, no_grad

CHECKPOINT_MAGIC = b"SKELACT\x00"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    """Architecture switches; defaults follow the reference setup."""

    class_count: int
    labels: list[str] = field(default_factory=list)
    channels: tuple[int, int, int] = (64, 128, 256)
    hidden_size: int = 256
    levels: int = 3
    edge_importance: bool = True
    fusion: bool = False
    image_feature_size: int = 0
    fusion_size: int = 256

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if self.levels not in (1, 3):
            raise ValueError("levels must be 1 (plain baseline) or 3 (pyramid)")
        if self.class_count < 2:
            raise ValueError("need at least two classes")
        if self.fusion and self.image_feature_size < 1:
            raise ValueError("fusion requires a positive image_feature_size")
        if self.labels and len(self.labels) != self.class_count:
            raise ValueError("label vocabulary must match class_count")


@dataclass
class WindowBatch:
    """A batch of fixed-length windows with padding masks.

    `inputs` is (B, 3, N, T); `labels` (B, T) int; `mask` (B, T) with 1 for
    real frames and 0 for zero-padding; `image` optionally (B, D, T).
    `origin` records (sequence_index, start_frame) per window for
    stitching predictions back onto sequences.
    """

    inputs: np.ndarray
    labels: np.ndarray
    mask: np.ndarray
    image: np.ndarray | None = None
    origin: list[tuple[int, int]] = field(default_factory=list)

    def __post_init__(self):
        b, c, _, t = self.inputs.shape
        if c != 3:
            raise ValueError("window inputs must carry 3 coordinate channels")
        if self.labels.shape != (b, t) or self.mask.shape != (b, t):
            raise ValueError("labels/mask must be (batch, frames)")


class PgnModel:
    """Pyramid graph network over a body hierarchy."""

    def __init__(self, hierarchy: Hierarchy, config: ModelConfig, seed: int = 0):
        self.hierarchy = hierarchy
        self.config = config
        self.seed = int(seed)
        rng = np.random.default_rng(self.seed)
        c1, c2, c3 = config.channels
        n, p, g = hierarchy.node_counts
        imp = config.edge_importance
        self.gcn1 = GcnLayer(hierarchy.level1, 3, c1, rng, importance=imp)
        self.gap1 = GapLayer(hierarchy.j1)
        self.gap2 = GapLayer(hierarchy.j2)
        if config.levels == 3:
            self.gcn2 = GcnLayer(hierarchy.level2, c1, c2, rng, importance=imp)
            self.gcn3 = GcnLayer(hierarchy.level3, c2, c3, rng, importance=imp)
            self.lateral1 = LateralConv(c1, c3, rng)
            self.lateral2 = LateralConv(c2, c3, rng)
            head_widths = [c3 * n, c3 * p, c3 * g]
        else:
            self.gcn2 = self.gcn3 = None
            self.lateral1 = self.lateral2 = None
            head_widths = [c1 * n]
        self.fusion_gate = None
        if config.fusion:
            self.fusion_gate = FusionGate(
                config.image_feature_size, head_widths[0], config.fusion_size, rng
            )
            head_widths[0] = config.fusion_size
        self.heads = []
        for width in head_widths:
            cell = LstmCell(width, config.hidden_size, rng)
            fc = Linear(config.hidden_size, config.class_count, rng)
            self.heads.append((cell, fc))

    # ---- parameters ----------------------------------------------------

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for name, layer in (("gcn1", self.gcn1), ("gcn2", self.gcn2), ("gcn3", self.gcn3)):
            if layer is not None:
                for k, v in layer.params().items():
                    out[f"{name}.{k}"] = v
        for name, layer in (("lateral1", self.lateral1), ("lateral2", self.lateral2)):
            if layer is not None:
                for k, v in layer.params().items():
                    out[f"{name}.{k}"] = v
        for idx, (cell, fc) in enumerate(self.heads, start=1):
            for k, v in cell.params().items():
                out[f"head{idx}.lstm.{k}"] = v
            for k, v in fc.params().items():
                out[f"head{idx}.fc.{k}"] = v
        if self.fusion_gate is not None:
            for k, v in self.fusion_gate.params().items():
                out[f"fusion.{k}"] = v
        return out

    def trainable_params(self, fusion_finetune: bool = False) -> dict[str, Tensor]:
        """All params, or only the fusion gate plus the finest head.

        Fine-tuning with fusion freezes the pretrained pyramid and trains
        the gate together with the final (level-1) LSTM and classifier.
        """
        all_params = self.params()
        if not fusion_finetune:
            return all_params
        return {
            k: v
            for k, v in all_params.items()
            if k.startswith("fusion.") or k.startswith("head1.")
        }

    # ---- forward --------------------------------------------------------

    def _features(self, x: Tensor) -> tuple[list[Tensor], list[Tensor]]:
        n = self.hierarchy.node_counts[0]
        if x.ndim != 4 or x.shape[1] != 3 or x.shape[2] != n:
            raise ValueError(f"expected input (B, 3, {n}, T), got {x.shape}")
        f1 = relu(gcn_forward(x, self.gcn1))
        if self.config.levels == 1:
            return [f1], [f1]
        x1 = gap_forward(f1, self.gap1)
        f2 = relu(gcn_forward(x1, self.gcn2))
        x2 = gap_forward(f2, self.gap2)
        f3 = relu(gcn_forward(x2, self.gcn3))
        p1 = lateral_forward(f1, self.lateral1)
        p2 = lateral_forward(f2, self.lateral2)
        z3 = f3
        z2 = upsample_add(p2, z3, self.gap2)
        z1 = upsample_add(p1, z2, self.gap1)
        return [f1, f2, f3], [z1, z2, z3]

    def level_features(self, x: Tensor) -> list[Tensor]:
        """Raw per-level convolution outputs f_k: (B, C_k, nodes_k, T)."""
        return self._features(x)[0]

    def pyramid_features(self, x: Tensor) -> list[Tensor]:
        """Fused pyramid features z_k, all with the coarsest channel width."""
        return self._features(x)[1]

    def forward(self, x: Tensor, image: Tensor | None = None) -> list[Tensor]:
        """Per-level frame logits, each (B, T, classes), finest first."""
        levels = self._features(x)[1]
        batch, _, _, frames = x.shape
        logits = []
        for idx, ((cell, fc), z) in enumerate(zip(self.heads, levels)):
            flat = tp.reshape(z, (batch, z.shape[1] * z.shape[2], frames))
            if idx == 0 and self.fusion_gate is not None:
                if image is None:
                    raise ValueError("fusion is enabled but no image features were given")
                if image.shape != (batch, self.config.image_feature_size, frames):
                    raise ValueError(
                        f"image features must be (B, {self.config.image_feature_size}, T)"
                    )
                flat = fusion_forward(image, flat, self.fusion_gate)
            h = lstm_forward(flat, cell)
            logits.append(fc(tp.transpose(h, (0, 2, 1))))
        return logits

    def predict(self, x: np.ndarray, image: np.ndarray | None = None):
        """Average per-level softmax probabilities and take the argmax.

        Returns (labels (B, T) int, probs (B, T, classes)).  Exact ties
        resolve to the lowest class index.
        """
        with no_grad():
            logits = self.forward(
                Tensor(x), None if image is None else Tensor(image)
            )
        probs = np.mean([_softmax_np(l.data) for l in logits], axis=0)
        return probs.argmax(axis=-1), probs


def _softmax_np(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def compute_loss(
    logits_list: list[Tensor],
    labels: np.ndarray,
    mask: np.ndarray,
    multi_loss: bool = True,
) -> Tensor:
    """Frame-averaged training loss over a window batch.

    multi_loss=True: mean over levels of each level's frame-averaged
    cross-entropy.  multi_loss=False: cross-entropy of the log of the
    level-averaged softmax probability.  Masked (padded) frames contribute
    neither loss nor gradient.
    """
    k = len(logits_list)
    if multi_loss:
        total = None
        for logits in logits_list:
            ce = tp.softmax_cross_entropy(logits, labels, mask)
            total = ce if total is None else total + ce
        return total * (1.0 / k)
    mean_probs = None
    for logits in logits_list:
        p = tp.softmax(logits, axis=-1)
        mean_probs = p if mean_probs is None else mean_probs + p
    mean_probs = mean_probs * (1.0 / k)
    classes = logits_list[0].shape[-1]
    onehot = np.eye(classes)[np.asarray(labels, dtype=np.int64)]
    picked = tp.sum_over_axis(mean_probs * Tensor(onehot), axis=-1)
    w = np.asarray(mask, dtype=np.float64)
    denom = float(w.sum())
    if denom <= 0:
        raise ValueError("loss needs at least one unmasked frame")
    weighted = tp.log(picked) * Tensor(w)
    total = tp.sum_over_axis(tp.sum_over_axis(weighted, axis=1), axis=0)
    return total * (-1.0 / denom)


# ---- checkpoint container --------------------------------------------------


def _config_payload(model: PgnModel) -> dict:
    h = model.hierarchy
    topo = h.topology
    cfg = asdict(model.config)
    cfg["channels"] = list(model.config.channels)
    return {
        "model": cfg,
        "topology": {
            "joint_count": topo.joint_count,
            "edges": [list(e) for e in topo.edges],
            "center_joint": topo.center_joint,
            "joint_names": list(topo.joint_names) if topo.joint_names else None,
        },
        "parts": {
            "joint_to_part": {str(j): p for j, p in sorted(_joint_map(h).items())},
            "part_to_group": {p: g for p, g in zip(h.part_names, _part_groups(h))},
            "part_order": list(h.part_names),
            "group_order": list(h.group_names),
        },
    }


def _joint_map(h: Hierarchy) -> dict[int, str]:
    out = {}
    for p_idx, p_name in enumerate(h.part_names):
        for j in np.flatnonzero(h.j1[p_idx]):
            out[int(j)] = p_name
    return out


def _part_groups(h: Hierarchy) -> list[str]:
    out = []
    for p_idx in range(len(h.part_names)):
        g_idx = int(np.flatnonzero(h.j2[:, p_idx])[0])
        out.append(h.group_names[g_idx])
    return out


def hierarchy_from_payload(payload: dict) -> Hierarchy:
    topo_d = payload["topology"]
    topology = SkeletonTopology(
        joint_count=topo_d["joint_count"],
        edges=tuple(tuple(e) for e in topo_d["edges"]),
        center_joint=topo_d["center_joint"],
        joint_names=tuple(topo_d["joint_names"]) if topo_d.get("joint_names") else None,
    )
    parts_d = payload["parts"]
    spec = PartSpec(
        joint_to_part={int(j): p for j, p in parts_d["joint_to_part"].items()},
        part_to_group=dict(parts_d["part_to_group"]),
        part_order=list(parts_d["part_order"]),
        group_order=list(parts_d["group_order"]),
    )
    return build_hierarchy(topology, spec)


class CheckpointError(ValueError):
    """Raised when a checkpoint file is malformed or inconsistent."""


def checkpoint_bytes(model: PgnModel) -> bytes:
    """Serialize config digest, seed, and named float64 parameter blobs."""
    payload = json.dumps(_config_payload(model), sort_keys=True).encode("utf-8")
    digest = hashlib.sha256(payload).digest()
    parts = [
        CHECKPOINT_MAGIC,
        struct.pack("<I", CHECKPOINT_VERSION),
        struct.pack("<I", len(payload)),
        payload,
        digest,
        struct.pack("<Q", model.seed),
    ]
    params = model.params()
    parts.append(struct.pack("<I", len(params)))
    for name, p in params.items():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", p.data.ndim))
        for dim in p.data.shape:
            parts.append(struct.pack("<I", dim))
        parts.append(np.ascontiguousarray(p.data, dtype="<f8").tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()


def save_checkpoint(model: PgnModel, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(model))


def load_checkpoint(path: str, expect: dict | None = None) -> PgnModel:
    """Rebuild a model bit-exactly from a checkpoint file.

    `expect`, when given, is compared against the stored model config; any
    mismatched key raises CheckpointError naming it.  Truncated or
    corrupted files fail the trailing checksum (or the magic/version
    checks) rather than loading garbage.
    """
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < len(CHECKPOINT_MAGIC) + 40:
        raise CheckpointError("checkpoint file is truncated")
    body, checksum = blob[:-32], blob[-32:]
    if hashlib.sha256(body).digest() != checksum:
        raise CheckpointError("checkpoint checksum mismatch (truncated or corrupted file)")
    off = 0

    def take(n: int) -> bytes:
        nonlocal off
        if off + n > len(body):
            raise CheckpointError("checkpoint file is truncated")
        out = body[off : off + n]
        off += n
        return out

    if take(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", take(4))
    if version != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")
    (payload_len,) = struct.unpack("<I", take(4))
    payload = take(payload_len)
    digest = take(32)
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError("config digest mismatch")
    config_d = json.loads(payload.decode("utf-8"))
    (seed,) = struct.unpack("<Q", take(8))
    model_cfg = dict(config_d["model"])
    if expect:
        for key, want in expect.items():
            have = model_cfg.get(key)
            if isinstance(have, list):
                have = tuple(have)
            if isinstance(want, list):
                want = tuple(want)
            if have != want:
                raise CheckpointError(
                    f"checkpoint flag mismatch for {key!r}: file has {have!r}, expected {want!r}"
                )
    model_cfg["channels"] = tuple(model_cfg["channels"])
    config = ModelConfig(**model_cfg)
    hierarchy = hierarchy_from_payload(config_d)
    model = PgnModel(hierarchy, config, seed=seed)
    params = model.params()
    (count,) = struct.unpack("<I", take(4))
    if count != len(params):
        raise CheckpointError(
            f"checkpoint carries {count} parameters, model expects {len(params)}"
        )
    for _ in range(count):
        (name_len,) = struct.unpack("<H", take(2))
        name = take(name_len).decode("utf-8")
        (ndim,) = struct.unpack("<B", take(1))
        shape = tuple(struct.unpack("<I", take(4))[0] for _ in range(ndim))
        size = int(np.prod(shape, dtype=np.int64)) if shape else 1
        raw = take(8 * size)
        if name not in params:
            raise CheckpointError(f"unknown parameter {name!r} in checkpoint")
        target = params[name]
        if target.data.shape != shape:
            raise CheckpointError(
                f"parameter {name!r} has shape {shape}, model expects {target.data.shape}"
            )
        target.data[...] = np.frombuffer(raw, dtype="<f8").reshape(shape)
    if off != len(body):
        raise CheckpointError("trailing bytes after final parameter blob")
    return model
