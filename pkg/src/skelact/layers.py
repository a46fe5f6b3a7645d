"""Differentiable layers: graph convolution, group pooling, pyramid pieces,
the LSTM head, and the image-feature fusion gate.

Feature layout is (batch, channels, nodes, frames) everywhere spatial;
every op is frame-local except the LSTM, which is causal.  Graph
convolution applies symmetric degree normalization to each masked
partition inside the forward pass, so gradients flow through the learned
edge-importance masks and into the normalization itself.
"""

from __future__ import annotations

import numpy as np

from . import kernels
from .graph import PartitionedAdjacency
from .tensor import (
    Tensor,
    inv_sqrt_or_zero,
    matmul,
    multiply,
    relu,
    reshape,
    sigmoid,
    sum_over_axis,
    transpose,
)


def uniform_init(rng: np.random.Generator, shape: tuple[int, ...], fan_in: int) -> np.ndarray:
    """Uniform weights scaled by fan-in: U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class GcnLayer:
    """One spatial graph convolution over a partitioned adjacency.

    Carries one channel-mixing weight per partition plus one edge-importance
    mask per partition.  Masks start at all ones; they are trainable only
    when `importance` is set, but the forward computation is identical
    either way (an all-ones mask is a no-op bit for bit).  No bias.
    """

    def __init__(
        self,
        partitions: PartitionedAdjacency,
        in_channels: int,
        out_channels: int,
        rng: np.random.Generator,
        importance: bool = True,
    ):
        self.partitions = partitions
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.raw = [Tensor(m) for m in partitions.matrices]
        self.weights = [
            Tensor(uniform_init(rng, (in_channels, out_channels), in_channels), requires_grad=True)
            for _ in partitions.matrices
        ]
        self.masks = [
            Tensor(np.ones_like(m), requires_grad=importance) for m in partitions.matrices
        ]

    def params(self) -> dict[str, Tensor]:
        out = {f"w{k}": w for k, w in enumerate(self.weights)}
        if self.masks and self.masks[0].requires_grad:
            out.update({f"mask{k}": m for k, m in enumerate(self.masks)})
        return out


def _normalize(masked: Tensor) -> Tensor:
    """Symmetric degree normalization of a masked partition, on the tape."""
    n = masked.shape[0]
    deg = sum_over_axis(masked, axis=1)
    inv = inv_sqrt_or_zero(deg)
    col = reshape(inv, (n, 1))
    row = reshape(inv, (1, n))
    return multiply(multiply(masked, col), row)


def _mix_channels(x: Tensor, w: Tensor) -> Tensor:
    """Apply a (Cin, Cout) matrix along the channel axis of (B, C, N, T)."""
    moved = transpose(x, (0, 2, 3, 1))
    mixed = matmul(moved, w)
    return transpose(mixed, (0, 3, 1, 2))


def gcn_forward(x: Tensor, layer: GcnLayer) -> Tensor:
    """Sum over partitions of norm(A_a * M_a) . X^T . W_a, per frame.

    `x` is (B, Cin, N, T); the result is (B, Cout, N, T).  Linear in `x`
    for fixed weights.
    """
    if x.shape[1] != layer.in_channels:
        raise ValueError(f"expected {layer.in_channels} channels, got {x.shape[1]}")
    if x.shape[2] != layer.partitions.node_count:
        raise ValueError(
            f"expected {layer.partitions.node_count} nodes, got {x.shape[2]}"
        )
    out = None
    for raw, mask, w in zip(layer.raw, layer.masks, layer.weights):
        norm = _normalize(multiply(raw, mask))
        gathered = matmul(norm, x)
        term = _mix_channels(gathered, w)
        out = term if out is None else out + term
    return out


class GapLayer:
    """Group average pooling through a binary membership matrix.

    The mean is computed in compensated form, ref + sum(x - ref)/size,
    where ref is the group's first member.  Algebraically it is the plain
    mean; numerically it makes pooling a group-constant signal return that
    constant bit-exactly (the deviations are exact zeros), which keeps the
    pool/upsample duality an identity rather than an approximation.
    """

    def __init__(self, membership: np.ndarray):
        membership = np.asarray(membership, dtype=np.float64)
        sizes = membership.sum(axis=1, keepdims=True)
        if (sizes == 0).any():
            raise ValueError("every group needs at least one member")
        selector = np.zeros_like(membership)
        for g in range(membership.shape[0]):
            selector[g, np.flatnonzero(membership[g])[0]] = 1.0
        self.membership = membership
        self.binary = Tensor(membership)
        self.selector = Tensor(selector)
        self.lift = Tensor(membership.T.copy())
        self.inv_sizes = Tensor(1.0 / sizes)

    def group_count(self) -> int:
        return self.membership.shape[0]


def gap_forward(x: Tensor, layer: GapLayer) -> Tensor:
    """Mean of member-node features per group: (B, C, N, T) -> (B, C, G, T)."""
    ref = matmul(layer.selector, x)
    deviation = x - matmul(layer.lift, ref)
    return ref + multiply(matmul(layer.binary, deviation), layer.inv_sizes)


def upsample_add(fine: Tensor, coarse: Tensor, layer: GapLayer) -> Tensor:
    """Copy each group feature back to its members and add to `fine`."""
    return fine + matmul(layer.lift, coarse)


class LateralConv:
    """1x1 convolution (per-node, per-frame channel mix) with bias."""

    def __init__(self, in_channels: int, out_channels: int, rng: np.random.Generator):
        self.w = Tensor(uniform_init(rng, (in_channels, out_channels), in_channels), requires_grad=True)
        self.b = Tensor(np.zeros(out_channels), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}


def lateral_forward(x: Tensor, layer: LateralConv) -> Tensor:
    moved = transpose(x, (0, 2, 3, 1))
    mixed = matmul(moved, layer.w) + layer.b
    return transpose(mixed, (0, 3, 1, 2))


class LstmCell:
    """Standard LSTM cell parameters with combined gate matrices.

    Gate blocks along the 4H axis are [input, forget, candidate, output].
    Weights use fan-in scaled uniform init; biases start at zero except the
    forget block, which starts at one.
    """

    def __init__(self, input_size: int, hidden_size: int, rng: np.random.Generator):
        self.input_size = input_size
        self.hidden_size = hidden_size
        self.wx = Tensor(
            uniform_init(rng, (input_size, 4 * hidden_size), input_size), requires_grad=True
        )
        self.wh = Tensor(
            uniform_init(rng, (hidden_size, 4 * hidden_size), hidden_size), requires_grad=True
        )
        bias = np.zeros(4 * hidden_size)
        bias[hidden_size : 2 * hidden_size] = 1.0
        self.b = Tensor(bias, requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {"wx": self.wx, "wh": self.wh, "b": self.b}


def _lstm_op(x_tbf: Tensor, cell: LstmCell, h0: np.ndarray, c0: np.ndarray) -> Tensor:
    """Fused LSTM over (T, B, F); hand-derived backward through time."""
    x_data = np.ascontiguousarray(x_tbf.data)
    wx, wh, b = cell.wx, cell.wh, cell.b
    h, c, gates = kernels.lstm_forward(x_data, wx.data, wh.data, b.data, h0, c0)

    def grad_fn(g):
        dh_out = np.ascontiguousarray(g)
        dx, dwx, dwh, db = kernels.lstm_backward(
            x_data, wx.data, wh.data, h, c, gates, h0, c0, dh_out
        )
        return dx, dwx, dwh, db

    return Tensor._op(h, (x_tbf, wx, wh, b), grad_fn)


def lstm_forward(sequence: Tensor, cell: LstmCell, initial=None) -> Tensor:
    """Run the LSTM along the frame axis.

    `sequence` is (B, F, T) or (F, T); the result keeps that layout with F
    replaced by the hidden size.  `initial` is an optional (h0, c0) pair of
    (B, H) arrays; both default to zeros.  Hidden state at frame t depends
    only on frames <= t.
    """
    single = sequence.ndim == 2
    if single:
        sequence = reshape(sequence, (1,) + sequence.shape)
    batch = sequence.shape[0]
    if sequence.shape[1] != cell.input_size:
        raise ValueError(f"expected {cell.input_size} features, got {sequence.shape[1]}")
    hidden = cell.hidden_size
    if initial is None:
        h0 = np.zeros((batch, hidden))
        c0 = np.zeros((batch, hidden))
    else:
        h0, c0 = (np.asarray(s, dtype=np.float64) for s in initial)
    x_tbf = transpose(sequence, (2, 0, 1))
    h = _lstm_op(x_tbf, cell, h0, c0)
    out = transpose(h, (1, 2, 0))
    if single:
        out = reshape(out, out.shape[1:])
    return out


class FusionGate:
    """Convex gate blending projected image and skeleton features.

    I_t = relu(U_i i_t), S_t = relu(U_z z_t), p_t = sigmoid(W_i I_t + W_s S_t),
    O_t = p_t * I_t + (1 - p_t) * S_t.  No biases.
    """

    def __init__(self, image_size: int, skeleton_size: int, out_size: int, rng: np.random.Generator):
        self.image_size = image_size
        self.skeleton_size = skeleton_size
        self.out_size = out_size
        self.ui = Tensor(uniform_init(rng, (image_size, out_size), image_size), requires_grad=True)
        self.uz = Tensor(uniform_init(rng, (skeleton_size, out_size), skeleton_size), requires_grad=True)
        self.wi = Tensor(uniform_init(rng, (out_size, out_size), out_size), requires_grad=True)
        self.ws = Tensor(uniform_init(rng, (out_size, out_size), out_size), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {"ui": self.ui, "uz": self.uz, "wi": self.wi, "ws": self.ws}


def fusion_forward(image: Tensor, skeleton: Tensor, gate: FusionGate) -> Tensor:
    """Blend per-frame image and skeleton features.

    Inputs are (B, D_img, T) and (B, D_skel, T) (or unbatched 2-D); output
    is (B, D_out, T).  The gate is elementwise in (0, 1), so the output
    lies strictly inside the segment between the two projected streams.
    """
    single = image.ndim == 2
    if single:
        image = reshape(image, (1,) + image.shape)
        skeleton = reshape(skeleton, (1,) + skeleton.shape)
    img = transpose(image, (0, 2, 1))
    skel = transpose(skeleton, (0, 2, 1))
    i_proj = relu(matmul(img, gate.ui))
    s_proj = relu(matmul(skel, gate.uz))
    p = sigmoid(matmul(i_proj, gate.wi) + matmul(s_proj, gate.ws))
    out = p * i_proj + (1.0 - p) * s_proj
    out = transpose(out, (0, 2, 1))
    if single:
        out = reshape(out, out.shape[1:])
    return out


class Linear:
    """Frame-wise affine map used as the per-level classifier."""

    def __init__(self, in_size: int, out_size: int, rng: np.random.Generator):
        self.w = Tensor(uniform_init(rng, (in_size, out_size), in_size), requires_grad=True)
        self.b = Tensor(np.zeros(out_size), requires_grad=True)

    def params(self) -> dict[str, Tensor]:
        return {"w": self.w, "b": self.b}

    def __call__(self, x: Tensor) -> Tensor:
        return matmul(x, self.w) + self.b
