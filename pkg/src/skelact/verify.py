"""Finite-difference verification of every differentiable component.

Each registered component builds a small seeded instance of one layer (or
the whole toy model), wraps it in a scalar loss, and compares analytic
gradients against central differences over every parameter coordinate —
including the inputs, so the data path is checked as well as the weights.
The registry is injectable so a test can register a deliberately broken
gradient rule and confirm the suite reports it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph import PartSpec, SkeletonTopology, build_hierarchy
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
    upsample_add,
)
from .model import ModelConfig, PgnModel, compute_loss
from .tensor import FdReport, Tensor, finite_difference_check, mean_over_axis, softmax_cross_entropy


def toy_hierarchy():
    """5-joint path skeleton with two parts and two groups; small enough
    that exhaustive finite differences stay fast."""
    topology = SkeletonTopology(
        joint_count=5,
        edges=((0, 1), (1, 2), (2, 3), (3, 4)),
        center_joint=2,
    )
    spec = PartSpec(
        joint_to_part={0: "low", 1: "low", 2: "low", 3: "high", 4: "high"},
        part_to_group={"low": "base", "high": "top"},
        part_order=["low", "high"],
        group_order=["base", "top"],
    )
    return build_hierarchy(topology, spec)


def _squared(out: Tensor) -> Tensor:
    # mean keeps the probe loss at unit scale regardless of output size, so
    # finite-difference cancellation noise stays far below the error floor
    flat = out.reshape((-1,))
    return mean_over_axis(flat * flat, 0)


# ---- component builders --------------------------------------------------------
# each returns (fn, params): fn is a closure over the params producing a scalar


def _build_gcn(rng):
    hierarchy = toy_hierarchy()
    layer = GcnLayer(hierarchy.level1, 2, 3, rng, importance=True)
    x = Tensor(rng.normal(size=(2, 2, 5, 3)), requires_grad=True)
    params = {"x": x, **layer.params()}
    return lambda: _squared(gcn_forward(x, layer)), params


def _build_gap(rng):
    hierarchy = toy_hierarchy()
    layer = GapLayer(hierarchy.j1)
    x = Tensor(rng.normal(size=(2, 3, 5, 2)), requires_grad=True)
    return lambda: _squared(gap_forward(x, layer)), {"x": x}


def _build_lateral(rng):
    layer = LateralConv(3, 4, rng)
    x = Tensor(rng.normal(size=(2, 3, 2, 3)), requires_grad=True)
    params = {"x": x, **layer.params()}
    return lambda: _squared(lateral_forward(x, layer)), params


def _build_upsample(rng):
    hierarchy = toy_hierarchy()
    layer = GapLayer(hierarchy.j1)
    fine = Tensor(rng.normal(size=(2, 3, 5, 2)), requires_grad=True)
    coarse = Tensor(rng.normal(size=(2, 3, 2, 2)), requires_grad=True)
    return lambda: _squared(upsample_add(fine, coarse, layer)), {"fine": fine, "coarse": coarse}


def _build_lstm(rng):
    cell = LstmCell(3, 4, rng)
    x = Tensor(rng.normal(size=(2, 3, 5)), requires_grad=True)
    params = {"x": x, **cell.params()}
    return lambda: _squared(lstm_forward(x, cell)), params


def _build_fusion(rng):
    gate = FusionGate(3, 4, 3, rng)
    image = Tensor(rng.normal(size=(2, 3, 4)), requires_grad=True)
    skel = Tensor(rng.normal(size=(2, 4, 4)), requires_grad=True)
    params = {"image": image, "skeleton": skel, **gate.params()}
    return lambda: _squared(fusion_forward(image, skel, gate)), params


def _build_classifier(rng):
    fc = Linear(4, 3, rng)
    x = Tensor(rng.normal(size=(2, 5, 4)), requires_grad=True)
    params = {"x": x, **fc.params()}
    return lambda: _squared(fc(x)), params


def _build_cross_entropy(rng):
    logits = Tensor(rng.normal(size=(2, 4, 3)), requires_grad=True)
    labels = rng.integers(0, 3, size=(2, 4))
    mask = np.ones((2, 4))
    mask[1, 3] = 0.0  # padding must receive zero gradient
    return lambda: softmax_cross_entropy(logits, labels, mask), {"logits": logits}


def _build_end_to_end(rng):
    hierarchy = toy_hierarchy()
    config = ModelConfig(class_count=3, channels=(3, 4, 5), hidden_size=4, levels=3)
    model = PgnModel(hierarchy, config, seed=int(rng.integers(2**31)))
    x = Tensor(rng.normal(size=(2, 3, 5, 4)), requires_grad=True)
    labels = rng.integers(0, 3, size=(2, 4))
    mask = np.ones((2, 4))
    mask[0, 3] = 0.0
    params = {"x": x, **model.params()}

    def fn():
        return compute_loss(model.forward(x), labels, mask, multi_loss=True)

    return fn, params


COMPONENTS = {
    "gcn": _build_gcn,
    "gap_pool": _build_gap,
    "lateral_conv": _build_lateral,
    "upsample_add": _build_upsample,
    "lstm": _build_lstm,
    "fusion_gate": _build_fusion,
    "classifier": _build_classifier,
    "cross_entropy": _build_cross_entropy,
    "end_to_end": _build_end_to_end,
}


@dataclass
class ComponentResult:
    name: str
    report: FdReport
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.report.max_rel_error < self.tolerance

    def line(self) -> str:
        status = "ok" if self.passed else "FAIL"
        return f"{self.name:<16} max rel err {self.report.max_rel_error:.3e}  [{status}]"


def gradcheck_suite(
    seed: int = 0,
    tolerance: float = 1e-4,
    registry: dict | None = None,
    epsilon: float = 1e-5,
) -> list[ComponentResult]:
    """Run finite differences over every registered component."""
    registry = COMPONENTS if registry is None else registry
    results = []
    for i, (name, builder) in enumerate(registry.items()):
        rng = np.random.default_rng([seed, i])
        fn, params = builder(rng)
        report = finite_difference_check(fn, params, epsilon=epsilon)
        results.append(ComponentResult(name=name, report=report, tolerance=tolerance))
    return results
