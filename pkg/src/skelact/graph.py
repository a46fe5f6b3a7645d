"""Skeleton graph topology, spatial partitioning, and the body hierarchy.

A skeleton is an undirected graph over joints.  For graph convolution the
adjacency (with self-loops) is split into three subsets by hop distance to
a designated center joint — self/equidistant, centripetal (neighbor closer
to the center), centrifugal (neighbor farther) — and each subset is
symmetrically degree-normalized.  Joints pool into parts and parts into
global body groups (three for the standing human default), described by
binary membership matrices.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

PARTITION_NAMES = ("root", "centripetal", "centrifugal")


class GraphError(ValueError):
    """Raised for malformed topologies, part specs, or hierarchies."""


@dataclass(frozen=True)
class SkeletonTopology:
    """Undirected joint graph with a designated center joint.

    `edges` are canonicalized to sorted unique (i, j) pairs with i < j.
    Self-loops are rejected here; the convolution adds them explicitly.
    Connectivity is not required at construction — partitioning checks it.
    """

    joint_count: int
    edges: tuple[tuple[int, int], ...]
    center_joint: int
    joint_names: tuple[str, ...] | None = None

    def __post_init__(self):
        if self.joint_count < 1:
            raise GraphError("joint_count must be positive")
        if not 0 <= self.center_joint < self.joint_count:
            raise GraphError(f"center joint {self.center_joint} out of range")
        canon = set()
        for i, j in self.edges:
            if i == j:
                raise GraphError(f"self-loop on joint {i} not allowed")
            if not (0 <= i < self.joint_count and 0 <= j < self.joint_count):
                raise GraphError(f"edge ({i}, {j}) references a joint out of range")
            canon.add((min(i, j), max(i, j)))
        object.__setattr__(self, "edges", tuple(sorted(canon)))
        if self.joint_names is not None:
            names = tuple(self.joint_names)
            if len(names) != self.joint_count:
                raise GraphError("joint_names length must equal joint_count")
            object.__setattr__(self, "joint_names", names)

    def adjacency(self) -> np.ndarray:
        """Binary symmetric adjacency without self-loops."""
        a = np.zeros((self.joint_count, self.joint_count))
        for i, j in self.edges:
            a[i, j] = 1.0
            a[j, i] = 1.0
        return a

    def hop_distances(self) -> np.ndarray:
        """BFS hop count from the center joint; unreachable joints get -1."""
        n = self.joint_count
        dist = np.full(n, -1, dtype=np.int64)
        dist[self.center_joint] = 0
        a = self.adjacency()
        queue = deque([self.center_joint])
        while queue:
            u = queue.popleft()
            for v in np.flatnonzero(a[u]):
                if dist[v] < 0:
                    dist[v] = dist[u] + 1
                    queue.append(int(v))
        return dist


@dataclass(frozen=True)
class PartitionedAdjacency:
    """Raw (un-normalized) adjacency subsets that sum to A + I."""

    matrices: tuple[np.ndarray, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.matrices) != len(self.names):
            raise GraphError("one name per partition required")

    @property
    def node_count(self) -> int:
        return self.matrices[0].shape[0]

    def total(self) -> np.ndarray:
        return sum(self.matrices)


@dataclass
class EdgeImportance:
    """Per-partition learnable masks, initialized to all ones."""

    masks: list[np.ndarray]

    @classmethod
    def ones_like(cls, partitioned: PartitionedAdjacency) -> "EdgeImportance":
        return cls([np.ones_like(m) for m in partitioned.matrices])


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric normalization D^-1/2 A D^-1/2 with row-sum degrees.

    Rows with zero degree map to zero rather than dividing by zero.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise GraphError("adjacency must be square")
    d = a.sum(axis=1)
    inv = np.zeros_like(d)
    nz = d > 0
    inv[nz] = 1.0 / np.sqrt(d[nz])
    return (a * inv[:, None]) * inv[None, :]


def spatial_partition(topology: SkeletonTopology) -> PartitionedAdjacency:
    """Split A + I into root / centripetal / centrifugal subsets.

    Entry (i, j) lands in the centripetal subset when neighbor j sits
    closer to the center than i, in the centrifugal subset when farther,
    and in the root subset when i == j or the two are equidistant.
    Requires a connected graph; unreachable joints are named in the error.
    """
    dist = topology.hop_distances()
    unreachable = np.flatnonzero(dist < 0)
    if unreachable.size:
        raise GraphError(
            "graph is disconnected; unreachable joints: "
            + ", ".join(str(int(j)) for j in unreachable)
        )
    n = topology.joint_count
    a_hat = topology.adjacency() + np.eye(n)
    root = np.zeros((n, n))
    centripetal = np.zeros((n, n))
    centrifugal = np.zeros((n, n))
    for i in range(n):
        for j in np.flatnonzero(a_hat[i]):
            if dist[j] < dist[i]:
                centripetal[i, j] = 1.0
            elif dist[j] > dist[i]:
                centrifugal[i, j] = 1.0
            else:
                root[i, j] = 1.0
    return PartitionedAdjacency((root, centripetal, centrifugal), PARTITION_NAMES)


def fully_connected(n: int) -> PartitionedAdjacency:
    """Single all-ones partition (self-loops included) over n nodes."""
    return PartitionedAdjacency((np.ones((n, n)),), ("full",))


def apply_edge_importance(
    partitions: PartitionedAdjacency, importance: EdgeImportance
) -> list[np.ndarray]:
    """Elementwise product of each raw partition with its mask."""
    if len(importance.masks) != len(partitions.matrices):
        raise GraphError("mask count must match partition count")
    out = []
    for a, m in zip(partitions.matrices, importance.masks):
        if m.shape != a.shape:
            raise GraphError(f"mask shape {m.shape} does not match partition {a.shape}")
        out.append(a * m)
    return out


# ---- part spec and hierarchy ----------------------------------------------


@dataclass
class PartSpec:
    """Joint -> part and part -> group assignments, in declaration order."""

    joint_to_part: dict[int, str]
    part_to_group: dict[str, str]
    part_order: list[str]
    group_order: list[str]


def parse_part_spec(text: str) -> tuple[PartSpec, SkeletonTopology | None]:
    """Parse the plain-text skeleton description.

    Grammar (one statement per line, '#' comments):
        joints <n>            optional, joint count
        center <idx>          optional, center joint for partitioning
        name <idx> <name>     optional, semantic joint name
        edge <i> <j>          optional, skeleton bone
        joint <idx> <part>    required, joint-to-part assignment
        part <name> <group>   required, part-to-group assignment

    Returns the part spec plus a topology when the file carries edges.
    """
    joint_to_part: dict[int, str] = {}
    part_to_group: dict[str, str] = {}
    part_order: list[str] = []
    group_order: list[str] = []
    edges: list[tuple[int, int]] = []
    names: dict[int, str] = {}
    joint_count: int | None = None
    center: int | None = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        kind = tokens[0]
        try:
            if kind == "joints" and len(tokens) == 2:
                joint_count = int(tokens[1])
            elif kind == "center" and len(tokens) == 2:
                center = int(tokens[1])
            elif kind == "name" and len(tokens) == 3:
                names[int(tokens[1])] = tokens[2]
            elif kind == "edge" and len(tokens) == 3:
                edges.append((int(tokens[1]), int(tokens[2])))
            elif kind == "joint" and len(tokens) == 3:
                idx = int(tokens[1])
                if idx in joint_to_part:
                    raise GraphError(f"line {lineno}: joint {idx} assigned twice")
                joint_to_part[idx] = tokens[2]
            elif kind == "part" and len(tokens) == 3:
                if tokens[1] in part_to_group:
                    raise GraphError(f"line {lineno}: part {tokens[1]!r} declared twice")
                part_to_group[tokens[1]] = tokens[2]
                part_order.append(tokens[1])
                if tokens[2] not in group_order:
                    group_order.append(tokens[2])
            else:
                raise GraphError(f"line {lineno}: unrecognized statement {raw.strip()!r}")
        except ValueError as exc:
            raise GraphError(f"line {lineno}: {exc}") from exc
    spec = PartSpec(joint_to_part, part_to_group, part_order, group_order)
    topology = None
    if edges:
        n = joint_count if joint_count is not None else max(max(e) for e in edges) + 1
        name_tuple = None
        if names:
            name_tuple = tuple(names.get(i, f"joint{i}") for i in range(n))
        topology = SkeletonTopology(
            joint_count=n,
            edges=tuple(edges),
            center_joint=center if center is not None else 0,
            joint_names=name_tuple,
        )
    return spec, topology


@dataclass
class Hierarchy:
    """Three-level body hierarchy: joints -> parts -> groups.

    `j1` (P x N) and `j2` (G x P) are binary membership matrices: each
    column carries exactly one nonzero, each row at least one.  Level-1
    adjacency is the spatial partition of the skeleton; levels 2 and 3 are
    all-ones (fully connected with self-loops) and rely on learned edge
    importance for structure.
    """

    topology: SkeletonTopology
    part_names: tuple[str, ...]
    group_names: tuple[str, ...]
    j1: np.ndarray
    j2: np.ndarray
    level1: PartitionedAdjacency
    level2: PartitionedAdjacency
    level3: PartitionedAdjacency
    node_counts: tuple[int, int, int] = field(init=False)

    def __post_init__(self):
        self.node_counts = (self.topology.joint_count, len(self.part_names), self.j2.shape[0])

    def pooling_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        return self.j1, self.j2


def build_hierarchy(topology: SkeletonTopology, part_spec: PartSpec) -> Hierarchy:
    """Assemble membership matrices and per-level adjacencies.

    Validates total coverage: every joint in exactly one part, every part
    non-empty and in exactly one group.  The standard body split uses three
    groups; smaller skeletons (test fixtures) may declare fewer.
    """
    n = topology.joint_count
    parts = part_spec.part_order
    groups = part_spec.group_order
    missing = [j for j in range(n) if j not in part_spec.joint_to_part]
    if missing:
        raise GraphError("joints without a part assignment: " + ", ".join(map(str, missing)))
    extra = [j for j in part_spec.joint_to_part if not 0 <= j < n]
    if extra:
        raise GraphError("part assignments reference unknown joints: " + ", ".join(map(str, sorted(extra))))
    undeclared = sorted({p for p in part_spec.joint_to_part.values() if p not in part_spec.part_to_group})
    if undeclared:
        raise GraphError("parts missing a group declaration: " + ", ".join(undeclared))
    if not groups:
        raise GraphError("no top-level groups declared")
    part_index = {p: k for k, p in enumerate(parts)}
    group_index = {g: k for k, g in enumerate(groups)}
    j1 = np.zeros((len(parts), n))
    for j, p in part_spec.joint_to_part.items():
        j1[part_index[p], j] = 1.0
    empty = [p for k, p in enumerate(parts) if not j1[k].any()]
    if empty:
        raise GraphError("parts with no joints: " + ", ".join(empty))
    j2 = np.zeros((len(groups), len(parts)))
    for p, g in part_spec.part_to_group.items():
        j2[group_index[g], part_index[p]] = 1.0
    return Hierarchy(
        topology=topology,
        part_names=tuple(parts),
        group_names=tuple(groups),
        j1=j1,
        j2=j2,
        level1=spatial_partition(topology),
        level2=fully_connected(len(parts)),
        level3=fully_connected(len(groups)),
    )


# ---- packaged default: a 13-joint monocular-pose layout -------------------

DEFAULT_PART_RESOURCE = "skeleton13.parts"


def load_part_spec(path=None) -> tuple[PartSpec, SkeletonTopology | None]:
    """Read a part-spec file; defaults to the packaged 13-joint layout."""
    if path is None:
        from importlib.resources import files

        text = files("skelact.resources").joinpath(DEFAULT_PART_RESOURCE).read_text()
    else:
        with open(path, "r", encoding="utf-8") as fh:
            text = fh.read()
    return parse_part_spec(text)


def default_hierarchy() -> Hierarchy:
    """The packaged 13-joint skeleton with 6 parts and 3 body groups."""
    spec, topology = load_part_spec()
    if topology is None:
        raise GraphError("packaged part spec must carry the skeleton edges")
    return build_hierarchy(topology, spec)
