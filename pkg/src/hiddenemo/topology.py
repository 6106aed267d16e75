"""Keypoint graphs per group and their normalized adjacency operators."""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

from hiddenemo.datamodel import ValidationError
from hiddenemo.features import GROUP_NAMES

GROUP_SIZES = {"skeleton": 25, "face": 70, "hands": 42}
HAND_SIZE = 21


@dataclass(frozen=True)
class Topology:
    edges: dict[str, tuple[tuple[int, int], ...]]
    sizes: dict[str, int]

    def __post_init__(self):
        for group, edge_list in self.edges.items():
            validate_edges(group, edge_list, self.sizes[group])


@dataclass(frozen=True)
class NormalizedAdjacency:
    matrix: np.ndarray  # D^-1/2 (A + I) D^-1/2
    raw: np.ndarray  # binary A without self-loops
    built_with_self_loops: bool = True

    @property
    def n(self) -> int:
        return self.matrix.shape[0]


def validate_edges(group: str, edge_list, n: int) -> None:
    seen = set()
    for i, j in edge_list:
        if not (0 <= i < n and 0 <= j < n):
            raise ValidationError(f"{group} edge ({i}, {j}) out of range 0..{n - 1}")
        if i == j:
            raise ValidationError(f"{group} edge ({i}, {j}) is a self-edge")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise ValidationError(f"{group} edge ({i}, {j}) is duplicated")
        seen.add(key)
        if group == "hands" and (i < HAND_SIZE) != (j < HAND_SIZE):
            raise ValidationError(f"hands edge ({i}, {j}) crosses the left/right hand boundary")


def default_topology_path() -> Path:
    return Path(str(resources.files("hiddenemo") / "data" / "openpose_topology.txt"))


def load_topology(path=None) -> Topology:
    """Parse ``group i j`` lines; ``#`` starts a comment line."""
    path = Path(path) if path is not None else default_topology_path()
    edges: dict[str, list[tuple[int, int]]] = {g: [] for g in GROUP_NAMES}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 3 or parts[0] not in edges:
                raise ValidationError(f"{path}:{lineno}: expected '<group> <i> <j>', got {line!r}")
            try:
                i, j = int(parts[1]), int(parts[2])
            except ValueError:
                raise ValidationError(f"{path}:{lineno}: non-integer index in {line!r}") from None
            edges[parts[0]].append((i, j))
    return Topology({g: tuple(e) for g, e in edges.items()}, dict(GROUP_SIZES))


def build_normalized_adjacency(topology: Topology, group: str) -> NormalizedAdjacency:
    n = topology.sizes[group]
    return normalized_adjacency_from_edges(topology.edges[group], n)


def normalized_adjacency_from_edges(edge_list, n: int) -> NormalizedAdjacency:
    a = np.zeros((n, n))
    for i, j in edge_list:
        a[i, j] = a[j, i] = 1.0
    a_hat = a + np.eye(n)
    d_inv_sqrt = 1.0 / np.sqrt(a_hat.sum(axis=1))
    m = d_inv_sqrt[:, None] * a_hat * d_inv_sqrt[None, :]
    return NormalizedAdjacency(m, a, True)


def default_adjacencies(path=None) -> dict[str, NormalizedAdjacency]:
    topo = load_topology(path)
    return {g: build_normalized_adjacency(topo, g) for g in GROUP_NAMES}
