"""Skeleton graphs and their three-group partitioned adjacency.

Skeleton files are YAML mappings::

    name: h36m17          # optional
    num_joints: 17
    root: 0               # joint used as the hop-distance origin
    names: [hip, ...]     # optional, one per joint
    edges:                # undirected, each pair listed once
      - [0, 1]

Group 1 of the partition is the joint itself, group 2 the neighbours that
sit closer to the root, group 3 the neighbours further away. Equal-hop
neighbours (only possible when the graph has a cycle) go to group 3.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Mapping

import numpy as np
import yaml

BUNDLED = ("h36m17", "h36m16")


class SkeletonError(ValueError):
    pass


@dataclass(frozen=True)
class Skeleton:
    num_joints: int
    edges: tuple[tuple[int, int], ...]
    root: int = 0
    joint_names: tuple[str, ...] | None = None
    name: str = "custom"

    def neighbors(self) -> list[list[int]]:
        adj: list[list[int]] = [[] for _ in range(self.num_joints)]
        for i, j in self.edges:
            adj[i].append(j)
            adj[j].append(i)
        return adj

    @property
    def is_tree(self) -> bool:
        return len(self.edges) == self.num_joints - 1

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "name": self.name,
            "num_joints": self.num_joints,
            "root": self.root,
            "edges": [list(e) for e in self.edges],
        }
        if self.joint_names is not None:
            out["names"] = list(self.joint_names)
        return out


@dataclass(frozen=True)
class PartitionedAdjacency:
    adjacency: np.ndarray  # binary, with self loops
    groups: tuple[np.ndarray, np.ndarray, np.ndarray]  # binary A1, A2, A3
    normalized: tuple[np.ndarray, np.ndarray, np.ndarray]
    hop: np.ndarray = field(repr=False)


def _validate(num_joints: int, edges, root: int, names) -> tuple[tuple[int, int], ...]:
    if num_joints < 1:
        raise SkeletonError(f"num_joints must be >= 1, got {num_joints}")
    if not 0 <= root < num_joints:
        raise SkeletonError(f"root index {root} out of range for {num_joints} joints")
    if names is not None and len(names) != num_joints:
        raise SkeletonError(f"{len(names)} joint names given for {num_joints} joints")
    seen = set()
    clean = []
    for e in edges:
        if len(e) != 2:
            raise SkeletonError(f"edge {e!r} must be a pair of joint indices")
        i, j = int(e[0]), int(e[1])
        for k in (i, j):
            if not 0 <= k < num_joints:
                raise SkeletonError(f"edge ({i}, {j}) references joint {k}, out of range")
        if i == j:
            raise SkeletonError(f"edge ({i}, {j}) is a self loop")
        key = (min(i, j), max(i, j))
        if key in seen:
            raise SkeletonError(f"duplicate edge ({i}, {j})")
        seen.add(key)
        clean.append((i, j))
    return tuple(clean)


def make_skeleton(num_joints: int, edges, root: int = 0, names=None, name: str = "custom") -> Skeleton:
    clean = _validate(num_joints, edges, root, names)
    skel = Skeleton(num_joints, clean, root, tuple(names) if names is not None else None, name)
    unreached = [i for i, h in enumerate(_bfs(skel)) if h < 0]
    if unreached:
        raise SkeletonError(f"skeleton is disconnected: joints {unreached} unreachable from root {root}")
    return skel


def load_skeleton(source: str | Path | Mapping[str, Any]) -> Skeleton:
    """Build a validated skeleton from a mapping, a YAML path, or a bundled name."""
    if isinstance(source, Mapping):
        cfg = source
    else:
        text = None
        if isinstance(source, str) and source in BUNDLED:
            text = resources.files("ampose.skeletons").joinpath(f"{source}.yaml").read_text()
        else:
            path = Path(source)
            if not path.exists():
                raise SkeletonError(f"skeleton file not found: {path} (bundled: {', '.join(BUNDLED)})")
            text = path.read_text()
        cfg = yaml.safe_load(text)
        if not isinstance(cfg, Mapping):
            raise SkeletonError(f"skeleton file {source} must hold a mapping")
    for key in ("num_joints", "edges"):
        if key not in cfg:
            raise SkeletonError(f"skeleton config missing {key!r}")
    return make_skeleton(
        int(cfg["num_joints"]),
        cfg["edges"] or [],
        int(cfg.get("root", 0)),
        cfg.get("names"),
        str(cfg.get("name", "custom")),
    )


def chain(n: int) -> Skeleton:
    return make_skeleton(n, [(i, i + 1) for i in range(n - 1)], 0, name=f"chain{n}")


def star(leaves: int) -> Skeleton:
    return make_skeleton(leaves + 1, [(0, i) for i in range(1, leaves + 1)], 0, name=f"star{leaves}")


def _bfs(s: Skeleton) -> list[int]:
    hop = [-1] * s.num_joints
    hop[s.root] = 0
    queue = deque([s.root])
    nbrs = s.neighbors()
    while queue:
        i = queue.popleft()
        for j in nbrs[i]:
            if hop[j] < 0:
                hop[j] = hop[i] + 1
                queue.append(j)
    return hop


def hop_distances(s: Skeleton) -> np.ndarray:
    hop = _bfs(s)
    if min(hop) < 0:
        raise SkeletonError("skeleton is disconnected")
    return np.array(hop, dtype=np.int64)


def normalize_adjacency(a: np.ndarray) -> np.ndarray:
    """Symmetric D^-1/2 A D^-1/2 using row degrees; zero-degree rows stay zero."""
    a = np.asarray(a, dtype=np.float64)
    deg = a.sum(axis=1)
    inv = np.zeros_like(deg)
    nz = deg > 0
    inv[nz] = 1.0 / np.sqrt(deg[nz])
    return inv[:, None] * a * inv[None, :]


def partition_adjacency(s: Skeleton) -> PartitionedAdjacency:
    n = s.num_joints
    hop = hop_distances(s)
    a = np.eye(n, dtype=np.int64)
    closer = np.zeros((n, n), dtype=np.int64)
    further = np.zeros((n, n), dtype=np.int64)
    for i, j in s.edges:
        a[i, j] = a[j, i] = 1
        for u, v in ((i, j), (j, i)):
            # row u aggregates column v
            if hop[v] < hop[u]:
                closer[u, v] = 1
            else:
                further[u, v] = 1
    groups = (np.eye(n, dtype=np.int64), closer, further)
    return PartitionedAdjacency(
        adjacency=a,
        groups=groups,
        normalized=tuple(normalize_adjacency(g) for g in groups),
        hop=hop,
    )
