"""Template mesh hierarchy: levels, faces, and row-stochastic upsampling.

The decoder walks a coarse-to-fine chain of triangle meshes
(49 -> 98 -> 195 -> 389 -> 778 vertices by default). Each transition carries a
sparse upsampling matrix whose rows are convex combinations of parent
vertices, so constant fields stay constant across levels. The template
shipped here is generated procedurally (a curved quad-sheet refined by
deterministic edge splits); real capture-derived templates load through the
same file format.
"""

from __future__ import annotations

import functools
from dataclasses import dataclass, field

import numpy as np


class TopologyError(ValueError):
    """Raised for malformed meshes or upsampling matrices."""


@dataclass(frozen=True)
class MeshLevel:
    vertex_count: int
    faces: np.ndarray  # (F, 3) int32
    positions: np.ndarray | None = None  # (V, 3) float32, optional

    def __post_init__(self):
        faces = np.asarray(self.faces, dtype=np.int32).reshape(-1, 3)
        if faces.size and (faces.min() < 0 or faces.max() >= self.vertex_count):
            raise TopologyError("face indexes vertex out of range")
        object.__setattr__(self, "faces", faces)
        if self.positions is not None:
            pos = np.asarray(self.positions, dtype=np.float32).reshape(-1, 3)
            if pos.shape[0] != self.vertex_count:
                raise TopologyError("positions count must match vertex count")
            object.__setattr__(self, "positions", pos)


@dataclass(frozen=True)
class UpsampleMatrix:
    """Sparse (V_next x V_prev) matrix in COO triplet form, rows summing to 1."""

    shape: tuple[int, int]
    rows: np.ndarray
    cols: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=np.int32)
        cols = np.asarray(self.cols, dtype=np.int32)
        values = np.asarray(self.values, dtype=np.float64)
        if not (rows.shape == cols.shape == values.shape):
            raise TopologyError("triplet arrays must have equal length")
        object.__setattr__(self, "rows", rows)
        object.__setattr__(self, "cols", cols)
        object.__setattr__(self, "values", values)

    def validate(self, context: str = "upsample") -> None:
        n_rows, n_cols = self.shape
        if self.rows.size and (self.rows.min() < 0 or self.rows.max() >= n_rows):
            raise TopologyError(f"{context}: row index out of range")
        if self.cols.size and (self.cols.min() < 0 or self.cols.max() >= n_cols):
            raise TopologyError(f"{context}: col index out of range")
        if np.any(self.values < 0):
            raise TopologyError(f"{context}: negative entry")
        sums = np.zeros(n_rows)
        np.add.at(sums, self.rows, self.values)
        bad = np.nonzero(np.abs(sums - 1.0) > 1e-6)[0]
        if bad.size:
            raise TopologyError(f"{context} row {bad[0]}: row sum {sums[bad[0]]:.6f} != 1")

    def apply(self, features: np.ndarray) -> np.ndarray:
        """Sparse matrix product: (V_next, C) from (V_prev, C)."""
        features = np.asarray(features)
        if features.shape[0] != self.shape[1]:
            raise TopologyError(
                f"upsample expects {self.shape[1]} rows, got {features.shape[0]}"
            )
        out = np.zeros((self.shape[0],) + features.shape[1:], dtype=np.float64)
        np.add.at(out, self.rows, self.values.reshape(-1, *([1] * (features.ndim - 1))) * features[self.cols])
        return out.astype(features.dtype)


@dataclass(frozen=True)
class MeshTopology:
    levels: tuple[MeshLevel, ...]
    upsamples: tuple[UpsampleMatrix, ...]

    def __post_init__(self):
        if len(self.upsamples) != max(len(self.levels) - 1, 0):
            raise TopologyError("need one upsample matrix per level transition")
        for i, up in enumerate(self.upsamples):
            expect = (self.levels[i + 1].vertex_count, self.levels[i].vertex_count)
            if up.shape != expect:
                raise TopologyError(f"upsample {i}: shape {up.shape} != {expect}")
            up.validate(context=f"upsample {i}")
        object.__setattr__(self, "levels", tuple(self.levels))
        object.__setattr__(self, "upsamples", tuple(self.upsamples))

    @property
    def vertex_counts(self) -> tuple[int, ...]:
        return tuple(level.vertex_count for level in self.levels)


def edges_from_faces(faces: np.ndarray) -> np.ndarray:
    """Unique undirected edges (each counted once), lexicographically sorted."""
    faces = np.asarray(faces, dtype=np.int64).reshape(-1, 3)
    pairs = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
    pairs = np.sort(pairs, axis=1)
    keys = pairs[:, 0] * (faces.max() + 1 if faces.size else 1) + pairs[:, 1]
    _, idx = np.unique(keys, return_index=True)  # idx ordered by key == lex order
    return pairs[idx].astype(np.int32)


def vertex_adjacency(faces: np.ndarray, vertex_count: int) -> list[set[int]]:
    adj: list[set[int]] = [set() for _ in range(vertex_count)]
    for a, b in edges_from_faces(faces):
        adj[a].add(int(b))
        adj[b].add(int(a))
    return adj


# ---------------------------------------------------------------------------
# Procedural builders
# ---------------------------------------------------------------------------

def tetrahedron() -> MeshLevel:
    """Regular tetrahedron with consistently outward-wound faces."""
    positions = np.array(
        [[1, 1, 1], [1, -1, -1], [-1, 1, -1], [-1, -1, 1]], dtype=np.float32
    )
    faces = np.array([[0, 1, 2], [0, 2, 3], [0, 3, 1], [1, 3, 2]], dtype=np.int32)
    return MeshLevel(vertex_count=4, faces=faces, positions=positions)


def grid_sheet(n: int, extent: float = 1.0) -> MeshLevel:
    """n x n vertex sheet triangulated with a consistent diagonal.

    Interior vertices have exactly six one-ring neighbors.
    """
    if n < 2:
        raise TopologyError("grid needs n >= 2")
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    xy = np.stack([jj, ii], axis=-1).reshape(-1, 2).astype(np.float32)
    positions = np.concatenate(
        [xy * (extent / (n - 1)), np.zeros((n * n, 1), np.float32)], axis=1
    )
    faces = []
    for i in range(n - 1):
        for j in range(n - 1):
            a = i * n + j
            b = a + 1
            c = a + n
            d = c + 1
            faces.append((a, b, d))
            faces.append((a, d, c))
    return MeshLevel(vertex_count=n * n, faces=np.array(faces, np.int32), positions=positions)


def _split_edges_to_count(level: MeshLevel, target: int) -> tuple[MeshLevel, UpsampleMatrix]:
    """Refine a mesh to exactly ``target`` vertices by deterministic edge splits.

    The longest live edge (ties broken by vertex indices) is split at its
    midpoint; both incident faces are retriangulated. Every split adds one
    vertex, so target - V splits are performed.
    """
    v0 = level.vertex_count
    splits = target - v0
    if splits < 0:
        raise TopologyError(f"cannot refine {v0} vertices down to {target}")
    if level.positions is None:
        raise TopologyError("edge-split refinement requires vertex positions")

    positions = [tuple(float(x) for x in p) for p in level.positions]
    faces = [tuple(int(x) for x in f) for f in level.faces]
    parents: list[tuple[int, int]] = []  # per new vertex
    length_cache: dict[tuple[int, int], float] = {}

    def edge_length(e: tuple[int, int]) -> float:
        cached = length_cache.get(e)
        if cached is None:
            pa, pb = positions[e[0]], positions[e[1]]
            cached = (pa[0] - pb[0]) ** 2 + (pa[1] - pb[1]) ** 2 + (pa[2] - pb[2]) ** 2
            length_cache[e] = cached
        return cached

    for _ in range(splits):
        # Live edge set with incident faces, rebuilt per split for simplicity;
        # mesh sizes here keep this comfortably fast.
        incident: dict[tuple[int, int], list[int]] = {}
        for fi, (a, b, c) in enumerate(faces):
            for e in ((a, b), (b, c), (c, a)):
                key = (min(e), max(e))
                incident.setdefault(key, []).append(fi)
        best = max(incident, key=lambda e: (edge_length(e), -e[0], -e[1]))
        a, b = best
        m = len(positions)
        pa, pb = positions[a], positions[b]
        positions.append(((pa[0] + pb[0]) / 2, (pa[1] + pb[1]) / 2, (pa[2] + pb[2]) / 2))
        parents.append((a, b))
        for fi in sorted(incident[best], reverse=True):
            fa, fb, fc = faces[fi]
            # Rotate so the split edge is (fa, fb), preserving orientation.
            for _ in range(3):
                if {fa, fb} == {a, b}:
                    break
                fa, fb, fc = fb, fc, fa
            faces[fi] = (fa, m, fc)
            faces.append((m, fb, fc))

    new_level = MeshLevel(
        vertex_count=target,
        faces=np.array(faces, np.int32),
        positions=np.array(positions, np.float32),
    )
    rows = list(range(v0)) + [v0 + k for k in range(splits) for _ in (0, 1)]
    cols = list(range(v0)) + [p for pair in parents for p in pair]
    vals = [1.0] * v0 + [0.5] * (2 * splits)
    up = UpsampleMatrix(shape=(target, v0), rows=np.array(rows), cols=np.array(cols), values=np.array(vals))
    return new_level, up


def _palm_sheet(n: int = 7) -> MeshLevel:
    """Coarse template: a gently domed sheet sized like a palm (meters)."""
    base = grid_sheet(n, extent=0.16)
    pos = base.positions.copy()
    pos[:, :2] -= 0.08  # center at the origin
    # Dome height and a taper toward the finger end give the sheet a hand-like
    # silhouette without affecting connectivity.
    r2 = pos[:, 0] ** 2 + pos[:, 1] ** 2
    pos[:, 2] = 0.02 * np.exp(-r2 / 0.006).astype(np.float32)
    pos[:, 0] *= (1.0 - 0.25 * (pos[:, 1] + 0.08) / 0.16).astype(np.float32)
    return MeshLevel(vertex_count=base.vertex_count, faces=base.faces, positions=pos)


@functools.lru_cache(maxsize=4)
def build_hand_topology(levels: tuple[int, ...] = (49, 98, 195, 389, 778)) -> MeshTopology:
    """Build the full coarse-to-fine template hierarchy (cached; immutable)."""
    n = int(round(levels[0] ** 0.5))
    if n * n != levels[0]:
        raise TopologyError("coarsest level must be a square sheet count")
    mesh_levels = [_palm_sheet(n)]
    upsamples = []
    for target in levels[1:]:
        nxt, up = _split_edges_to_count(mesh_levels[-1], target)
        mesh_levels.append(nxt)
        upsamples.append(up)
    return MeshTopology(levels=tuple(mesh_levels), upsamples=tuple(upsamples))
