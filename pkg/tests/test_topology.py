"""Mesh levels, edge extraction, upsampling matrices, and the hand topology."""

import numpy as np
import pytest

from splite.topology import (
    MeshLevel,
    MeshTopology,
    TopologyError,
    UpsampleMatrix,
    build_hand_topology,
    edges_from_faces,
    grid_sheet,
    tetrahedron,
    vertex_adjacency,
)


class TestEdgesFromFaces:
    def test_tetrahedron_has_six_edges(self):
        edges = edges_from_faces(tetrahedron().faces)
        assert edges.shape == (6, 2)

    def test_edges_are_unique_and_lexicographic(self):
        faces = np.array([[0, 1, 2], [2, 1, 3], [0, 2, 3]], np.int32)
        edges = edges_from_faces(faces)
        keys = edges[:, 0].astype(np.int64) * (edges.max() + 1) + edges[:, 1]
        assert np.all(np.diff(keys) > 0)
        assert np.all(edges[:, 0] < edges[:, 1])

    def test_shared_edge_appears_once(self):
        faces = np.array([[0, 1, 2], [1, 2, 3]], np.int32)
        edges = edges_from_faces(faces)
        assert [1, 2] in edges.tolist()
        assert len(edges) == 5


class TestAdjacency:
    def test_tetrahedron_is_complete(self):
        adj = vertex_adjacency(tetrahedron().faces, 4)
        assert all(adj[v] == set(range(4)) - {v} for v in range(4))

    def test_symmetry(self):
        faces = grid_sheet(4).faces
        adj = vertex_adjacency(faces, 16)
        for v, nbrs in enumerate(adj):
            for u in nbrs:
                assert v in adj[u]

    def test_grid_interior_vertex_has_six_neighbors(self):
        n = 5
        adj = vertex_adjacency(grid_sheet(n).faces, n * n)
        interior = 2 * n + 2  # row 2, col 2
        assert len(adj[interior]) == 6


class TestUpsample:
    def test_apply_averages_parent_features(self):
        up = UpsampleMatrix(shape=(3, 2),
                            rows=np.array([0, 1, 2, 2]),
                            cols=np.array([0, 1, 0, 1]),
                            values=np.array([1.0, 1.0, 0.5, 0.5]))
        up.validate()
        out = up.apply(np.array([[2.0], [4.0]], np.float32))
        assert np.allclose(out[:, 0], [2.0, 4.0, 3.0])

    def test_rows_must_sum_to_one(self):
        up = UpsampleMatrix(shape=(2, 2),
                            rows=np.array([0, 1]),
                            cols=np.array([0, 1]),
                            values=np.array([1.0, 0.7]))
        with pytest.raises(TopologyError):
            up.validate()

    def test_out_of_range_index_rejected(self):
        up = UpsampleMatrix(shape=(2, 2),
                            rows=np.array([0, 2]),
                            cols=np.array([0, 1]),
                            values=np.array([1.0, 1.0]))
        with pytest.raises(TopologyError):
            up.validate()


class TestMeshLevel:
    def test_face_index_out_of_range_rejected(self):
        with pytest.raises(TopologyError):
            MeshLevel(vertex_count=3, faces=np.array([[0, 1, 3]], np.int32))

    def test_topology_requires_matching_upsample_count(self):
        level = tetrahedron()
        with pytest.raises(TopologyError):
            MeshTopology(levels=(level, level), upsamples=())


class TestHandTopology:
    def test_level_vertex_counts(self, hand_topo):
        assert hand_topo.vertex_counts == (49, 98, 195, 389, 778)

    def test_upsamples_map_between_consecutive_levels(self, hand_topo):
        for i, up in enumerate(hand_topo.upsamples):
            assert up.shape == (hand_topo.levels[i + 1].vertex_count,
                                hand_topo.levels[i].vertex_count)
            up.validate()

    def test_every_level_is_connected(self, hand_topo):
        for level in hand_topo.levels:
            adj = vertex_adjacency(level.faces, level.vertex_count)
            seen = {0}
            frontier = [0]
            while frontier:
                frontier = [w for u in frontier for w in adj[u] if w not in seen
                            and not seen.add(w)]
            assert len(seen) == level.vertex_count

    def test_deterministic_rebuild(self):
        a = build_hand_topology()
        b = build_hand_topology()
        assert a is b  # cached; the faces below guard against accidental mutation
        assert a.levels[0].faces.flags.writeable is False or np.array_equal(
            a.levels[0].faces, b.levels[0].faces)

    def test_positions_present_for_geometric_splits(self, hand_topo):
        for level in hand_topo.levels:
            assert level.positions is not None
            assert level.positions.shape == (level.vertex_count, 3)
