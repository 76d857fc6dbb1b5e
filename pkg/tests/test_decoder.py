"""Spiral tables, partial-channel gathering, decoder layers and cost model."""

from __future__ import annotations

import numpy as np
import pytest

from splite.config import DEFAULT_CONFIG, PipelineConfig
from splite.decoder import (
    SpiralIndexTable,
    build_decoder_tables,
    build_spiral_table,
    count_params_flops,
    decode_mesh,
    decoder_parameter_specs,
    mesh_upsample,
    parallel_gather,
    partial_channels,
    spiralconv_pp_layer,
    splite_layer,
)
from splite.tensor_core import TensorError
from splite.topology import TopologyError, grid_sheet, tetrahedron, vertex_adjacency

from oracles import (
    _fan_adjacency,
    _hops_bfs,
    _mesh_adjacency,
    gather_loops,
    spiral_row_bruteforce,
    splite_layer_fullwidth,
)


class TestSpiralTableValidation:
    def test_rejects_non_2d(self):
        with pytest.raises(TopologyError):
            SpiralIndexTable(table=np.zeros((2, 2, 2), np.int32))

    def test_rejects_out_of_range_entries(self):
        with pytest.raises(TopologyError):
            SpiralIndexTable(table=np.array([[0, 5], [1, 0]], np.int32))

    def test_rejects_rows_not_starting_with_self(self):
        with pytest.raises(TopologyError):
            SpiralIndexTable(table=np.array([[1, 0], [1, 0]], np.int32))

    def test_properties(self):
        t = SpiralIndexTable(table=np.array([[0, 1], [1, 0]], np.int32))
        assert (t.vertex_count, t.length) == (2, 2)


class TestSpiralConstruction:
    def test_tetrahedron_matches_bruteforce_exactly(self):
        mesh = tetrahedron()
        table = build_spiral_table(mesh, length=6)
        for v in range(mesh.vertex_count):
            want = spiral_row_bruteforce(mesh.faces, mesh.vertex_count, v, 6)
            assert table.table[v].tolist() == want, f"vertex {v}"

    def test_grid_8x8_matches_bruteforce_exactly(self):
        mesh = grid_sheet(8)
        length = DEFAULT_CONFIG.spiral_length
        table = build_spiral_table(mesh, length=length)
        for v in range(mesh.vertex_count):
            want = spiral_row_bruteforce(mesh.faces, mesh.vertex_count, v, length)
            assert table.table[v].tolist() == want, f"vertex {v}"

    def test_first_ring_is_the_face_fan(self):
        mesh = grid_sheet(6)
        table = build_spiral_table(mesh, length=12)
        for v in range(mesh.vertex_count):
            fan = set(_fan_adjacency(mesh.faces, v))
            row = table.table[v].tolist()
            assert set(row[1:1 + len(fan)]) == fan, f"vertex {v}"

    def test_rows_have_no_duplicates_before_padding(self, hand_topo):
        for level in hand_topo.levels:
            table = build_spiral_table(level, length=DEFAULT_CONFIG.spiral_length)
            for v in range(level.vertex_count):
                row = table.table[v].tolist()
                # strip trailing self-padding, keep the leading self
                while len(row) > 1 and row[-1] == v:
                    row.pop()
                assert len(row) == len(set(row)), f"vertex {v}"

    def test_hops_never_decrease_along_a_spiral(self, hand_topo):
        for level in hand_topo.levels:
            adj = _mesh_adjacency(level.faces, level.vertex_count)
            table = build_spiral_table(level, length=DEFAULT_CONFIG.spiral_length)
            for v in range(level.vertex_count):
                hops = _hops_bfs(v, adj)
                row = table.table[v].tolist()
                while len(row) > 1 and row[-1] == v:
                    row.pop()
                seq = [hops[u] for u in row]
                assert seq == sorted(seq), f"vertex {v}"

    def test_short_spirals_pad_with_self(self):
        mesh = tetrahedron()
        table = build_spiral_table(mesh, length=10)
        for v in range(4):
            assert all(u == v for u in table.table[v, 4:])

    def test_rejects_nonpositive_length(self):
        with pytest.raises(TopologyError):
            build_spiral_table(tetrahedron(), length=0)

    def test_tables_are_deterministic(self, hand_topo):
        a = build_decoder_tables(hand_topo)
        b = build_decoder_tables(hand_topo)
        for ta, tb in zip(a, b):
            np.testing.assert_array_equal(ta.table, tb.table)


class TestParallelGather:
    def _random_table(self, rng, n, length):
        t = rng.integers(0, n, size=(n, length)).astype(np.int32)
        t[:, 0] = np.arange(n)
        return SpiralIndexTable(table=t)

    def test_matches_loop_oracle(self):
        rng = np.random.default_rng(0)
        table = self._random_table(rng, 30, 5)
        f = rng.standard_normal((30, 7)).astype(np.float32)
        for width in (1, 3, 7):
            got = parallel_gather(f, table, width=width)
            np.testing.assert_array_equal(got, gather_loops(f, table.table, width))

    def test_full_width_default(self):
        rng = np.random.default_rng(1)
        table = self._random_table(rng, 10, 4)
        f = rng.standard_normal((10, 6)).astype(np.float32)
        np.testing.assert_array_equal(parallel_gather(f, table),
                                      parallel_gather(f, table, width=6))

    def test_bit_identical_across_worker_counts(self):
        rng = np.random.default_rng(2)
        for trial in range(100):
            n = int(rng.integers(2, 700))  # spans the 256-row block boundary
            length = int(rng.integers(1, 6))
            c = int(rng.integers(1, 8))
            table = self._random_table(rng, n, length)
            f = rng.standard_normal((n, c)).astype(np.float32)
            width = int(rng.integers(1, c + 1))
            base = parallel_gather(f, table, width=width, workers=1)
            for workers in (2, 8):
                other = parallel_gather(f, table, width=width, workers=workers)
                assert base.tobytes() == other.tobytes(), f"trial {trial}"

    def test_validation_errors(self):
        rng = np.random.default_rng(3)
        table = self._random_table(rng, 8, 3)
        f = rng.standard_normal((8, 4)).astype(np.float32)
        with pytest.raises(TensorError):
            parallel_gather(f[:5], table)
        with pytest.raises(TensorError):
            parallel_gather(f, table, width=0)
        with pytest.raises(TensorError):
            parallel_gather(f, table, width=5)
        with pytest.raises(TensorError):
            parallel_gather(f, table, workers=0)
        with pytest.raises(TensorError):
            parallel_gather(f[:, 0], table)


class TestDecoderLayers:
    @pytest.mark.parametrize("mesh,c", [(tetrahedron(), 8), (grid_sheet(5), 12)])
    def test_partial_layer_equals_zero_padded_full_layer(self, mesh, c):
        rng = np.random.default_rng(c)
        table = build_spiral_table(mesh, length=5)
        width = partial_channels(c)
        for _ in range(10):
            f = rng.standard_normal((mesh.vertex_count, c)).astype(np.float32)
            w = rng.standard_normal((c, width * 5)).astype(np.float32)
            b = rng.standard_normal(c).astype(np.float32)
            got = splite_layer(f, table, w, b, width=width)
            want = splite_layer_fullwidth(f, table.table, w, b, width)
            np.testing.assert_allclose(got, want, rtol=1e-6, atol=1e-6)

    def test_partial_layer_ignores_skipped_channels(self):
        # changing a channel the gather never reads only moves the residual path
        rng = np.random.default_rng(4)
        mesh = grid_sheet(4)
        table = build_spiral_table(mesh, length=5)
        c, width = 8, partial_channels(8)
        f = rng.standard_normal((mesh.vertex_count, c)).astype(np.float32)
        w = rng.standard_normal((c, width * 5)).astype(np.float32)
        b = np.zeros(c, np.float32)
        base = splite_layer(f, table, w, b, width=width)
        bumped = f.copy()
        bumped[:, width:] += 1.0
        moved = splite_layer(bumped, table, w, b, width=width)
        delta = moved - base
        # pre-relu, the change is exactly the residual bump where both sides are active
        active = (base > 0) & (moved > 0)
        np.testing.assert_allclose(delta[:, width:][active[:, width:]], 1.0, atol=1e-6)

    def test_full_spiral_layer_matches_oracle(self):
        rng = np.random.default_rng(5)
        mesh = grid_sheet(4)
        table = build_spiral_table(mesh, length=6)
        f = rng.standard_normal((mesh.vertex_count, 7)).astype(np.float32)
        w = rng.standard_normal((9, 7 * 6)).astype(np.float32)
        b = rng.standard_normal(9).astype(np.float32)
        got = spiralconv_pp_layer(f, table, w, b)
        want = np.maximum(gather_loops(f, table.table, 7) @ w.T + b, 0.0)
        np.testing.assert_allclose(got, want, atol=1e-5)

    def test_layer_weight_validation(self):
        mesh = tetrahedron()
        table = build_spiral_table(mesh, length=4)
        f = np.zeros((4, 8), np.float32)
        with pytest.raises(TensorError):
            splite_layer(f, table, np.zeros((8, 5), np.float32), np.zeros(8, np.float32), width=2)
        with pytest.raises(TensorError):
            splite_layer(f, table, np.zeros((8, 8), np.float32), np.zeros(7, np.float32), width=2)
        with pytest.raises(TensorError):
            spiralconv_pp_layer(f, table, np.zeros((8, 31), np.float32), np.zeros(8, np.float32))

    def test_partial_channels_rounding(self):
        assert partial_channels(48, 0.25) == 12
        assert partial_channels(3, 0.25) == 1
        assert partial_channels(5, 0.5) == 3
        assert partial_channels(8, 1.0) == 8
        with pytest.raises(TensorError):
            partial_channels(8, 0.0)
        with pytest.raises(TensorError):
            partial_channels(8, 1.5)


class TestDecodeMesh:
    def test_produces_finest_level_offsets(self, prepared_weights, hand_topo, hand_tables):
        rng = np.random.default_rng(6)
        feats = rng.standard_normal(
            (DEFAULT_CONFIG.mesh_levels[0], DEFAULT_CONFIG.feature_channels)
        ).astype(np.float32)
        out = decode_mesh(feats, prepared_weights, hand_topo, tables=hand_tables)
        assert out.shape == (DEFAULT_CONFIG.mesh_levels[-1], 3)
        assert np.isfinite(out).all()

    def test_worker_count_does_not_change_the_mesh(self, prepared_weights, hand_topo, hand_tables):
        rng = np.random.default_rng(7)
        feats = rng.standard_normal(
            (DEFAULT_CONFIG.mesh_levels[0], DEFAULT_CONFIG.feature_channels)
        ).astype(np.float32)
        a = decode_mesh(feats, prepared_weights, hand_topo, tables=hand_tables, workers=1)
        b = decode_mesh(feats, prepared_weights, hand_topo, tables=hand_tables, workers=4)
        assert a.tobytes() == b.tobytes()

    def test_rejects_wrong_feature_shape(self, prepared_weights, hand_topo):
        with pytest.raises(TensorError):
            decode_mesh(np.zeros((10, 10), np.float32), prepared_weights, hand_topo)

    def test_rejects_mismatched_topology(self, prepared_weights, hand_topo):
        cfg = PipelineConfig(mesh_levels=(4, 8))
        feats = np.zeros((4, cfg.feature_channels), np.float32)
        with pytest.raises(TopologyError):
            decode_mesh(feats, prepared_weights, hand_topo, cfg=cfg)

    def test_upsample_level_bounds(self, hand_topo):
        with pytest.raises(TopologyError):
            mesh_upsample(np.zeros((49, 4), np.float32), hand_topo, 99)


class TestCostModel:
    def test_closed_form_parameter_counts(self):
        lite = count_params_flops(variant="splite")
        full = count_params_flops(variant="spiralconv_pp")
        c, length = DEFAULT_CONFIG.decoder_channels, DEFAULT_CONFIG.spiral_length
        cp = partial_channels(c, DEFAULT_CONFIG.partial_fraction)
        assert lite.params_per_layer == c * cp * length + c
        assert full.params_per_layer == c * c * length + c
        assert lite.total_params == lite.params_per_layer * len(DEFAULT_CONFIG.mesh_levels)

    def test_flop_counts_sum_over_levels(self):
        lite = count_params_flops(variant="splite")
        c, length = DEFAULT_CONFIG.decoder_channels, DEFAULT_CONFIG.spiral_length
        cp = partial_channels(c, DEFAULT_CONFIG.partial_fraction)
        want = sum(v * 2 * c * cp * length for v in DEFAULT_CONFIG.mesh_levels)
        assert lite.total_flops == want

    def test_published_operating_point(self):
        lite = count_params_flops(variant="splite")
        full = count_params_flops(variant="spiralconv_pp")
        assert lite.params_per_layer == 5232
        assert full.params_per_layer == 20784
        ratio = full.params_per_layer / lite.params_per_layer
        assert 3.0 <= ratio <= 4.5
        assert full.total_flops / lite.total_flops == pytest.approx(4.0)

    def test_rejects_unknown_variant(self):
        with pytest.raises(TensorError):
            count_params_flops(variant="dense")

    def test_parameter_spec_names_unique_and_shaped(self):
        specs = decoder_parameter_specs()
        names = [n for n, _ in specs]
        assert len(names) == len(set(names))
        shapes = dict(specs)
        c = DEFAULT_CONFIG.decoder_channels
        cp = partial_channels(c, DEFAULT_CONFIG.partial_fraction)
        assert shapes["decoder.level0.weight"] == (c, cp * DEFAULT_CONFIG.spiral_length)
        assert shapes["decoder.head.weight"] == (3, c)
        assert shapes["lift.weight"] == (DEFAULT_CONFIG.mesh_levels[0], DEFAULT_CONFIG.num_keypoints)
