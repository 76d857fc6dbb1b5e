"""End-to-end inference determinism, weight generation and preparation."""

from __future__ import annotations

import numpy as np
import pytest

from splite.backbone import backbone_parameter_specs
from splite.config import DEFAULT_CONFIG
from splite.decoder import decoder_parameter_specs
from splite.pipeline import default_seed, gen_weights, infer_single, prepare_weights
from splite.preproc import synth_sparse_input
from splite.tensor_core import WeightError, sparsity


def fused_input(seed, target=0.9):
    edge = synth_sparse_input(128, 128, target, seed=seed)[0]
    return np.stack([edge, edge, (edge > 0).astype(np.float32)])


class TestGenWeights:
    def test_same_seed_is_bit_identical(self):
        a, b = gen_weights(7), gen_weights(7)
        assert list(a) == list(b)
        for name in a:
            assert a[name].tobytes() == b[name].tobytes(), name

    def test_different_seeds_differ(self):
        a, b = gen_weights(0), gen_weights(1)
        assert any(a[n].tobytes() != b[n].tobytes() for n in a)

    def test_covers_every_declared_parameter(self):
        store = gen_weights(0)
        want = dict(backbone_parameter_specs() + decoder_parameter_specs())
        assert set(store) == set(want)
        for name, shape in want.items():
            assert store[name].shape == shape, name

    def test_norm_statistics_are_safe_to_fold(self):
        store = gen_weights(3)
        for name, arr in store.items():
            if name.endswith(".var"):
                assert (arr > 0).all(), name


class TestPrepareWeights:
    def test_contains_folded_and_decoder_names(self, raw_weights, prepared_weights):
        assert "stem.weight" in prepared_weights
        assert "decoder.level0.weight" in prepared_weights
        assert "lift.weight" in prepared_weights
        assert "stem.bn.gamma" not in prepared_weights

    def test_missing_parameter_reported_by_name(self, raw_weights):
        broken = dict(raw_weights)
        del broken["decoder.head.weight"]
        with pytest.raises(WeightError, match="decoder.head.weight"):
            prepare_weights(broken)


class TestInferSingle:
    def test_output_shapes(self, prepared_weights, hand_topo, hand_tables):
        fused = fused_input(0)
        res = infer_single(fused, prepared_weights, hand_topo, tables=hand_tables)
        k = DEFAULT_CONFIG.num_keypoints
        assert res.landmarks.grid.shape == (k, 2)
        assert res.landmarks.pixel.shape == (k, 2)
        assert res.landmarks.confidence.shape == (k,)
        assert res.joints_3d.shape == (k, 3)
        assert res.mesh_vertices.shape == (DEFAULT_CONFIG.mesh_levels[-1], 3)
        assert res.input_sparsity == pytest.approx(sparsity(fused), abs=1e-12)
        assert set(res.timings_ms) == {"encoder", "lifting", "decoder"}
        assert all(v >= 0 for v in res.timings_ms.values())

    def test_bit_identical_across_runs_and_workers(self, prepared_weights, hand_topo, hand_tables):
        fused = fused_input(1)
        runs = [
            infer_single(fused, prepared_weights, hand_topo, tables=hand_tables, workers=w)
            for w in (1, 1, 4)
        ]
        base = runs[0]
        for other in runs[1:]:
            assert base.joints_3d.tobytes() == other.joints_3d.tobytes()
            assert base.mesh_vertices.tobytes() == other.mesh_vertices.tobytes()
            assert base.landmarks.pixel.tobytes() == other.landmarks.pixel.tobytes()

    def test_depths_and_geometry_are_physical(self, prepared_weights, hand_topo, hand_tables):
        res = infer_single(fused_input(2), prepared_weights, hand_topo, tables=hand_tables)
        assert (res.joints_3d[:, 2] >= DEFAULT_CONFIG.min_depth).all()
        assert np.isfinite(res.mesh_vertices).all()
        # mesh offsets are root-anchored, so vertices sit near the wrist joint
        spread = np.linalg.norm(res.mesh_vertices - res.joints_3d[0], axis=1)
        assert spread.max() < 1.0

    def test_dense_path_runs(self, prepared_weights, hand_topo, hand_tables):
        fused = fused_input(3)
        res = infer_single(fused, prepared_weights, hand_topo, tables=hand_tables, sparse=False)
        assert np.isfinite(res.joints_3d).all()

    def test_activation_quantized_path_stays_close(self, prepared_weights, hand_topo, hand_tables):
        fused = fused_input(4)
        ref = infer_single(fused, prepared_weights, hand_topo, tables=hand_tables)
        quant = infer_single(fused, prepared_weights, hand_topo, tables=hand_tables,
                             quantize_activations=True)
        delta_mm = np.linalg.norm(ref.joints_3d - quant.joints_3d, axis=1).mean() * 1000
        assert delta_mm < 20.0


class TestSeedEnvironment:
    def test_default_seed_reads_override(self, monkeypatch):
        monkeypatch.delenv("SPLITE_SEED", raising=False)
        assert default_seed() == 0
        monkeypatch.setenv("SPLITE_SEED", "17")
        assert default_seed() == 17
