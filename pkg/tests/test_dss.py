"""Set-layer tests: variant equivariance, config round trips, model heads."""

import numpy as np
import pytest

from equiset import dss
from equiset.permgroup import cyclic, product_group, symmetric
from equiset.equimap import commutes_exactly
from equiset.tensor import ParamStore, ShapeError, Tensor


def make_map(structure, store, prefix, f_in, f_out, d, bias=True):
    return dss.HMap(structure, store, prefix, f_in, f_out, d, bias=bias)


def group_action(X, q, r):
    """Permute set elements by q and cyclically shift positions by r."""
    return np.roll(X[:, q], r, axis=-1)


class TestVariantEquivariance:
    @pytest.mark.parametrize("kind", dss.LAYER_KINDS)
    @pytest.mark.parametrize(
        "structure", [dss.CircConv(3), dss.SharedBasis("cyclic:6")]
    )
    def test_layer_commutes_with_action(self, kind, structure):
        n, f, d = 5, 3, 6
        store = ParamStore(11)
        L1 = make_map(structure, store, "L1", f, 4, d)
        L2 = (
            make_map(structure, store, "L2", f, 4, d, bias=False)
            if kind in ("deepsets", "dss_sum", "dss_max", "dss_aittala")
            else None
        )
        rng = np.random.default_rng(0)
        X = rng.standard_normal((2, n, f, d))

        def fwd(arr):
            T = Tensor(arr)
            if kind == "siamese":
                out = dss.siamese_forward(T, L1)
            elif kind == "deepsets":
                out = dss.deepsets_forward(T, L1, L2)
            else:
                out = dss.dss_forward(kind, T, L1, L2)
            return out.data

        worst = 0.0
        for _ in range(20):
            q = rng.permutation(n)
            r = int(rng.integers(d))
            delta = fwd(group_action(X, q, r)) - group_action(fwd(X), q, r)
            worst = max(worst, float(np.max(np.abs(delta))))
        assert worst < 1e-10

    def test_max_variant_actually_uses_max(self):
        store = ParamStore(0)
        L1 = make_map(dss.CircConv(3), store, "L1", 1, 1, 4)
        L2 = make_map(dss.CircConv(3), store, "L2", 1, 1, 4, bias=False)
        X = np.zeros((1, 3, 1, 4))
        X[0, 0] = 1.0
        X[0, 1] = 5.0
        out_max = dss.dss_forward("dss_max", Tensor(X), L1, L2).data
        out_sum = dss.dss_forward("dss_sum", Tensor(X), L1, L2).data
        assert not np.allclose(out_max, out_sum)

    def test_unknown_variant(self):
        with pytest.raises(ValueError):
            dss.dss_forward("dss_other", Tensor(np.zeros((1, 2, 1, 2))), None, None)

    def test_aittala_doubles_features(self):
        store = ParamStore(0)
        L1 = make_map(dss.CircConv(3), store, "L1", 2, 3, 4)
        L2 = make_map(dss.CircConv(3), store, "L2", 2, 3, 4, bias=False)
        out = dss.dss_forward("dss_aittala", Tensor(np.zeros((1, 5, 2, 4))), L1, L2)
        assert out.shape == (1, 5, 6, 4)

    def test_sridhar_output_is_mean_centered(self):
        store = ParamStore(0)
        L1 = make_map(dss.CircConv(3), store, "L1", 1, 2, 4)
        X = np.random.default_rng(1).standard_normal((2, 6, 1, 4))
        out = dss.dss_forward("dss_sridhar", Tensor(X), L1, None).data
        assert np.allclose(out.mean(axis=1), 0, atol=1e-12)


class TestMaterialized:
    def test_sum_layer_matches_kron_matrix(self):
        n, d = 4, 3
        store = ParamStore(5)
        structure = dss.SharedBasis("cyclic:3")
        L1 = make_map(structure, store, "L1", 1, 1, d, bias=False)
        L2 = make_map(structure, store, "L2", 1, 1, d, bias=False)
        M = dss.materialized_dss_matrix(L1.matrix(), L2.matrix(), n)
        x = np.random.default_rng(0).standard_normal((1, n, 1, d))
        out = dss.dss_forward("dss_sum", Tensor(x), L1, L2).data
        assert np.allclose(out.ravel(), M @ x.ravel())

    def test_matrix_commutes_with_product_group(self):
        store = ParamStore(5)
        structure = dss.SharedBasis("cyclic:3")
        L1 = make_map(structure, store, "L1", 1, 1, 3, bias=False)
        L2 = make_map(structure, store, "L2", 1, 1, 3, bias=False)
        M = dss.materialized_dss_matrix(L1.matrix(), L2.matrix(), 4)
        prod = product_group(symmetric(4), cyclic(3))
        for g in prod.generators:
            P = g.matrix()
            assert np.allclose(P @ M, M @ P, atol=1e-12)

    def test_conv_map_matrix_is_circulant(self):
        store = ParamStore(2)
        L = make_map(dss.CircConv(3), store, "L", 1, 1, 5, bias=False)
        M = L.matrix()
        x = np.random.default_rng(1).standard_normal((1, 1, 1, 5))
        assert np.allclose(L(Tensor(x)).data.ravel(), M @ x.ravel())
        shifted = np.roll(np.roll(M, 1, axis=0), 1, axis=1)
        assert np.allclose(M, shifted)

    def test_matrix_rejects_multichannel(self):
        store = ParamStore(0)
        L = make_map(dss.CircConv(3), store, "L", 2, 2, 5)
        with pytest.raises(ShapeError):
            L.matrix()


class TestHMapValidation:
    def test_conv_kernel_wider_than_d(self):
        with pytest.raises(ShapeError):
            make_map(dss.CircConv(7), ParamStore(0), "L", 1, 1, 4)

    def test_basis_degree_mismatch(self):
        with pytest.raises(ShapeError):
            make_map(dss.SharedBasis("cyclic:3"), ParamStore(0), "L", 1, 1, 4)

    def test_bias_constant_over_positions(self):
        store = ParamStore(0)
        L = make_map(dss.FullDense(), store, "L", 1, 2, 3)
        assert store["L.b"].shape == (2, 1)


class TestConfig:
    def test_json_roundtrip(self):
        cfg = dss.ModelConfig(
            (
                dss.LayerConfig("dss_sum", dss.CircConv(5), 1, 8, use_norm=True, pool=True),
                dss.LayerConfig("dss_aittala", dss.SharedBasis("cyclic:50"), 8, 4),
                dss.LayerConfig("dss_max", dss.FullDense(), 8, 6, collapse_d=True),
            ),
            {"type": "invariant", "mlp": [16], "classes": 3},
            n=10,
            d=100,
        )
        back = dss.ModelConfig.from_json(cfg.to_json())
        assert back.to_json() == cfg.to_json()
        assert isinstance(back.layers[1].h_structure, dss.SharedBasis)
        assert back.layers[0].h_structure.k == 5

    def test_aittala_width_out_doubles(self):
        lc = dss.LayerConfig("dss_aittala", dss.FullDense(), 3, 4)
        assert lc.width_out == 8

    def test_validate_rejects_width_mismatch(self):
        cfg = dss.ModelConfig(
            (
                dss.LayerConfig("siamese", dss.FullDense(), 1, 4),
                dss.LayerConfig("siamese", dss.FullDense(), 5, 4),
            ),
            {"type": "invariant", "classes": 2},
            n=3,
            d=2,
        )
        with pytest.raises(ValueError):
            cfg.validate()

    def test_bad_kind_rejected(self):
        with pytest.raises(ValueError):
            dss.LayerConfig("dss_prod", dss.FullDense(), 1, 4)

    def test_structure_from_tag_roundtrip(self):
        for s in (dss.FullDense(), dss.CircConv(3), dss.SharedBasis("sym:4")):
            back = dss.structure_from_tag(s.tag())
            assert back.tag() == s.tag()


class TestModel:
    def build(self, head, n=4, d=8, norm=False):
        layers = (
            dss.LayerConfig("dss_sum", dss.CircConv(3), 1, 3, use_norm=norm),
            dss.LayerConfig("dss_sum", dss.CircConv(3), 3, 2, use_norm=norm),
        )
        return dss.Model(dss.ModelConfig(layers, head, n=n, d=d), seed=3)

    def test_invariant_head_shape_and_invariance(self):
        model = self.build({"type": "invariant", "mlp": [5], "classes": 3})
        X = np.random.default_rng(0).standard_normal((2, 4, 1, 8))
        out = model(X)
        assert out.shape == (2, 3)
        rng = np.random.default_rng(1)
        for _ in range(10):
            gX = group_action(X, rng.permutation(4), int(rng.integers(8)))
            assert np.allclose(model(gX).data, out.data, atol=1e-8)

    def test_to_n_head_is_equivariant_in_n(self):
        model = self.build({"type": "to_n", "classes": 1})
        X = np.random.default_rng(0).standard_normal((2, 4, 1, 8))
        out = model(X).data
        assert out.shape == (2, 4)
        q = np.array([2, 0, 3, 1])
        assert np.allclose(model(X[:, q]).data, out[:, q], atol=1e-10)

    def test_to_d_head_is_equivariant_in_d(self):
        model = self.build({"type": "to_d"})
        X = np.random.default_rng(0).standard_normal((2, 4, 1, 8))
        out = model(X).data
        assert out.shape == (2, 8)
        assert np.allclose(model(np.roll(X, 3, axis=-1)).data, np.roll(out, 3, axis=-1), atol=1e-10)

    def test_to_nd_head_shape(self):
        model = self.build({"type": "to_nd"})
        X = np.zeros((2, 4, 1, 8))
        assert model(X).shape == (2, 4, 8)

    def test_norm_buffers_update_only_in_training(self):
        model = self.build({"type": "invariant", "classes": 2}, norm=True)
        X = np.random.default_rng(0).standard_normal((4, 4, 1, 8)) * 3
        before = model.norm_buffers["layer0"]["mean"].copy()
        model(X)
        assert np.array_equal(model.norm_buffers["layer0"]["mean"], before)
        model(X, training=True)
        assert not np.array_equal(model.norm_buffers["layer0"]["mean"], before)

    def test_eval_is_deterministic(self):
        model = self.build({"type": "invariant", "classes": 2}, norm=True)
        X = np.random.default_rng(0).standard_normal((4, 4, 1, 8))
        model(X, training=True)
        a = model(X).data
        b = model(X).data
        assert np.array_equal(a, b)

    def test_snapshot_restores_norm_buffers(self):
        model = self.build({"type": "invariant", "classes": 2}, norm=True)
        X = np.random.default_rng(0).standard_normal((4, 4, 1, 8)) * 3
        model(X, training=True)
        snap = model.snapshot()
        out = model(X).data
        model(X * 5, training=True)  # drift both weights' grads and buffers
        model.store["layer0.gamma"].data += 1.0
        model.restore(snap)
        assert np.array_equal(model(X).data, out)

    def test_rejects_wrong_rank(self):
        model = self.build({"type": "invariant", "classes": 2})
        with pytest.raises(ShapeError):
            model(np.zeros((4, 1, 8)))


class TestSeparation:
    def test_witness_values(self):
        X, Y, (fx, fy) = dss.separation_pair()
        assert fx == 1552.0
        assert fy == 1450.0

    def test_pair_not_in_same_product_orbit(self):
        X, Y, _ = dss.separation_pair()
        assert not any(np.array_equal(Y, Z) for Z in dss.product_orbit(X))

    def test_witness_invariant_on_orbit(self):
        X, _, (fx, _) = dss.separation_pair()
        for Z in dss.product_orbit(X):
            assert dss.separation_witness(Z) == fx

    def test_siamese_model_cannot_separate(self):
        X, Y, _ = dss.separation_pair()
        for seed in range(5):
            model = dss.Model(dss.siamese_invariant_config(), seed=seed)
            ox = model(X[None, :, None, :]).item()
            oy = model(Y[None, :, None, :]).item()
            assert abs(ox - oy) < 1e-9
