import math

import numpy as np
import pytest

from avparse.attention import (
    AttentionConfig,
    FeatureSequence,
    cma_block,
    fuse_mean,
    han_schema,
    han_update,
    projection_schema,
    scaled_attention,
)
from avparse.errors import ConfigError, DimensionError, UsageError
from avparse.params import ParamStore
from avparse.tensor import Tensor

from .oracles import attention_oracle, cma_oracle, han_oracle


def make_store(dim, heads=1, seed=0, prefixes=("blk",)):
    schema = {}
    for p in prefixes:
        schema.update(projection_schema(p, dim))
    return ParamStore(schema, seed=seed)


def set_identity(store, prefix, dim):
    for name in ("wq", "wk", "wv", "wo"):
        store[f"{prefix}.{name}"].data[:] = np.eye(dim)


def seq(modality, data, stage="raw"):
    return FeatureSequence(modality, stage, Tensor(np.asarray(data, dtype=np.float64)))


class TestScaledAttention:
    def test_single_key_returns_projected_value(self):
        dim, rng = 4, np.random.default_rng(0)
        store = make_store(dim)
        k = Tensor(rng.standard_normal((1, dim)))
        v = Tensor(rng.standard_normal((1, dim)))
        q = Tensor(rng.standard_normal((3, dim)))
        out = scaled_attention(q, k, v, store, "blk", AttentionConfig(1, dim))
        expected = v.data @ store["blk.wv"].data @ store["blk.wo"].data
        for row in out.data:
            np.testing.assert_allclose(row, expected[0], atol=1e-12)

    def test_orthogonal_query_uniform_mix(self):
        dim = 4
        store = make_store(dim)
        set_identity(store, "blk", dim)
        k = Tensor(np.array([[1.0, 0, 0, 0], [0, 1.0, 0, 0]]))
        v = Tensor(np.array([[2.0, 0, 0, 0], [0, 4.0, 0, 0]]))
        q = Tensor(np.array([[0, 0, 1.0, 0]]))  # zero logit against both keys
        out = scaled_attention(q, k, v, store, "blk", AttentionConfig(1, dim))
        np.testing.assert_allclose(out.data, v.data.mean(axis=0, keepdims=True), atol=1e-12)

    def test_hand_derived_two_key_case(self):
        dim = 2
        store = make_store(dim)
        set_identity(store, "blk", dim)
        q = Tensor(np.array([[1.0, 0.0]]))
        kv = Tensor(np.eye(2))
        out = scaled_attention(q, kv, kv, store, "blk", AttentionConfig(1, dim))
        s = 1.0 / math.sqrt(2.0)
        w1 = math.exp(s) / (math.exp(s) + 1.0)
        expected = np.array([[w1, 1.0 - w1]])
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_rows_stochastic(self):
        dim, rng = 8, np.random.default_rng(1)
        store = make_store(dim)
        q = Tensor(rng.standard_normal((5, dim)))
        kv = Tensor(rng.standard_normal((7, dim)))
        collected = []
        scaled_attention(q, kv, kv, store, "blk", AttentionConfig(2, dim), weights_out=collected)
        assert len(collected) == 2
        for w in collected:
            np.testing.assert_allclose(w.sum(axis=1), np.ones(5), atol=1e-9)

    def test_heads_must_divide_dim(self):
        with pytest.raises(ConfigError):
            AttentionConfig(heads=3, model_dim=8)

    def test_oracle_match_multihead(self):
        dim, rng = 8, np.random.default_rng(2)
        store = make_store(dim, seed=5)
        q = rng.standard_normal((3, dim))
        kv = rng.standard_normal((6, dim))
        out = scaled_attention(
            Tensor(q), Tensor(kv), Tensor(kv), store, "blk", AttentionConfig(2, dim)
        )
        expected = attention_oracle(
            q, kv, kv,
            store["blk.wq"].data, store["blk.wk"].data,
            store["blk.wv"].data, store["blk.wo"].data, heads=2,
        )
        np.testing.assert_allclose(out.data, expected, atol=1e-12)

    def test_width_mismatch(self):
        store = make_store(4)
        with pytest.raises(DimensionError):
            scaled_attention(
                Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))), Tensor(np.ones((2, 4))),
                store, "blk", AttentionConfig(1, 4),
            )


class TestHanUpdate:
    def _store(self, dim, seed=0):
        return ParamStore(han_schema(dim), seed=seed)

    def test_zero_value_projections_residual_identity(self):
        dim, rng = 4, np.random.default_rng(3)
        store = self._store(dim)
        for branch in ("self_a", "cross_av", "self_v", "cross_va"):
            store[f"han.{branch}.wv"].data[:] = 0.0
        fa = seq("audio", rng.standard_normal((3, dim)))
        fv = seq("visual", rng.standard_normal((3, dim)))
        out_a, out_v = han_update(fa, fv, store, AttentionConfig(1, dim))
        np.testing.assert_array_equal(out_a.x.data, fa.x.data)
        np.testing.assert_array_equal(out_v.x.data, fv.x.data)

    def test_single_segment_identity_projections(self):
        dim, rng = 4, np.random.default_rng(4)
        store = self._store(dim)
        for branch in ("self_a", "cross_av", "self_v", "cross_va"):
            set_identity(store, f"han.{branch}", dim)
        fa = seq("audio", rng.standard_normal((1, dim)))
        fv = seq("visual", rng.standard_normal((1, dim)))
        out_a, out_v = han_update(fa, fv, store, AttentionConfig(1, dim))
        np.testing.assert_array_equal(out_a.x.data, 2 * fa.x.data + fv.x.data)
        np.testing.assert_array_equal(out_v.x.data, 2 * fv.x.data + fa.x.data)

    def test_transcription_oracle(self):
        dim, rng = 4, np.random.default_rng(5)
        store = self._store(dim, seed=11)
        fa = rng.standard_normal((3, dim))
        fv = rng.standard_normal((3, dim))
        out_a, out_v = han_update(
            seq("audio", fa), seq("visual", fv), store, AttentionConfig(1, dim)
        )
        exp_a, exp_v = han_oracle(fa, fv, store, heads=1)
        np.testing.assert_allclose(out_a.x.data, exp_a, atol=1e-12)
        np.testing.assert_allclose(out_v.x.data, exp_v, atol=1e-12)
        assert out_a.stage == "han" and out_v.stage == "han"

    def test_shape_mismatch(self):
        store = self._store(4)
        with pytest.raises(DimensionError):
            han_update(
                seq("audio", np.ones((3, 4))), seq("visual", np.ones((2, 4))),
                store, AttentionConfig(1, 4),
            )

    def test_branch_scales_zero_all_is_identity(self):
        dim, rng = 4, np.random.default_rng(6)
        store = self._store(dim)
        fa = seq("audio", rng.standard_normal((3, dim)))
        fv = seq("visual", rng.standard_normal((3, dim)))
        out_a, out_v = han_update(
            fa, fv, store, AttentionConfig(1, dim), branch_scales=(0.0, 0.0, 0.0, 0.0)
        )
        np.testing.assert_array_equal(out_a.x.data, fa.x.data)
        np.testing.assert_array_equal(out_v.x.data, fv.x.data)

    def test_permutation_equivariance(self):
        dim, rng = 4, np.random.default_rng(7)
        store = self._store(dim, seed=13)
        fa = rng.standard_normal((5, dim))
        fv = rng.standard_normal((5, dim))
        perm = rng.permutation(5)
        base_a, base_v = han_update(
            seq("audio", fa), seq("visual", fv), store, AttentionConfig(1, dim)
        )
        perm_a, perm_v = han_update(
            seq("audio", fa[perm]), seq("visual", fv[perm]), store, AttentionConfig(1, dim)
        )
        np.testing.assert_allclose(perm_a.x.data, base_a.x.data[perm], atol=1e-12)
        np.testing.assert_allclose(perm_v.x.data, base_v.x.data[perm], atol=1e-12)


class TestCmaBlock:
    def _store(self, dim, seed=0):
        return ParamStore(projection_schema("cma.h", dim), seed=seed)

    def test_duplicate_keys_invariance(self):
        dim, rng = 4, np.random.default_rng(8)
        store = self._store(dim)
        set_identity(store, "cma.h", dim)
        f = rng.standard_normal((3, dim))
        queries = seq("audio", rng.standard_normal((3, dim)), stage="han")
        out = cma_block(
            queries, seq("audio", f, "han"), seq("visual", f, "han"),
            store, AttentionConfig(1, dim), "cma.h",
        )
        single = attention_oracle(
            queries.x.data, f, f, np.eye(dim), np.eye(dim), np.eye(dim), np.eye(dim), 1
        )
        np.testing.assert_allclose(out.x.data, single, atol=1e-12)

    def test_softmax_saturation_picks_dominant_row(self):
        dim = 4
        store = self._store(dim)
        set_identity(store, "cma.h", dim)
        fa = np.zeros((2, dim))
        fa[0, 0] = 50.0  # overwhelming logit against the aligned query
        fv = np.zeros((2, dim))
        fv[1, 1] = 1.0
        queries = seq("audio", np.array([[50.0, 0, 0, 0]]), stage="han")
        out = cma_block(
            queries, seq("audio", fa, "han"), seq("visual", fv, "han"),
            store, AttentionConfig(1, dim), "cma.h",
        )
        np.testing.assert_allclose(out.x.data[0], fa[0], rtol=1e-9)

    def test_transcription_oracle(self):
        dim, rng = 4, np.random.default_rng(9)
        store = self._store(dim, seed=17)
        fa = rng.standard_normal((2, dim))
        fv = rng.standard_normal((2, dim))
        queries = rng.standard_normal((2, dim))
        out = cma_block(
            seq("audio", queries, "han"), seq("audio", fa, "han"), seq("visual", fv, "han"),
            store, AttentionConfig(2, dim), "cma.h",
        )
        expected = cma_oracle(queries, fa, fv, store, heads=2, prefix="cma.h")
        np.testing.assert_allclose(out.x.data, expected, atol=1e-12)
        assert out.stage == "cma"

    def test_modality_dim_mismatch(self):
        store = self._store(4)
        with pytest.raises(DimensionError):
            cma_block(
                seq("audio", np.ones((2, 4)), "han"),
                seq("audio", np.ones((2, 4)), "han"),
                seq("visual", np.ones((3, 4)), "han"),
                store, AttentionConfig(1, 4), "cma.h",
            )

    def test_permutation_equivariance(self):
        dim, rng = 4, np.random.default_rng(10)
        store = self._store(dim, seed=19)
        fa, fv = rng.standard_normal((4, dim)), rng.standard_normal((4, dim))
        q = rng.standard_normal((4, dim))
        perm = rng.permutation(4)
        base = cma_block(
            seq("audio", q, "han"), seq("audio", fa, "han"), seq("visual", fv, "han"),
            store, AttentionConfig(1, dim), "cma.h",
        )
        permuted = cma_block(
            seq("audio", q[perm], "han"), seq("audio", fa[perm], "han"),
            seq("visual", fv[perm], "han"), store, AttentionConfig(1, dim), "cma.h",
        )
        np.testing.assert_allclose(permuted.x.data, base.x.data[perm], atol=1e-12)


class TestFuseMean:
    def test_idempotent_on_equal_inputs(self):
        x = np.random.default_rng(11).standard_normal((3, 4))
        out = fuse_mean(seq("audio", x, "cma"), seq("audio", x.copy(), "cma"))
        np.testing.assert_array_equal(out.x.data, x)
        assert out.stage == "fused"

    def test_zero_halves(self):
        x = np.random.default_rng(12).standard_normal((3, 4))
        out = fuse_mean(seq("audio", np.zeros((3, 4)), "cma"), seq("audio", x, "cma"))
        np.testing.assert_allclose(out.x.data, x / 2, atol=1e-15)

    def test_commutes(self):
        rng = np.random.default_rng(13)
        a, b = rng.standard_normal((3, 4)), rng.standard_normal((3, 4))
        ab = fuse_mean(seq("visual", a, "cma"), seq("visual", b, "cma"))
        ba = fuse_mean(seq("visual", b, "cma"), seq("visual", a, "cma"))
        np.testing.assert_array_equal(ab.x.data, ba.x.data)

    def test_modality_mismatch(self):
        with pytest.raises(UsageError):
            fuse_mean(seq("audio", np.ones((2, 2)), "cma"), seq("visual", np.ones((2, 2)), "cma"))
