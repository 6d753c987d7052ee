import numpy as np
import pytest

from ufin.encoder import (
    AnonymousTable,
    EmbeddingCache,
    HashEncoder,
    SemanticFusion,
    tokenize,
)
from ufin.errors import DataError
from ufin.numeric import Tensor, layer_norm, mul, tsum

from helpers import check_gradients

RNG = np.random.default_rng(11)


def test_tokenize_lowercases_and_splits_punctuation():
    assert tokenize('There is a user, whose name is "HOUONE".') == [
        "there", "is", "a", "user", "whose", "name", "is", "houone",
    ]


def test_hash_encoder_deterministic():
    enc = HashEncoder(d_v=32, seed=3)
    other = HashEncoder(d_v=32, seed=3)
    text = "glacier07 noon brand0x0001"
    assert np.array_equal(enc.pooled(text), other.pooled(text))
    assert not np.array_equal(enc.pooled(text), HashEncoder(d_v=32, seed=4).pooled(text))


def test_hash_encoder_pools_by_sum():
    enc = HashEncoder(d_v=32, seed=3)
    one = enc.pooled("ember12")
    two = enc.pooled("ember12 ember12")
    assert np.array_equal(two, 2.0 * one)


def test_layer_norm_of_constant_cache_entry_is_zero():
    pooled = Tensor(np.full((1, 8), 3.7))
    out = layer_norm(pooled, Tensor(np.ones((1, 8))), Tensor(np.zeros((1, 8))))
    assert np.allclose(out.values, 0.0)


def test_normalized_hash_rows_have_zero_mean():
    enc = HashEncoder(d_v=64, seed=3)
    texts = [f"arcade{i:02d} botany{i:02d} noon extra words" for i in range(20)]
    pooled = Tensor(np.stack([enc.pooled(t) for t in texts]))
    out = layer_norm(pooled, Tensor(np.ones((1, 64))), Tensor(np.zeros((1, 64))))
    assert np.max(np.abs(out.values.mean(axis=1))) < 1e-9


# -- UFEC cache ----------------------------------------------------------------


def test_cache_roundtrip_bit_exact(tmp_path):
    cache = EmbeddingCache(16)
    for rid in (0, 7, 123456789):
        cache.put(rid, RNG.normal(size=16).astype(np.float32))
    path = tmp_path / "cache.ufec"
    cache.save(path)
    loaded = EmbeddingCache.load(path)
    assert loaded.d_v == 16 and len(loaded) == 3
    for rid in (0, 7, 123456789):
        assert np.array_equal(loaded.get(rid), cache.get(rid))


def test_cache_miss_reports_row_id():
    cache = EmbeddingCache(4)
    with pytest.raises(DataError, match="99"):
        cache.get(99)


def test_cache_bad_magic(tmp_path):
    path = tmp_path / "bad.ufec"
    path.write_bytes(b"XXXX" + b"\x00" * 20)
    with pytest.raises(DataError, match="magic"):
        EmbeddingCache.load(path)


def test_cache_truncation_detected(tmp_path):
    cache = EmbeddingCache(4)
    cache.put(1, np.ones(4))
    path = tmp_path / "cache.ufec"
    cache.save(path)
    path.write_bytes(path.read_bytes()[:-3])
    with pytest.raises(DataError, match="truncated"):
        EmbeddingCache.load(path)


# -- semantic fusion -------------------------------------------------------------


def test_single_expert_has_unit_gate():
    fusion = SemanticFusion(1, 6, RNG)
    s = Tensor(RNG.normal(size=(3, 6)))
    z, gate = fusion(s)
    assert np.allclose(gate.values, 1.0)
    expected = np.maximum(s.values @ fusion.weights[0].values.T + fusion.biases[0].values, 0.0)
    assert np.allclose(z.values, expected)


def test_zero_gate_weights_give_uniform_gate():
    fusion = SemanticFusion(4, 6, RNG)
    fusion.gate.values[:] = 0.0
    _, gate = fusion(Tensor(RNG.normal(size=(5, 6))))
    assert np.allclose(gate.values, 0.25)


def test_gate_is_probability_vector():
    fusion = SemanticFusion(3, 8, RNG)
    _, gate = fusion(Tensor(RNG.normal(size=(10, 8))))
    assert np.all(gate.values > 0)
    assert np.allclose(gate.values.sum(axis=1), 1.0, atol=1e-9)


def test_fusion_gradients_match_finite_differences():
    fusion = SemanticFusion(2, 5, RNG)
    s = Tensor(RNG.normal(size=(3, 5)), requires_grad=True)
    probe = Tensor(RNG.normal(size=(3, 5)))
    params = [s, fusion.gate, *fusion.weights, *fusion.biases]
    check_gradients(lambda: tsum(mul(fusion(s)[0], probe)), params)


# -- anonymous fusion -------------------------------------------------------------


def _table():
    return AnonymousTable(
        {"user_id": {"u0": 0, "u1": 1}, "item_id": {"i0": 0}}, d_v=6, d_a=3, rng=RNG
    )


def test_no_anonymous_fields_identity():
    table = AnonymousTable({}, d_v=6, d_a=3, rng=RNG)
    z = Tensor(RNG.normal(size=(2, 6)))
    assert np.array_equal(table.fuse(z, {}).values, z.values)


def test_zero_embeddings_identity():
    table = _table()
    table.tables["user_id"].values[:] = 0.0
    z = Tensor(RNG.normal(size=(2, 6)))
    fused = table.fuse(z, {"user_id": np.asarray([0, 1])})
    assert np.allclose(fused.values, z.values)


def test_unseen_id_contributes_nothing():
    table = _table()
    z = Tensor(RNG.normal(size=(2, 6)))
    idx = np.asarray([table.lookup_index("user_id", "stranger"), 0])
    assert idx[0] == -1
    fused = table.fuse(z, {"user_id": idx})
    assert np.array_equal(fused.values[0], z.values[0])
    assert not np.array_equal(fused.values[1], z.values[1])


def test_fusion_is_additive():
    table = _table()
    z = Tensor(RNG.normal(size=(2, 6)))
    idx = {"user_id": np.asarray([0, 1]), "item_id": np.asarray([0, -1])}
    fused = table.fuse(z, idx)
    contribution = fused.values - z.values
    expected = np.zeros_like(z.values)
    expected += table.tables["user_id"].values[[0, 1]] @ table.projections["user_id"].values.T
    expected[0] += table.tables["item_id"].values[0] @ table.projections["item_id"].values.T
    assert np.allclose(contribution, expected)


def test_unknown_field_rejected():
    table = _table()
    with pytest.raises(DataError):
        table.fuse(Tensor(np.zeros((1, 6))), {"nope": np.asarray([0])})
    with pytest.raises(DataError):
        table.lookup_index("nope", "x")


def test_anonymous_gradients():
    table = _table()
    z = Tensor(RNG.normal(size=(2, 6)), requires_grad=True)
    probe = Tensor(RNG.normal(size=(2, 6)))
    idx = {"user_id": np.asarray([0, 1])}
    params = [z, table.tables["user_id"], table.projections["user_id"]]
    check_gradients(lambda: tsum(mul(table.fuse(z, idx), probe)), params)
