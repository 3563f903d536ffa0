import math

import numpy as np
import pytest
import torch

from conftest import finite_difference_error
from hydrovision.errors import ShapeError
from hydrovision.vit import (
    VitConfig,
    VitEncoder,
    elevation_adjacency,
    embed_patches,
    positional_encoding,
    standardize_patches,
)


def _encoder(seed=0, **kw):
    torch.manual_seed(seed)
    return VitEncoder(VitConfig(**kw)).double()


class TestEmbedPatches:
    def test_zero_projection(self):
        p = torch.randn(5, 16, 16, dtype=torch.float64)
        out = embed_patches(p, torch.zeros(64, 256, dtype=torch.float64), torch.zeros(64, dtype=torch.float64))
        assert torch.equal(out, torch.zeros(5, 64, dtype=torch.float64))

    def test_identity_projection(self):
        raw = np.random.default_rng(0).normal(50, 10, (3, 16, 16))
        p = standardize_patches(raw)
        out = embed_patches(p, torch.eye(256, dtype=torch.float64))
        expected = (raw - raw.mean()) / raw.std()
        np.testing.assert_allclose(out.numpy(), expected.reshape(3, 256), atol=1e-12)

    def test_shape(self):
        p = torch.randn(6, 16, 16, dtype=torch.float64)
        assert embed_patches(p, torch.randn(64, 256, dtype=torch.float64)).shape == (6, 64)

    def test_wrong_patch_size(self):
        with pytest.raises(ShapeError):
            embed_patches(torch.zeros(2, 8, 8), torch.zeros(4, 64))

    def test_flat_raster_standardizes_to_zero(self):
        assert torch.equal(standardize_patches(np.full((1, 16, 16), 3.0)), torch.zeros(1, 16, 16, dtype=torch.float64))


class TestPositionalEncoding:
    def test_position_zero(self):
        pe = positional_encoding(1, 8)
        assert pe[0].tolist() == [0.0, 1.0] * 4

    def test_position_one_first_pair(self):
        for d in (2, 8, 64):
            pe = positional_encoding(2, d)
            assert pe[1, 0].item() == pytest.approx(0.84147, abs=1e-5)
            assert pe[1, 1].item() == pytest.approx(0.54030, abs=1e-5)

    def test_matches_direct_formula(self):
        L, d = 7, 10
        pe = positional_encoding(L, d)
        for pos in range(L):
            for i in range(d // 2):
                angle = pos / 10000 ** (2 * i / d)
                assert pe[pos, 2 * i].item() == pytest.approx(math.sin(angle), abs=1e-14)
                assert pe[pos, 2 * i + 1].item() == pytest.approx(math.cos(angle), abs=1e-14)

    def test_range(self):
        pe = positional_encoding(500, 64)
        assert pe.abs().max() <= 1.0

    def test_odd_dim(self):
        with pytest.raises(ShapeError):
            positional_encoding(4, 7)


class TestTransformerEncoder:
    def test_single_token_attends_to_itself(self):
        enc = _encoder(embed_dim=16, num_heads=4)
        _, weights = enc(torch.randn(1, 16, 16, dtype=torch.float64), return_weights=True)
        for w in weights:
            assert torch.equal(w, torch.ones_like(w))

    def test_attention_rows_sum_to_one(self):
        enc = _encoder(embed_dim=16, num_heads=4)
        _, weights = enc(torch.randn(6, 16, 16, dtype=torch.float64), return_weights=True)
        for w in weights:
            assert torch.allclose(w.sum(-1), torch.ones((), dtype=w.dtype), atol=1e-6)

    def test_permutation_equivariance(self):
        enc = _encoder(embed_dim=16, num_heads=4)
        x = torch.randn(6, 16, dtype=torch.float64)
        perm = torch.randperm(6)
        out = enc.encode(x)
        out_perm = enc.encode(x[perm])
        assert torch.allclose(out_perm, out[perm], atol=1e-12)

    def test_output_shape_and_determinism(self):
        enc = _encoder(embed_dim=16, num_heads=4, num_layers=2)
        p = torch.randn(6, 16, 16, dtype=torch.float64)
        a, b = enc(p), enc(p)
        assert a.shape == (6, 16)
        assert torch.equal(a, b)
        assert torch.isfinite(a).all()

    def test_config_rejects_indivisible_heads(self):
        with pytest.raises(ShapeError):
            VitConfig(embed_dim=10, num_heads=8)

    def test_defaults(self):
        cfg = VitConfig()
        assert cfg.num_heads == 8 and cfg.patch_size == 16
        assert cfg.ffn_dim == 4 * cfg.embed_dim
        assert cfg.similarity_temperature == pytest.approx(math.sqrt(cfg.embed_dim))


def _brute_softmax_gram(tokens, idx, temperature):
    s = [tokens[i] for i in idx]
    n = len(s)
    out = np.empty((n, n))
    for i in range(n):
        logits = [sum(a * b for a, b in zip(s[i], s[j])) / temperature for j in range(n)]
        m = max(logits)
        ex = [math.exp(v - m) for v in logits]
        tot = sum(ex)
        out[i] = [e / tot for e in ex]
    return out


class TestElevationAdjacency:
    def test_single_station(self):
        a = elevation_adjacency(torch.randn(4, 8, dtype=torch.float64), [2], 1.0)
        assert a.tolist() == [[1.0]]

    def test_identical_tokens(self):
        tokens = torch.randn(4, 8, dtype=torch.float64)
        a = elevation_adjacency(tokens, [1, 1], 2.0)
        assert torch.allclose(a, torch.full((2, 2), 0.5, dtype=torch.float64), atol=0)

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        tokens = rng.normal(size=(8, 6))
        idx = rng.choice(8, size=3, replace=False).tolist()
        a = elevation_adjacency(torch.as_tensor(tokens), idx, math.sqrt(6))
        np.testing.assert_allclose(a.numpy(), _brute_softmax_gram(tokens.tolist(), idx, math.sqrt(6)), atol=1e-9)

    def test_out_of_range(self):
        with pytest.raises(ShapeError):
            elevation_adjacency(torch.randn(4, 8), [0, 4], 1.0)

    def test_row_stochastic_positive(self):
        enc = _encoder(embed_dim=16, num_heads=4)
        tokens = enc(standardize_patches(np.random.default_rng(0).normal(size=(9, 16, 16))))
        a = elevation_adjacency(tokens, [0, 3, 5, 8, 8], 4.0)
        assert torch.allclose(a.sum(-1), torch.ones(5, dtype=torch.float64), atol=1e-6)
        assert (a > 0).all()

    def test_pipeline_gradient_wrt_projection(self):
        enc = _encoder(embed_dim=8, num_heads=2, num_layers=1)
        patches = standardize_patches(np.random.default_rng(1).normal(size=(4, 16, 16)))
        weights = torch.as_tensor(np.random.default_rng(2).normal(size=(3, 3)))

        def loss():
            return (elevation_adjacency(enc(patches), [0, 1, 3], math.sqrt(8)) * weights).sum()

        err = finite_difference_error(loss, list(enc.projection.parameters()), max_entries=200)
        assert err < 1e-4
