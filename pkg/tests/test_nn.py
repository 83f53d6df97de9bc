"""Attention and transformer-layer behavior checks."""

import numpy as np
import pytest

from doclink import tensor
from doclink.errors import ConfigError
from doclink.nn import (
    AttentionParams,
    TransformerLayerParams,
    linear,
    multihead_attention,
    transformer_layer,
)
from doclink.rng import RngStream
from doclink.tensor import Tensor

from test_tensor import central_diff


def make_attention(dim, seed=0):
    return AttentionParams(dim, RngStream(seed))


class TestMultiheadAttention:
    def test_single_token_passes_through_value_path(self):
        """With one token the attention weight is 1, so the output is just
        the value projection followed by the output projection."""
        dim = 4
        p = make_attention(dim)
        x = Tensor(np.random.default_rng(0).normal(size=(1, dim)))
        out = multihead_attention(x, x, x, p, heads=2)
        value = linear(x, p.wv, p.bv)
        expected = linear(value, p.wo, p.bo)
        np.testing.assert_allclose(out.data, expected.data, atol=1e-12)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(1)
        dim, length = 6, 5
        p = make_attention(dim, seed=3)
        x = rng.normal(size=(length, dim))
        perm = rng.permutation(length)
        out = multihead_attention(Tensor(x), Tensor(x), Tensor(x), p, heads=3)
        out_perm = multihead_attention(
            Tensor(x[perm]), Tensor(x[perm]), Tensor(x[perm]), p, heads=3
        )
        np.testing.assert_allclose(out.data[perm], out_perm.data, atol=1e-12)

    def test_permutation_equivariance_with_mask(self):
        rng = np.random.default_rng(2)
        dim, length = 4, 6
        p = make_attention(dim, seed=4)
        x = rng.normal(size=(length, dim))
        mask = np.array([True, True, False, True, False, True])
        perm = rng.permutation(length)
        out = multihead_attention(Tensor(x), Tensor(x), Tensor(x), p, heads=2, mask=mask)
        out_perm = multihead_attention(
            Tensor(x[perm]), Tensor(x[perm]), Tensor(x[perm]), p, heads=2, mask=mask[perm]
        )
        np.testing.assert_allclose(out.data[perm], out_perm.data, atol=1e-12)

    def test_masked_keys_have_no_influence(self):
        """Changing a masked key's features leaves unmasked outputs alone."""
        rng = np.random.default_rng(3)
        dim = 4
        p = make_attention(dim, seed=5)
        x = rng.normal(size=(3, dim))
        mask = np.array([True, True, False])
        base = multihead_attention(Tensor(x), Tensor(x), Tensor(x), p, heads=2, mask=mask)
        x2 = x.copy()
        x2[2] = 99.0
        bumped = multihead_attention(Tensor(x2), Tensor(x2), Tensor(x2), p, heads=2, mask=mask)
        np.testing.assert_allclose(base.data[:2], bumped.data[:2], atol=1e-12)

    def test_gradients_tiny_instance(self):
        """L=3, d=4, heads=2 gradient check against finite differences."""
        rng = np.random.default_rng(4)
        p = make_attention(4, seed=6)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)))
        leaves = [x, p.wq, p.wk, p.wv, p.wo, p.bq, p.bk, p.bv, p.bo]

        def build():
            return (multihead_attention(x, x, x, p, heads=2) * w).sum()

        loss = build()
        tensor.backward(loss)
        for leaf in leaves:
            fd = central_diff(build, leaf)
            np.testing.assert_allclose(leaf.grad, fd, rtol=1e-4, atol=1e-7)

    def test_batched_matches_loop(self):
        rng = np.random.default_rng(5)
        dim = 4
        p = make_attention(dim, seed=7)
        xs = rng.normal(size=(3, 5, dim))
        mask = rng.uniform(size=(3, 5)) < 0.8
        mask[:, 0] = True
        batched = multihead_attention(Tensor(xs), Tensor(xs), Tensor(xs), p, heads=2, mask=mask)
        for b in range(3):
            single = multihead_attention(
                Tensor(xs[b]), Tensor(xs[b]), Tensor(xs[b]), p, heads=2, mask=mask[b]
            )
            np.testing.assert_allclose(batched.data[b], single.data, atol=1e-12)

    def test_indivisible_heads_rejected(self):
        p = make_attention(4, seed=8)
        x = Tensor(np.zeros((2, 4)))
        with pytest.raises(ConfigError):
            multihead_attention(x, x, x, p, heads=3)


class TestTransformerLayer:
    def test_shape_preserved_and_deterministic(self):
        rng = np.random.default_rng(6)
        p = TransformerLayerParams(6, RngStream(9))
        x = Tensor(rng.normal(size=(4, 6)))
        one = transformer_layer(x, p, heads=2)
        two = transformer_layer(x, p, heads=2)
        assert one.shape == (4, 6)
        np.testing.assert_array_equal(one.data, two.data)

    def test_permutation_equivariance(self):
        rng = np.random.default_rng(7)
        p = TransformerLayerParams(4, RngStream(10))
        x = rng.normal(size=(5, 4))
        perm = rng.permutation(5)
        out = transformer_layer(Tensor(x), p, heads=2)
        out_perm = transformer_layer(Tensor(x[perm]), p, heads=2)
        np.testing.assert_allclose(out.data[perm], out_perm.data, atol=1e-10)

    def test_gradients_through_layer(self):
        rng = np.random.default_rng(8)
        p = TransformerLayerParams(4, RngStream(11))
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        w = Tensor(rng.normal(size=(3, 4)))
        leaves = [x, p.ff_w1, p.ff_b2, p.ln_attn.gain, p.ln_ff.bias, p.attn.wq]

        def build():
            return (transformer_layer(x, p, heads=2) * w).sum()

        tensor.backward(build())
        for leaf in leaves:
            fd = central_diff(build, leaf)
            np.testing.assert_allclose(leaf.grad, fd, rtol=1e-4, atol=1e-7)

    def test_named_parameters_unique_and_complete(self):
        p = TransformerLayerParams(4, RngStream(12))
        names = [name for name, _ in p.named("layer0")]
        assert len(names) == len(set(names))
        assert len(names) == 8 + 2 + 4 + 2  # attention, ln_attn, ffn, ln_ff
