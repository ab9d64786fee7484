import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from act_sr.cnn import RCAB, CNNBlock
from act_sr.config import ModelConfig
from act_sr.errors import GeometryError
from act_sr.fusion import FusionBlock, lateral
from act_sr.tensor import Tensor
from act_sr.tokens import tokenize

from conftest import tiny_config
from gradcheck import max_rel_error, projected


def test_zero_rcab_is_identity(rng):
    x = rng.standard_normal((4, 5, 6))
    assert np.array_equal(RCAB(4, 2, rng).zero_()(Tensor(x)).data, x)


def test_rcab_channel_attention_hand_oracle():
    # c=2 on a 1×1 map, both 3×3 convs pass the centre tap through unchanged
    r = np.random.default_rng(0)
    rcab = RCAB(2, 2, r)
    for conv in (rcab.conv1, rcab.conv2):
        conv.weight.data[:] = 0
        conv.weight.data[0, 0, 1, 1] = conv.weight.data[1, 1, 1, 1] = 1.0
        conv.bias.data[:] = 0
    rcab.ca_down.weight.data[:] = np.array([0.5, -0.25]).reshape(1, 2, 1, 1)
    rcab.ca_down.bias.data[:] = 0.1
    rcab.ca_up.weight.data[:] = np.array([2.0, -1.0]).reshape(2, 1, 1, 1)
    rcab.ca_up.bias.data[:] = [0.0, 0.3]
    x = np.array([3.0, 1.0]).reshape(2, 1, 1)
    hidden = max(0.0, 0.5 * 3.0 - 0.25 * 1.0 + 0.1)
    gate = [1 / (1 + math.exp(-(2.0 * hidden))), 1 / (1 + math.exp(-(-1.0 * hidden + 0.3)))]
    np.testing.assert_allclose(rcab.channel_weights(Tensor(x)).data.reshape(-1), gate, rtol=1e-14)
    np.testing.assert_allclose(rcab(Tensor(x)).data.reshape(-1), [3.0 + 3.0 * gate[0], 1.0 + 1.0 * gate[1]], rtol=1e-14)


@given(st.integers(0, 2**32 - 1), st.integers(1, 9), st.integers(1, 9))
def test_rcab_shape_and_gate_range(seed, h, w):
    r = np.random.default_rng(seed)
    rcab = RCAB(4, 2, r)
    x = Tensor(r.standard_normal((4, h, w)) * 3)
    gate = rcab.channel_weights(x).data
    assert ((gate > 0) & (gate < 1)).all()
    assert rcab(x).shape == (4, h, w)


def test_rcab_default_shape(rng):
    assert RCAB(64, 16, rng)(Tensor(rng.standard_normal((64, 48, 48)))).shape == (64, 48, 48)


def test_zero_cnn_block_is_identity(rng):
    x = rng.standard_normal((4, 6, 6))
    assert np.array_equal(CNNBlock(4, 3, 2, rng).zero_()(Tensor(x)).data, x)


def test_cnn_block_parameter_count(rng):
    rcab = 2 * (3 * 3 * 64 * 64 + 64) + (64 * 4 + 4) + (4 * 64 + 64)
    assert CNNBlock(64, 12, 16, rng).num_parameters() == 12 * rcab + (3 * 3 * 64 * 64 + 64)


@pytest.mark.parametrize("seed", range(5))
def test_rcab_gradient(seed):
    r = np.random.default_rng(seed)
    rcab = RCAB(4, 2, r)
    x = Tensor(r.standard_normal((2, 4, 5, 5)))
    err = max_rel_error(projected(lambda: rcab(x), x.shape, r), [x] + rcab.parameters(), r)
    assert err < 1e-5


# ---------------------------------------------------------------- fusion


def _branches(rng, cfg, h=12, w=12):
    grid = tokenize(Tensor(rng.standard_normal((cfg.c, h, w))), cfg.t)
    return grid, Tensor(rng.standard_normal((cfg.c, h, w)))


def test_default_fusion_widths(rng):
    cfg = ModelConfig()
    mid = FusionBlock(cfg, False, rng)
    assert mid.stack[0].conv1.weight.shape == (128, 128, 1, 1)
    last = FusionBlock(cfg, True, rng)
    assert last.out.weight.shape == (64, 128, 3, 3)


@pytest.mark.parametrize("lateral_mode", ["concat", "sum"])
def test_bidirectional_delta_shapes(rng, lateral_mode):
    cfg = tiny_config(lateral=lateral_mode)
    grid, feat = _branches(rng, cfg)
    d_tokens, d_feat = FusionBlock(cfg, False, rng)(grid, feat)
    assert d_tokens.shape == grid.tokens.shape
    assert d_feat.shape == feat.shape


@pytest.mark.parametrize("direction,expect", [("t_to_c", (False, True)), ("c_to_t", (True, False))])
def test_unidirectional_routes_one_side(rng, direction, expect):
    cfg = tiny_config(fusion=direction)
    grid, feat = _branches(rng, cfg)
    d_tokens, d_feat = FusionBlock(cfg, False, rng)(grid, feat)
    assert (d_tokens is not None, d_feat is not None) == expect


def test_last_fusion_returns_c_channels(rng):
    cfg = tiny_config()
    grid, feat = _branches(rng, cfg)
    assert FusionBlock(cfg, True, rng)(grid, feat).shape == (cfg.c, 12, 12)


def test_zero_fusion_deltas_are_zero(rng):
    cfg = tiny_config()
    grid, feat = _branches(rng, cfg)
    d_tokens, d_feat = FusionBlock(cfg, False, rng).zero_()(grid, feat)
    assert not d_tokens.data.any() and not d_feat.data.any()


def test_lateral_mismatch(rng):
    with pytest.raises(GeometryError):
        lateral(Tensor(np.zeros((2, 3, 3))), Tensor(np.zeros((2, 3, 4))), "concat")


@pytest.mark.parametrize("seed", range(5))
@pytest.mark.parametrize("last", [False, True])
def test_fusion_gradient(seed, last):
    r = np.random.default_rng(seed)
    cfg = tiny_config(c=4, heads=2)
    block = FusionBlock(cfg, last, r)
    grid, feat = _branches(r, cfg, 6, 6)
    tokens = grid.tokens

    def run():
        out = block(grid.with_tokens(tokens), feat)
        return out if last else out[0] * 1.0 + out[1].reshape(out[0].shape) * 0.5

    shape = (cfg.c, 6, 6) if last else tokens.shape
    err = max_rel_error(projected(run, shape, r), [tokens, feat] + block.parameters()[::2], r, n_coords=6)
    assert err < 1e-5
