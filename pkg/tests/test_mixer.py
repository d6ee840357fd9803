import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imts_mixer.autograd import Tensor, backward, tsum
from imts_mixer.config import ConfigError
from imts_mixer.mixer import MixerBlock, MixerStack


def _zero(module):
    for name, p in module.parameters().items():
        if not name.endswith("gain"):
            p.data[...] = 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 3), st.integers(1, 4), st.integers(1, 6), st.integers(0, 2**31))
def test_zero_weight_doubling(L, C, D, seed):
    rng = np.random.default_rng(seed)
    stack = MixerStack(C, D, D, L, rng)
    _zero(stack)
    z = rng.normal(size=(2, C, D))
    assert np.array_equal(stack(Tensor(z)).data, z * 2.0 ** L)


def test_single_block_zero_weights_gives_double():
    rng = np.random.default_rng(0)
    block = MixerBlock(3, 5, 5, rng)
    _zero(block)
    z = rng.normal(size=(4, 3, 5))
    assert np.array_equal(block(Tensor(z)).data, 2 * z)


def test_single_channel_null_mixing_reduces_to_feature_step():
    rng = np.random.default_rng(1)
    block = MixerBlock(1, 4, 4, rng)
    block.chan_weight.data[...] = 0.0
    z = rng.normal(size=(3, 1, 4))
    zz = Tensor(z)
    feat = (block.dim_norm(zz) @ block.dim_weight + block.dim_bias).data
    assert np.array_equal(block(zz).data, z + z + np.maximum(feat, 0.0))


def test_width_change_uses_truncation_and_zero_pad():
    rng = np.random.default_rng(2)
    z = rng.normal(size=(2, 3, 6))
    for out in (4, 9):
        block = MixerBlock(3, 6, out, rng)
        _zero(block)
        expect = np.zeros((2, 3, out))
        k = min(6, out)
        expect[..., :k] = 2 * z[..., :k]
        assert np.array_equal(block(Tensor(z)).data, expect)


def test_zero_blocks_is_identity_or_fixed_projection():
    rng = np.random.default_rng(3)
    z = rng.normal(size=(2, 3, 6))
    assert np.array_equal(MixerStack(3, 6, 6, 0, rng)(Tensor(z)).data, z)
    assert np.array_equal(MixerStack(3, 6, 4, 0, rng)(Tensor(z)).data, z[..., :4])
    assert MixerStack(3, 6, 4, 0, rng).num_parameters() == 0


def test_one_block_stack_equals_block():
    rng = np.random.default_rng(4)
    stack = MixerStack(3, 6, 4, 1, rng)
    z = Tensor(rng.normal(size=(2, 3, 6)))
    assert np.array_equal(stack(z).data, stack.blocks[0](z).data)
    assert [b.d_out for b in MixerStack(3, 6, 4, 3, rng).blocks] == [6, 6, 4]


def test_row_swap_equivariance():
    rng = np.random.default_rng(5)
    stack = MixerStack(3, 6, 5, 2, rng)
    z = rng.normal(size=(4, 3, 6))
    perm = np.array([2, 0, 3, 1])
    assert np.array_equal(stack(Tensor(z[perm])).data, stack(Tensor(z)).data[perm])


def test_b_copy_rows_identical():
    rng = np.random.default_rng(6)
    stack = MixerStack(3, 6, 5, 2, rng)
    z = rng.normal(size=(1, 3, 6))
    out = stack(Tensor(np.repeat(z, 3, axis=0))).data
    assert all(np.array_equal(row, out[0]) for row in out)


def test_gradient_flow_to_every_input_coordinate():
    rng = np.random.default_rng(7)
    stack = MixerStack(4, 6, 5, 2, rng)
    z = Tensor(rng.normal(size=(2, 4, 6)), requires_grad=True)
    backward(tsum(stack(z) * Tensor(rng.normal(size=(2, 4, 5)))))
    assert np.all(z.grad != 0.0)


def test_invalid_chain_is_config_error():
    rng = np.random.default_rng(0)
    with pytest.raises(ConfigError):
        MixerStack(3, 6, 4, -1, rng)
    with pytest.raises(ConfigError):
        MixerStack(3, 0, 4, 1, rng)


def test_wrong_input_shape_rejected():
    block = MixerBlock(3, 6, 6, np.random.default_rng(0))
    with pytest.raises(ValueError):
        block(Tensor(np.zeros((2, 4, 6))))
