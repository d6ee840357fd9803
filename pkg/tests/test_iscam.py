import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imts_mixer.autograd import Tensor, backward, tsum
from imts_mixer.data import ImtsInstance, make_batch
from imts_mixer.iscam import Iscam
from imts_mixer.model import count_parameters
from imts_mixer.nn import Mlp2

from conftest import random_dataset, random_instance


def _encoder(C=3, D=8, seed=0, **kw):
    enc = Iscam(C, D, 32, np.random.default_rng(seed), **kw)
    enc.channel_bias.data = np.random.default_rng(seed + 1).normal(size=(C, D))
    return enc


def test_single_observation_is_its_embedding():
    enc = _encoder()
    z = enc.encode_channel([0.3], [1.7], [True]).data
    assert np.array_equal(z, enc.f_ote(Tensor([[1.7, 0.3]])).data[0])


def test_input_order_is_value_then_time():
    enc = _encoder()
    z = enc.encode_channel([0.3], [1.7], [True]).data
    assert not np.allclose(z, enc.f_ote(Tensor([[0.3, 1.7]])).data[0])


def test_empty_and_all_masked_channel_encode_to_zero():
    enc = _encoder()
    assert np.all(enc.encode_channel([], [], []).data == 0.0)
    assert np.all(enc.encode_channel([0.1, 0.2], [1.0, 2.0], [False, False]).data == 0.0)


def test_constant_weight_network_gives_mean():
    enc = _encoder()
    enc.f_wa.W1.data[...] = 0.0
    enc.f_wa.W2.data[...] = 0.0
    enc.f_wa.b2.data = np.arange(8.0)
    t, v = [0.1, 0.4, 0.9], [0.5, -1.0, 2.0]
    h = enc.f_ote(Tensor(np.stack([v, t], axis=-1))).data
    z = enc.encode_channel(t, v, [True] * 3).data
    assert np.allclose(z, h.mean(axis=0), atol=1e-15)


def test_masked_entries_ignored_in_encode_channel():
    enc = _encoder()
    a = enc.encode_channel([0.1, 0.5, 0.7], [1.0, 9.0, 2.0], [True, False, True]).data
    b = enc.encode_channel([0.1, 0.7], [1.0, 2.0], [True, True]).data
    assert np.array_equal(a, b)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 8), st.randoms(use_true_random=False), st.booleans())
def test_permutation_invariance(n, rnd, specific):
    rng = np.random.default_rng(rnd.randint(0, 2**31))
    enc = _encoder(channel_specific=specific)
    t, v = rng.uniform(0, 1, n), rng.normal(size=n)
    mask = rng.random(n) < 0.8
    perm = np.array(rnd.sample(range(n), n))
    a = enc.encode_channel(t, v, mask).data
    b = enc.encode_channel(t[perm], v[perm], mask[perm]).data
    assert np.max(np.abs(a - b)) <= 1e-12


def test_all_empty_channels_give_channel_bias():
    enc = _encoder()
    empty = ImtsInstance([[], [], []], [[], [], []], [[1.0]] * 3, [[0.0]] * 3)
    out = enc(make_batch([empty, empty])).data
    for b in range(2):
        assert np.array_equal(out[b], enc.channel_bias.data)


@pytest.mark.parametrize("specific", [False, True])
def test_empty_channel_bias_identity_in_mixed_batch(specific):
    rng = np.random.default_rng(4)
    data = [random_instance(rng, 3, empty=(c,)) for c in range(3)]
    enc = _encoder(channel_specific=specific)
    out = enc(make_batch(data)).data
    for c in range(3):
        assert np.array_equal(out[c, c], enc.channel_bias.data[c])


def test_batch_matches_per_channel_encoding():
    data = random_dataset(2, 3)
    enc = _encoder()
    out = enc(make_batch(data)).data
    for b, inst in enumerate(data):
        for c in range(3):
            z = enc.encode_channel(inst.times[c], inst.values[c], np.ones(inst.times[c].size, bool))
            assert np.allclose(out[b, c], z.data + enc.channel_bias.data[c], atol=1e-14)


def test_b_copy_batch_identical():
    inst = random_instance(np.random.default_rng(9), 3)
    enc = _encoder()
    one = enc(make_batch([inst])).data
    many = enc(make_batch([inst] * 4)).data
    assert all(np.array_equal(row, one[0]) for row in many)


def test_locality_across_channels():
    rng = np.random.default_rng(5)
    inst = random_instance(rng, 3)
    other = ImtsInstance(inst.times, [v if c != 1 else v + 3.0 for c, v in enumerate(inst.values)],
                         inst.queries, inst.answers)
    enc = _encoder()
    a, b = enc(make_batch([inst])).data, enc(make_batch([other])).data
    assert np.array_equal(a[:, [0, 2]], b[:, [0, 2]])
    assert not np.allclose(a[:, 1], b[:, 1])


def test_aggregation_weights_sum_to_one():
    data = random_dataset(3, 5)
    batch = make_batch(data)
    w = _encoder().aggregation_weights(batch)
    sums = w.sum(axis=2)
    nonempty = batch.obs_mask.any(axis=-1)
    assert np.all(np.abs(sums[nonempty] - 1.0) <= 1e-12)
    assert np.all(w[~batch.obs_mask] == 0.0)


def test_shared_networks_are_distinct():
    enc = _encoder()
    ids_ote = {id(p) for p in enc.f_ote.parameters().values()}
    ids_wa = {id(p) for p in enc.f_wa.parameters().values()}
    assert not ids_ote & ids_wa


def test_parameter_counts_closed_form():
    rng = np.random.default_rng(0)
    assert Mlp2(2, 32, 64, rng).num_parameters() == 2 * 32 + 32 + 32 * 64 + 64 == 2208
    enc = Iscam(5, 64, 32, rng)
    assert count_parameters(enc)[0] == 2 * 2208 + 5 * 64 == 4736


def test_gradient_reaches_every_parameter():
    data = random_dataset(7, 4)
    enc = _encoder()
    backward(tsum(enc(make_batch(data)) * Tensor(np.random.default_rng(0).normal(size=(4, 3, 8)))))
    for name, p in enc.parameters().items():
        if name != "f_wa.b2":  # the softmax cancels a per-column shift
            assert np.any(p.grad != 0), name
