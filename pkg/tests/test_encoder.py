import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mick import numerics as nx
from mick.data import PAD, EncodedInstance, Instance, encode_instance, vocab_from_tokens
from mick.encoder import embed_input, encode_instances, encode_sentence, init_encoder_params

VOCAB = vocab_from_tokens([f"w{i}" for i in range(12)])


def leaves_for(params):
    g = nx.Graph()
    return g, {k: g.param(k, v) for k, v in params.items()}


def small_params(T, seed=0, d_c=4, d_p=2, d_h=5, w=3):
    return init_encoder_params(len(VOCAB), T, np.random.default_rng(seed), d_c, d_p, d_h, w)


def recentre_positions(params, T_from, T_to):
    """Position tables for a shorter T whose bucket b maps to the same offset."""
    out = dict(params)
    lo = (T_from - 1) - (T_to - 1)
    for k in ("pos_head_table", "pos_tail_table"):
        out[k] = params[k][lo:lo + 2 * T_to - 1]
    return out


def test_init_shapes_and_pad_row():
    p = init_encoder_params(20, 8, np.random.default_rng(0))
    assert p["word_table"].shape == (20, 50)
    assert p["pos_head_table"].shape == (15, 5) == p["pos_tail_table"].shape
    assert p["conv_filters"].shape == (230, 3, 60)
    assert p["conv_bias"].shape == (230,)
    assert np.all(p["word_table"][PAD] == 0)
    assert np.abs(p["word_table"]).max() <= 0.1


def test_all_pad_word_slice_is_zero():
    T = 5
    enc = EncodedInstance(np.full(T, PAD), np.arange(T), np.arange(T), true_length=1)
    _, leaves = leaves_for(small_params(T))
    X = embed_input(enc, leaves)
    assert X.shape == (T, 4 + 4)
    assert np.all(X.data[:, :4] == 0)


def test_hand_computed_lookup():
    params = {
        "word_table": np.array([[0.0], [9.0], [1.5], [-2.0]]),
        "pos_head_table": np.array([[10.0], [20.0], [30.0]]),
        "pos_tail_table": np.array([[-1.0], [-2.0], [-3.0]]),
        "conv_filters": np.ones((1, 1, 3)),
        "conv_bias": np.zeros(1),
    }
    enc = EncodedInstance(np.array([2, 3]), np.array([1, 2]), np.array([0, 1]), true_length=2)
    _, leaves = leaves_for(params)
    X = embed_input(enc, leaves)
    np.testing.assert_array_equal(X.data, [[1.5, 20.0, -1.0], [-2.0, 30.0, -2.0]])


def test_out_of_range_id():
    enc = EncodedInstance(np.array([99, 0]), np.array([0, 1]), np.array([0, 1]), true_length=1)
    _, leaves = leaves_for(small_params(2))
    with pytest.raises(IndexError):
        embed_input(enc, leaves)


def test_embedding_gradient_check():
    T = 4
    enc = encode_instance(Instance(["w1", "w2", "w3"], (0, 1), (2, 3), "r"), VOCAB, T)
    params = small_params(T)
    weights = np.random.default_rng(1).normal(size=(T, 8))
    tables = {k: params[k] for k in ("word_table", "pos_head_table", "pos_tail_table")}
    f = lambda g, p: nx.sum_(nx.mul(nx.mul(embed_input(enc, p), embed_input(enc, p)), g.constant(weights)))
    assert nx.grad_check(f, tables, eps=1e-5) < 1e-4


def test_output_dimension_and_determinism():
    T = 10
    enc = encode_instance(Instance(["w1", "w2", "w3", "w4"], (0, 1), (2, 3), "r"), VOCAB, T)
    params = small_params(T)
    outs = []
    for _ in range(2):
        _, leaves = leaves_for(params)
        outs.append(encode_sentence(embed_input(enc, leaves), enc.true_length, leaves).data)
    assert outs[0].shape == (5,)
    assert outs[0].tobytes() == outs[1].tobytes()


def test_padding_invariance_64_vs_128():
    inst = Instance([f"w{i % 12}" for i in range(17)], (2, 3), (11, 13), "r")
    p128 = init_encoder_params(len(VOCAB), 128, np.random.default_rng(5))
    p64 = recentre_positions(p128, 128, 64)
    vecs = []
    for T, params in ((64, p64), (128, p128)):
        enc = encode_instance(inst, VOCAB, T)
        _, leaves = leaves_for(params)
        vecs.append(encode_instances([enc], leaves).data[0])
    assert np.max(np.abs(vecs[0] - vecs[1])) < 1e-12


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 15), st.integers(0, 10), st.sampled_from([1, 3, 5]), st.integers(0, 2**16))
def test_padding_invariance_property(n, extra, w, seed):
    rng = np.random.default_rng(seed)
    toks = [f"w{int(i)}" for i in rng.integers(0, 12, size=max(n, 2))]
    inst = Instance(toks, (0, 1), (len(toks) - 1, len(toks)), "r")
    T_small = len(toks)
    T_big = T_small + extra
    p_big = small_params(T_big, seed=seed % 7, w=w)
    p_small = recentre_positions(p_big, T_big, T_small)
    outs = []
    for T, params in ((T_small, p_small), (T_big, p_big)):
        _, leaves = leaves_for(params)
        outs.append(encode_instances([encode_instance(inst, VOCAB, T)], leaves).data[0])
    assert np.max(np.abs(outs[0] - outs[1])) < 1e-12


def test_single_token_single_window():
    T = 6
    params = small_params(T, seed=3)
    params["conv_bias"] = np.random.default_rng(4).normal(size=5) * 0.1
    enc = EncodedInstance(np.array([4, 0, 0, 0, 0, 0]), np.full(T, T - 1), np.full(T, T - 1), true_length=1)
    x0 = np.concatenate([params["word_table"][4], params["pos_head_table"][T - 1], params["pos_tail_table"][T - 1]])
    # zero-padded window [0, x0, 0]: only the centre tap sees data
    expected = np.maximum(params["conv_filters"][:, 1, :] @ x0 + params["conv_bias"], 0.0)
    _, leaves = leaves_for(params)
    E = encode_sentence(embed_input(enc, leaves), 1, leaves)
    np.testing.assert_allclose(E.data, expected, atol=1e-14)


def test_full_path_gradient_check():
    T = 7
    batch = [
        encode_instance(Instance(["w1", "w5", "w2", "w7", "w3"], (0, 1), (3, 4), "r"), VOCAB, T),
        encode_instance(Instance(["w4", "w2", "w9"], (2, 3), (0, 1), "r"), VOCAB, T),
    ]
    params = small_params(T, seed=8, d_c=3, d_p=2, d_h=4)
    target = np.random.default_rng(2).normal(size=(2, 4))
    f = lambda g, p: nx.sum_(nx.mul(encode_instances(batch, p), g.constant(target)))
    assert nx.grad_check(f, params, eps=1e-5) < 1e-4
