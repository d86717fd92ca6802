import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from pgsurv.diffcore import Adam, Tape, grad_check, ops, stream
from pgsurv.encoder import (HeadCountError, ModalityStream, MultiHeadAttention, TransformerLayer,
                            encode_patient, msa, self_attention)


def softmax_rows(x):
    e = np.exp(x - x.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def sa_oracle(Q, K, V):
    return softmax_rows(Q @ K.T / np.sqrt(Q.shape[1])) @ V


def msa_oracle(H, mha):
    h = mha.heads
    dk = H.shape[1] // h
    Q, K, V = H @ mha.Wq.value, H @ mha.Wk.value, H @ mha.Wv.value
    parts = [sa_oracle(Q[:, i * dk:(i + 1) * dk], K[:, i * dk:(i + 1) * dk], V[:, i * dk:(i + 1) * dk])
             for i in range(h)]
    return np.concatenate(parts, axis=1) @ mha.out.W.value + mha.out.b.value


def ln(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def layer_oracle(x, layer):
    x = x + msa_oracle(ln(x, layer.ln1.gain.value, layer.ln1.bias.value), layer.attn)
    h = ln(x, layer.ln2.gain.value, layer.ln2.bias.value)
    h = np.maximum(h @ layer.ff1.W.value + layer.ff1.b.value, 0) @ layer.ff2.W.value + layer.ff2.b.value
    return x + h


def gated_pool_oracle(X, attn):
    s = np.tanh(X @ attn.V1.value) * (1 / (1 + np.exp(-(X @ attn.V2.value))))
    a = softmax_rows((s @ attn.w.value).T)[0]
    return a @ X


@pytest.fixture(scope="module")
def stream256():
    return ModalityStream(stream(0, "enc"))


def test_self_attention_cases(rng):
    V = rng.normal(size=(1, 4))
    out, A = self_attention(rng.normal(size=(1, 4)), rng.normal(size=(1, 4)), V)
    np.testing.assert_array_equal(A.value, [[1.0]])
    np.testing.assert_allclose(out.value, V)
    Q = np.array([[1.0, 0.0], [2.0, 0.0]])
    K = np.array([[0.0, 1.0], [0.0, -3.0], [0.0, 2.0]])
    V = rng.normal(size=(3, 2))
    out, A = self_attention(Q, K, V)
    np.testing.assert_allclose(A.value, np.full((2, 3), 1 / 3), atol=1e-15)
    np.testing.assert_allclose(out.value, np.tile(V.mean(axis=0), (2, 1)), atol=1e-15)
    Q, K, V = rng.normal(size=(3, 4)), rng.normal(size=(3, 4)), rng.normal(size=(3, 4))
    np.testing.assert_allclose(self_attention(Q, K, V)[0].value, sa_oracle(Q, K, V), atol=1e-12)


def test_msa_single_head_identity_projections(rng):
    mha = MultiHeadAttention(8, 1, stream(0, "m"))
    for W in (mha.Wq, mha.Wk, mha.Wv, mha.out.W):
        W.value[...] = np.eye(8)
    mha.out.b.value[...] = 0
    H = rng.normal(size=(5, 8))
    np.testing.assert_allclose(msa(H, mha, heads=1).value, sa_oracle(H, H, H), atol=1e-12)


def test_msa_matches_slice_and_concat_oracle(stream256, rng):
    H = rng.normal(size=(8, 256))
    layer = stream256.layers[0]
    np.testing.assert_allclose(msa(H, layer, heads=4).value, msa_oracle(H, layer.attn), atol=1e-10)


def test_head_count_errors():
    with pytest.raises(HeadCountError):
        MultiHeadAttention(256, 3, stream(0))
    with pytest.raises(HeadCountError):
        msa(np.zeros((2, 8)), MultiHeadAttention(8, 2, stream(0)), heads=4)


def test_attention_rows_stochastic(stream256, rng):
    _, A = stream256.layers[1].attn(rng.normal(size=(8, 256)) * 5, return_attention=True)
    assert A.value.shape == (4, 8, 8)
    np.testing.assert_allclose(A.value.sum(axis=-1), 1.0, atol=1e-12)


def test_msa_equivariant(stream256, rng):
    H = rng.normal(size=(8, 256))
    perm = rng.permutation(8)
    layer = stream256.layers[0]
    np.testing.assert_allclose(msa(H[perm], layer).value, msa(H, layer).value[perm], atol=1e-10)


@settings(max_examples=20)
@given(st.integers(1, 10), st.integers(0, 2**31))
def test_encode_patient_invariant_to_group_order(n, seed):
    enc = _small_stream()
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(n, 16))
    perm = rng.permutation(n)
    np.testing.assert_allclose(encode_patient(G[perm], enc).value, encode_patient(G, enc).value, atol=1e-10)


_SMALL = {}


def _small_stream():
    if "s" not in _SMALL:
        _SMALL["s"] = ModalityStream(stream(3, "small"), dim=16, heads=4, pool_hidden=8)
    return _SMALL["s"]


def test_encode_patient_single_group(stream256, rng):
    G = rng.normal(size=(1, 256))
    np.testing.assert_allclose(encode_patient(G, stream256).value, stream256.transform(G).value[0], atol=1e-12)


def test_encode_patient_composed_oracle(stream256, rng):
    G = rng.normal(size=(8, 256))
    x = layer_oracle(layer_oracle(G, stream256.layers[0]), stream256.layers[1])
    x = ln(x, stream256.ln_out.gain.value, stream256.ln_out.bias.value)
    expect = gated_pool_oracle(x, stream256.pool)
    out = encode_patient(G, stream256).value
    assert out.shape == (256,)
    np.testing.assert_allclose(out, expect, atol=1e-10)


def test_layer_without_norm_or_residual(rng):
    layer = TransformerLayer(16, 2, stream(0, "l"), layer_norm=False, residual=False)
    x = rng.normal(size=(3, 16))
    h = msa_oracle(x, layer.attn)
    expect = np.maximum(h @ layer.ff1.W.value + layer.ff1.b.value, 0) @ layer.ff2.W.value + layer.ff2.b.value
    np.testing.assert_allclose(layer(x).value, expect, atol=1e-12)


def test_streams_disjoint_under_adam(rng):
    a, b = ModalityStream(stream(0, "a"), dim=16, pool_hidden=8), ModalityStream(stream(0, "b"), dim=16, pool_hidden=8)
    G = rng.normal(size=(4, 16))
    before = {k: v.copy() for k, v in b.state_dict().items()}
    opt = Adam(a.parameters() + b.parameters(), lr=0.01)
    with Tape() as tape:
        loss = ops.sum(ops.square(ops.sub(a(G), b(G))))
    tape.backward(loss)
    for p in b.parameters():
        p.zero_grad()
    opt.step()
    for k, v in b.state_dict().items():
        np.testing.assert_array_equal(v, before[k])


def test_encoder_gradcheck(rng):
    enc = _small_stream()
    G = rng.normal(size=(5, 16))
    assert grad_check(lambda: ops.sum(ops.square(enc(G))), enc.parameters(), n_samples=5,
                      rng=stream(0, "s")) < 1e-4
