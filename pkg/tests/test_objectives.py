import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from pgsurv.diffcore import Adam, DimensionError, Parameter, Tape, grad_check, ops, stream
from pgsurv.objectives import (DegenerateEmbeddingError, HazardProfile, RiskHead, batch_survival_loss,
                               cosine_fusion_loss, fusion_loss, risk_head, risk_scores, survival_nll)


def nll_oracle(h, Y, c):
    h = np.clip(h, 1e-7, 1 - 1e-7)
    S = lambda r: 1.0 if r < 0 else float(np.prod(1 - h[:r + 1]))  # noqa: E731
    return -c * math.log(S(Y)) - (1 - c) * math.log(S(Y - 1)) - (1 - c) * math.log(h[Y])


# -- fusion losses ------------------------------------------------------------

def test_fusion_loss_examples(rng):
    x = rng.normal(size=(3, 256))
    assert fusion_loss(x, x).value == 0.0
    assert fusion_loss([[2.0]], [[0.0]]).value == 4.0
    y = rng.normal(size=(3, 256))
    assert fusion_loss(x, y).value == pytest.approx(np.mean((x - y) ** 2), rel=1e-14)
    with pytest.raises(DimensionError):
        fusion_loss(x, y[:2])


GRID = st.integers(-1000, 1000).map(lambda i: i / 100)  # avoids squares underflowing to 0


@given(arrays(np.float64, (2, 5), elements=GRID), arrays(np.float64, (2, 5), elements=GRID))
def test_fusion_loss_symmetric_and_positive(a, b):
    v = fusion_loss(a, b).value
    assert v == fusion_loss(b, a).value
    assert (v == 0) == np.array_equal(a, b)
    assert v >= 0


def test_cosine_loss_examples(rng):
    x = rng.normal(size=(4, 256))
    assert cosine_fusion_loss(x, 3 * x).value == pytest.approx(0.0, abs=1e-15)
    assert cosine_fusion_loss(x, -x).value == pytest.approx(2.0, abs=1e-15)
    y = rng.normal(size=(4, 256))
    cos = np.sum(x * y, axis=1) / (np.linalg.norm(x, axis=1) * np.linalg.norm(y, axis=1))
    assert cosine_fusion_loss(x, y).value == pytest.approx(np.mean(1 - cos), rel=1e-13)
    z = x.copy()
    z[1] = 0
    with pytest.raises(DegenerateEmbeddingError):
        cosine_fusion_loss(z, y)


def test_fusion_gradients(rng):
    a, b = Parameter(rng.normal(size=(3, 6))), Parameter(rng.normal(size=(3, 6)))
    assert grad_check(lambda: fusion_loss(a, b), [a, b]) < 1e-7
    assert grad_check(lambda: cosine_fusion_loss(a, b), [a, b]) < 1e-7


# -- risk head ------------------------------------------------------------------

def test_risk_head_zero_logits():
    head = RiskHead(512, stream(0, "h"))
    head.fc.W.value[...] = 0
    head.fc.b.value[...] = 0
    prof = risk_head(np.ones(512), head)
    np.testing.assert_array_equal(prof.hazards, [0.5] * 4)
    np.testing.assert_array_equal(prof.survival, [1, 0.5, 0.25, 0.125, 0.0625])
    # -sum_{r=0..3} S(r) over the four bins
    assert prof.risk == -0.9375


def test_risk_head_extreme_logits():
    head = RiskHead(256, stream(0, "h"))
    head.fc.W.value[...] = 0
    head.fc.b.value[...] = -800
    prof = risk_head(np.ones(256), head)
    np.testing.assert_allclose(prof.survival, 1.0)
    assert prof.risk == pytest.approx(-4.0)


def test_hazard_profile_cumprod_oracle(rng):
    for _ in range(20):
        h = 1 / (1 + np.exp(-rng.normal(size=4) * 3))
        prof = HazardProfile.from_hazards(h)
        S = [1.0] + [float(np.prod(1 - h[:r + 1])) for r in range(4)]
        np.testing.assert_allclose(prof.survival, S, atol=1e-12)
        assert np.all(np.diff(prof.survival) <= 0)
        assert prof.risk == pytest.approx(-sum(S[1:]), abs=1e-12)
        assert risk_scores(h[None])[0] == pytest.approx(prof.risk, abs=1e-12)


def test_risk_increases_with_each_hazard(rng):
    # higher hazard -> lower survival -> higher risk (earlier expected death)
    for _ in range(20):
        h = rng.uniform(0.05, 0.9, size=4)
        base = HazardProfile.from_hazards(h).risk
        for r in range(4):
            bumped = h.copy()
            bumped[r] += 1e-3
            assert HazardProfile.from_hazards(bumped).risk > base


# -- survival likelihood ------------------------------------------------------------

def test_nll_limits():
    assert survival_nll(np.array([1 - 1e-9, 0.3, 0.3, 0.3]), 0, 0).value < 1e-6
    assert survival_nll(np.full(4, 1e-12), 3, 1).value < 1e-6


def test_nll_hand_case():
    h = np.array([0.2, 0.5, 0.3, 0.1])
    v = survival_nll(h, 1, 0).value
    assert v == pytest.approx(-math.log(0.8) - math.log(0.5), abs=1e-14)


def test_nll_matches_oracle_and_is_finite(rng):
    for _ in range(200):
        h = rng.uniform(0, 1, size=4)
        Y, c = int(rng.integers(4)), int(rng.integers(2))
        v = survival_nll(h, Y, c).value
        assert v >= 0 and np.isfinite(v)
        assert v == pytest.approx(nll_oracle(h, Y, c), abs=1e-10)
    assert np.isfinite(survival_nll(np.array([0.0, 1.0, 1.0, 0.0]), 2, 0).value)


def test_batch_loss_reduction(rng):
    H = rng.uniform(0.05, 0.95, size=(4, 4))
    Y, c = [0, 3, 2, 1], [0, 1, 0, 1]
    v = batch_survival_loss(H, Y, c).value
    assert v == pytest.approx(np.mean([nll_oracle(H[i], Y[i], c[i]) for i in range(4)]), abs=1e-12)
    assert batch_survival_loss(H[:1], Y[:1], c[:1]).value == pytest.approx(survival_nll(H[0], 0, 0).value)
    dup = batch_survival_loss(np.vstack([H[2], H[2]]), [2, 2], [0, 0]).value
    assert dup == pytest.approx(batch_survival_loss(H[2:3], [2], [0]).value, abs=1e-15)
    with pytest.raises(ValueError):
        batch_survival_loss(np.zeros((0, 4)), [], [])
    with pytest.raises(ValueError):
        batch_survival_loss(H, [0, 4, 1, 1], c)


def test_nll_gradient_wrt_logits(rng):
    z = Parameter(rng.normal(size=(3, 4)))
    fn = lambda: batch_survival_loss(ops.sigmoid(z), [0, 2, 3], [0, 1, 0])  # noqa: E731
    assert grad_check(fn, [z]) < 1e-5


@pytest.mark.parametrize("Y", [0, 1, 2, 3])
def test_free_profile_learns_event_bin(Y):
    z = Parameter(np.zeros(4))
    opt = Adam([z], lr=0.1)
    for _ in range(200):
        with Tape() as tape:
            loss = survival_nll(ops.sigmoid(z), Y, 0)
        tape.backward(loss)
        opt.step()
        opt.zero_grad()
    h = 1 / (1 + np.exp(-z.value))
    assert h[Y] > 0.95
    assert np.all(h[:Y] < 0.05)
