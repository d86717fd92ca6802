"""Training objectives and the discrete-time risk head.

Censor convention at this boundary: ``c = 1`` means the patient was alive
after the recorded interval, ``c = 0`` means death was observed in it. Data
records carry ``event`` (1 = death), so callers pass ``c = 1 - event``.
"""
from dataclasses import dataclass

import numpy as np

from .diffcore import Dense, Module, ops
from .diffcore.tensor import DimensionError

N_BINS = 4
HAZARD_FLOOR = 1e-7
HAZARD_CEIL = 1.0 - 1e-7

# logS[:, r] = sum_{u <= r} log(1 - h_u)
_CUMULATE = np.triu(np.ones((N_BINS, N_BINS)))


class DegenerateEmbeddingError(ValueError):
    pass


def fusion_loss(img, gen):
    """Mean squared difference between paired (P, 256) embedding batches."""
    img, gen = ops.const(img), ops.const(gen)
    if img.shape != gen.shape:
        raise DimensionError(f"fusion_loss needs paired batches, got {img.shape} vs {gen.shape}")
    return ops.mean(ops.square(ops.sub(img, gen)))


def cosine_fusion_loss(img, gen):
    """Mean over patients of 1 - cos(img_p, gen_p); lies in [0, 2]."""
    img, gen = ops.const(img), ops.const(gen)
    if img.shape != gen.shape:
        raise DimensionError(f"cosine_fusion_loss needs paired batches, got {img.shape} vs {gen.shape}")
    if img.value.ndim == 1:
        img, gen = ops.reshape(img, (1, -1)), ops.reshape(gen, (1, -1))
    ni = np.linalg.norm(img.value, axis=-1)
    ng = np.linalg.norm(gen.value, axis=-1)
    if np.any(ni == 0) or np.any(ng == 0):
        raise DegenerateEmbeddingError("cosine loss is undefined for a zero-norm embedding")
    dot = ops.sum(ops.mul(img, gen), axis=-1)
    norms = ops.mul(ops.sqrt(ops.sum(ops.square(img), axis=-1)),
                    ops.sqrt(ops.sum(ops.square(gen), axis=-1)))
    cos = ops.div(dot, norms)
    return ops.mean(ops.sub(1.0, cos))


FUSION_LOSSES = {"mse": fusion_loss, "cosine": cosine_fusion_loss}


@dataclass
class HazardProfile:
    hazards: np.ndarray   # (4,) in (0, 1)
    survival: np.ndarray  # (5,) S(-1), S(0), ..., S(3)
    risk: float

    @classmethod
    def from_hazards(cls, hazards):
        hazards = np.asarray(hazards, dtype=np.float64)
        survival = np.concatenate([[1.0], np.cumprod(1.0 - hazards)])
        return cls(hazards, survival, survival_risk(survival[1:]))


def survival_risk(survival):
    """Negated expected survival, -sum_r S(r); larger means earlier death."""
    return -float(np.sum(survival))


class RiskHead(Module):
    """Single dense layer to 4 logits; hazards are their sigmoids."""

    def __init__(self, d_in, rng):
        self.fc = Dense(d_in, N_BINS, rng)

    def __call__(self, fused):
        fused = ops.const(fused)
        if fused.value.ndim == 1:
            fused = ops.reshape(fused, (1, -1))
        return ops.sigmoid(self.fc(fused))


def risk_head(fused, head):
    """Evaluate the head on one fused embedding and summarise it."""
    hazards = head(fused).value.reshape(-1)
    return HazardProfile.from_hazards(hazards)


def risk_scores(hazards):
    """(B, 4) hazards -> (B,) risk scores."""
    hazards = np.asarray(hazards, dtype=np.float64)
    return -np.cumprod(1.0 - hazards, axis=1).sum(axis=1)


def _check_labels(n, labels, censors):
    labels = np.asarray(labels, dtype=int).reshape(-1)
    censors = np.asarray(censors, dtype=np.float64).reshape(-1)
    if len(labels) != n or len(censors) != n:
        raise DimensionError(f"{n} hazard rows but {len(labels)} labels / {len(censors)} censor flags")
    if np.any((labels < 0) | (labels >= N_BINS)):
        raise ValueError(f"bin labels must lie in 0..{N_BINS - 1}, got {labels}")
    return labels, censors


def survival_nll_terms(hazards, labels, censors):
    """Per-patient negative log-likelihood, shape (B,).

    -c log S(Y) - (1 - c) log S(Y - 1) - (1 - c) log h_Y, with S(-1) = 1.
    """
    if isinstance(hazards, HazardProfile):
        hazards = hazards.hazards
    hazards = ops.const(hazards)
    if hazards.value.ndim == 1:
        hazards = ops.reshape(hazards, (1, -1))
    labels, censors = _check_labels(hazards.shape[0], labels, censors)
    h = ops.clip(hazards, HAZARD_FLOOR, HAZARD_CEIL)
    log_surv = ops.matmul(ops.log(ops.sub(1.0, h)), _CUMULATE)
    log_h = ops.log(h)

    onehot = np.eye(N_BINS)[labels]
    prev = np.zeros_like(onehot)
    prev[:, :-1] = onehot[:, 1:]  # selects Y-1; all-zero row when Y = 0, i.e. log S(-1) = 0
    c = censors[:, None]
    weights_surv = c * onehot + (1.0 - c) * prev
    weights_haz = (1.0 - c) * onehot
    ll = ops.add(ops.sum(ops.mul(log_surv, weights_surv), axis=1),
                 ops.sum(ops.mul(log_h, weights_haz), axis=1))
    return ops.scale(ll, -1.0)


def survival_nll(hazards, label, censor):
    """Scalar loss for one patient."""
    return ops.reshape(survival_nll_terms(hazards, [label], [censor]), ())


def batch_survival_loss(hazards, labels, censors):
    if ops.const(hazards).value.size == 0:
        raise ValueError("batch_survival_loss on an empty batch")
    return ops.mean(survival_nll_terms(hazards, labels, censors))
