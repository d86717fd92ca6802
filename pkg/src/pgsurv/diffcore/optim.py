from dataclasses import dataclass

import numpy as np

from .tensor import DimensionError

try:
    from numba import njit
except ImportError:  # pragma: no cover
    njit = None


def _update_numpy(p, g, m, v, step_size, b1, b2, inv_c2, eps):
    m *= b1
    m += (1.0 - b1) * g
    v *= b2
    v += (1.0 - b2) * (g * g)
    p -= step_size * m / (np.sqrt(v * inv_c2) + eps)


if njit is not None:
    @njit(cache=True)
    def _update_fused(p, g, m, v, step_size, b1, b2, inv_c2, eps):
        # same arithmetic, one pass; memory traffic dominates at this size
        for i in range(p.size):
            gi = g[i]
            mi = b1 * m[i] + (1.0 - b1) * gi
            vi = b2 * v[i] + (1.0 - b2) * (gi * gi)
            m[i] = mi
            v[i] = vi
            p[i] -= step_size * mi / (np.sqrt(vi * inv_c2) + eps)

    def _update(p, g, m, v, *args):
        if p.flags.c_contiguous and g.flags.c_contiguous:
            _update_fused(p.reshape(-1), g.reshape(-1), m.reshape(-1), v.reshape(-1), *args)
        else:
            _update_numpy(p, g, m, v, *args)
else:  # pragma: no cover
    _update = _update_numpy


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
        return cls(
            m=[np.zeros_like(p) for p in params],
            v=[np.zeros_like(p) for p in params],
            lr=lr, beta1=beta1, beta2=beta2, eps=eps,
        )


def adam_step(params, grads, state):
    """Bias-corrected Adam update, in place on ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError(
            f"adam_step got {len(params)} params, {len(grads)} grads, {len(state.m)} moments")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    # p -= lr * m_hat / (sqrt(v_hat) + eps), bias corrections folded into scalars
    step_size = state.lr / (1.0 - b1 ** state.t)
    inv_c2 = 1.0 / (1.0 - b2 ** state.t)
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"adam_step shape mismatch: param {p.shape}, grad {g.shape}")
        _update(p, g, m, v, step_size, b1, b2, inv_c2, state.eps)
    return params, state


class Adam:
    """Adam over a list of Parameters; reads and then clears their grads."""

    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.state = AdamState.fresh([p.value for p in self.params], lr, betas[0], betas[1], eps)

    def step(self):
        adam_step([p.value for p in self.params], [p.grad for p in self.params], self.state)

    def zero_grad(self):
        for p in self.params:
            p.zero_grad()
