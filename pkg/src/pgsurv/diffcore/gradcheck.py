import numpy as np

from .tensor import Tape


class DeterminismError(RuntimeError):
    pass


def grad_check(loss_fn, params, eps=1e-5, n_samples=None, rng=None):
    """Compare tape gradients with central differences.

    ``loss_fn()`` must build a scalar loss Node from the current parameter
    values. With ``n_samples`` set, only that many randomly chosen entries
    per parameter are perturbed (all entries otherwise).

    Returns the max over checked entries of
    ``|analytic - numeric| / max(1, |analytic|, |numeric|)``.
    """
    for p in params:
        p.zero_grad()
    with Tape() as tape:
        loss = loss_fn()
    base = float(loss.value)
    again = float(loss_fn().value)
    if base != again:
        raise DeterminismError(
            f"loss_fn is not deterministic ({base!r} vs {again!r}); disable dropout")
    tape.backward(loss)

    if rng is None:
        rng = np.random.default_rng(0)
    worst = 0.0
    for p in params:
        flat = p.value.reshape(-1)
        analytic = p.grad.reshape(-1)
        if n_samples is None or n_samples >= flat.size:
            idx = np.arange(flat.size)
        else:
            idx = rng.choice(flat.size, size=n_samples, replace=False)
        for i in idx:
            orig = flat[i]
            flat[i] = orig + eps
            up = float(loss_fn().value)
            flat[i] = orig - eps
            down = float(loss_fn().value)
            flat[i] = orig
            numeric = (up - down) / (2.0 * eps)
            a = analytic[i]
            err = abs(a - numeric) / max(1.0, abs(a), abs(numeric))
            worst = max(worst, err)
    return worst
