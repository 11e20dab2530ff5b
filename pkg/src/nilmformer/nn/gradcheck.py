"""Central finite-difference verification of analytic gradients."""

import numpy as np

from .tensor import no_grad


def grad_check(loss_fn, params, h=1e-5, max_coords=None, rng=None):
    """Max relative error between analytic and numeric gradients.

    ``loss_fn`` must rebuild the forward computation on every call and
    return a scalar Tensor; it has to be deterministic (no dropout). The
    error per coordinate is |a - n| / max(|a|, |n|, 1e-8); the max over all
    checked coordinates of all params is returned. ``max_coords`` caps the
    number of coordinates probed per parameter (random subset).
    """
    params = list(params)
    for p in params:
        if p.grad is None:
            p.grad = np.zeros_like(p.data)
        p.grad[...] = 0.0
    loss = loss_fn()
    loss.backward()
    analytic = [p.grad.copy() for p in params]

    worst = 0.0
    for p, an in zip(params, analytic):
        flat = p.data.reshape(-1)
        an_flat = an.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                from .rng import get_rng

                rng = get_rng()
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        for i in coords:
            orig = flat[i]
            with no_grad():
                flat[i] = orig + h
                up = float(loss_fn().data)
                flat[i] = orig - h
                down = float(loss_fn().data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            a = an_flat[i]
            rel = abs(a - numeric) / max(abs(a), abs(numeric), 1e-8)
            worst = max(worst, rel)
    return worst
