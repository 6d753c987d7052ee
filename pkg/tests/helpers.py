"""Shared test utilities, chiefly the central finite-difference gradient oracle.

The oracle only ever calls forward evaluations, so it stays independent of
the autodiff tape it is checking.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from ufin.numeric import Tensor

FD_STEP = 1e-5
FD_TOL = 1e-4


def numeric_gradient(f: Callable[[], float], buf: np.ndarray, h: float = FD_STEP) -> np.ndarray:
    """Central finite differences of a scalar function w.r.t. one buffer.

    ``f`` must re-run the forward pass reading the current contents of
    ``buf``; the buffer is restored after probing.
    """
    grad = np.zeros_like(buf)
    flat = buf.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        up = f()
        flat[i] = keep - h
        down = f()
        flat[i] = keep
        gflat[i] = (up - down) / (2.0 * h)
    return grad


def check_gradients(
    make_loss: Callable[[], Tensor],
    params: Sequence[Tensor],
    tol: float = FD_TOL,
    h: float = FD_STEP,
) -> float:
    """Compare autodiff gradients of a scalar loss against finite differences.

    Returns the worst relative error seen; raises AssertionError above tol.
    Relative error uses max(1, |fd|, |ad|) in the denominator so that
    near-zero gradients are checked absolutely.
    """
    for p in params:
        p.grad = None
    loss = make_loss()
    loss.backward()
    analytic = [np.array(p.grad, copy=True) for p in params]
    worst = 0.0
    for p, ad in zip(params, analytic):
        fd = numeric_gradient(lambda: make_loss().item(), p.values, h=h)
        denom = np.maximum(1.0, np.maximum(np.abs(fd), np.abs(ad)))
        err = float(np.max(np.abs(fd - ad) / denom)) if fd.size else 0.0
        worst = max(worst, err)
        assert err < tol, f"gradient mismatch: rel err {err:.3e} >= {tol:.0e}"
    return worst
