"""Finite-difference verification of reverse-mode gradients.

Checks run in 64-bit with central differences (default step 1e-3). The
reported error per element is |ad - fd| / max(|ad|, |fd|, 1): relative for
large gradients, absolute below unit magnitude, so tiny-gradient elements
do not blow up the ratio through finite-difference truncation noise.
"""

from __future__ import annotations

import numpy as np

from . import tensor as T
from .errors import GghmError


def grad_check(f, params, step=1e-3):
    """Max elementwise error between reverse-mode and central finite differences.

    f: nullary callable returning a scalar Tensor, deterministic in params.
    params: iterable of Parameters (must be float64).
    """
    params = list(params)
    for p in params:
        if p.dtype != np.float64:
            raise GghmError(
                f"grad_check requires float64 parameters, {p.name} is {p.dtype}")
        p.zero_grad()

    with T.check_finite():
        out = f()
    if out.size != 1:
        raise GghmError(f"grad_check target must be scalar, got {out.shape}")
    out.backward()
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy()
                for p in params]
    for p in params:
        p.zero_grad()

    worst = 0.0
    for p, ad in zip(params, analytic):
        flat = p.data.reshape(-1)
        ad_flat = ad.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            with T.no_grad():
                hi = float(f().data)
            flat[i] = orig - step
            with T.no_grad():
                lo = float(f().data)
            flat[i] = orig
            fd = (hi - lo) / (2.0 * step)
            err = abs(ad_flat[i] - fd) / max(abs(ad_flat[i]), abs(fd), 1.0)
            if err > worst:
                worst = err
    return worst
