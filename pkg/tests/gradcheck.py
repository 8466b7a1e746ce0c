"""Central finite-difference helpers shared by the gradient tests."""

import numpy as np

from desenat.net import PARAM_NAMES


def numeric_grads(loss_fn, model, h=1e-6):
    out = {}
    for k in PARAM_NAMES:
        p = model.params[k]
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            old = p[idx]
            p[idx] = old + h
            up = loss_fn(model)
            p[idx] = old - h
            down = loss_fn(model)
            p[idx] = old
            g[idx] = (up - down) / (2 * h)
        out[k] = g
    return out


def max_rel_error(analytic, numeric, floor=1e-7):
    """Worst |a - n| / max(|a|, |n|, floor) over every parameter entry."""
    worst = 0.0
    for k in PARAM_NAMES:
        a, n = analytic[k], numeric[k]
        rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
        worst = max(worst, float(rel.max()))
    return worst
