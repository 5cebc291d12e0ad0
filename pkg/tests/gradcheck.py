"""Central finite-difference checks shared by the layer and model tests."""

import numpy as np

from spikeplace.nn import Tape


def param_stores(module):
    out = {}
    for prefix, mod in module.named_modules():
        for k in mod.params:
            out[f"{prefix}.{k}" if prefix else k] = (mod.params, k)
    return out


def check_gradients(module, x, weights, h=1e-6, max_entries=None, rng=None):
    """Worst relative error over the input and every parameter tensor.

    The scalar loss is ``sum(module(x) * weights)``. When ``max_entries`` is
    given, that many randomly chosen entries per tensor are probed.
    """
    rng = rng if rng is not None else np.random.default_rng(0)

    def loss():
        return float((module.forward(x) * weights).sum())

    module.zero_grad()
    tape = Tape()
    y = module.forward(x, tape)
    assert y.shape == weights.shape
    gx = module.backward(weights, tape)
    assert len(tape) == 0
    analytic = {k: g.copy() for k, g in module.named_grads()}
    analytic["<input>"] = gx
    targets = {k: v for k, v in param_stores(module).items()}
    targets["<input>"] = ({"x": x}, "x")

    worst = 0.0
    for name, (store, key) in targets.items():
        p = store[key]
        idx_all = list(np.ndindex(p.shape))
        if max_entries is not None and len(idx_all) > max_entries:
            pick = rng.choice(len(idx_all), max_entries, replace=False)
            idx_all = [idx_all[i] for i in pick]
        num, ana = [], []
        for idx in idx_all:
            orig = p[idx]
            p[idx] = orig + h
            lp = loss()
            p[idx] = orig - h
            lm = loss()
            p[idx] = orig
            num.append((lp - lm) / (2 * h))
            ana.append(analytic[name][idx])
        num, ana = np.array(num), np.array(ana)
        scale = max(np.abs(num).max(initial=0.0), np.abs(ana).max(initial=0.0), 1e-8)
        worst = max(worst, float(np.abs(num - ana).max(initial=0.0) / scale))
    return worst
