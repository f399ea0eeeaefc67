"""Shared helpers: tiny pipeline factories and finite-difference checking."""
import numpy as np

import locopipe as lp


def make_modules(dims, s, d_prime=1, interval=1, seed=0, lr0=0.05,
                 total_steps=64, momentum=0.9, weight_decay=1e-4,
                 aux_hidden_width=None):
    """Build a small pipeline with unit-test-friendly defaults."""
    spec = lp.NetworkSpec(tuple(dims))
    plan = lp.partition(spec, s)
    hyper = lp.Hyperparams(lr0=lr0, lr_min=0.0, total_steps=total_steps,
                           momentum=momentum, weight_decay=weight_decay,
                           seed=seed, aux_hidden_width=aux_hidden_width)
    return lp.build_modules(spec, plan, d_prime, interval, hyper)


def snapshot(modules):
    """Copies of every parameter array, for bit-exact before/after checks."""
    return [[p.data.copy() for p in m.parameters()] for m in modules]


def same_params(modules, snap):
    return all(np.array_equal(p.data, old)
               for m, stage in zip(modules, snap)
               for p, old in zip(m.parameters(), stage))


def fd_max_rel_error(loss_fn, tensors, grads, eps=1e-5):
    """Worst relative error between central differences and recorded grads.

    ``loss_fn`` must recompute the scalar loss from the tensors' current
    ``.data`` (no tape needed); ``grads[i]`` is the analytic gradient for
    ``tensors[i]``.  Every coordinate is perturbed individually.
    """
    worst = 0.0
    for t, grad in zip(tensors, grads):
        flat = t.data.ravel()
        gflat = np.asarray(grad).ravel()
        for i in range(flat.size):
            keep = flat[i]
            flat[i] = keep + eps
            up = loss_fn()
            flat[i] = keep - eps
            down = loss_fn()
            flat[i] = keep
            fd = (up - down) / (2.0 * eps)
            denom = max(abs(fd), abs(gflat[i]), 1e-8)
            worst = max(worst, abs(fd - gflat[i]) / denom)
    return worst
