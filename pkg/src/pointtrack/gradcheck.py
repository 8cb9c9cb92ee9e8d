"""Central finite-difference check of analytic gradients."""

from __future__ import annotations

import numpy as np

from .diffcore import ParamStore


def relative_error(analytic, numeric, floor=1e-6):
    """|a - n| / max(|a|, |n|, floor), elementwise.

    ``floor`` keeps entries whose true gradient is ~0 from turning round-off
    in the finite difference into a huge relative error.
    """
    a = np.asarray(analytic, dtype=float)
    n = np.asarray(numeric, dtype=float)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def numeric_grad(fn, array, step=1e-5, indices=None):
    """Central differences of scalar ``fn()`` w.r.t. entries of ``array``
    (modified in place and restored)."""
    flat = array.reshape(-1)
    idx = range(flat.size) if indices is None else indices
    out = {}
    for i in idx:
        old = flat[i]
        flat[i] = old + step
        fp = fn()
        flat[i] = old - step
        fm = fn()
        flat[i] = old
        out[i] = (fp - fm) / (2 * step)
    return out


def check_store(loss_fn, store: ParamStore, step=1e-5, max_entries=None, rng=None):
    """Compare backward() gradients of ``loss_fn(store) -> Tensor`` with
    central differences over (a sample of) every parameter entry.

    Returns the maximum relative error and a per-parameter breakdown.
    """
    rng = np.random.default_rng(rng)
    store.zero_grad()
    loss = loss_fn(store)
    loss.backward()
    analytic = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
                for k, t in store.params.items()}

    def value():
        return float(loss_fn(store).data)

    worst, per = 0.0, {}
    for name, t in store.params.items():
        n = t.data.size
        if max_entries is not None and n > max_entries:
            indices = rng.choice(n, max_entries, replace=False)
        else:
            indices = range(n)
        num = numeric_grad(value, t.data, step, indices)
        a = analytic[name].reshape(-1)
        errs = [relative_error(a[i], v) for i, v in num.items()]
        per[name] = float(np.max(errs)) if errs else 0.0
        worst = max(worst, per[name])
    return worst, per
