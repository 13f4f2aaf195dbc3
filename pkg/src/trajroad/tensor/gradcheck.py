"""Central finite-difference check of analytic gradients."""
import numpy as np

from .core import backward, no_grad


def grad_check(f, inputs, eps=1e-3, n_coords=64, rng=None, ref_dtype=None):
    """Compare tape gradients of scalar ``f(*inputs)`` with central differences.

    Samples ``n_coords`` coordinates across all inputs (every coordinate when
    there are fewer) and returns the maximum of
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    With ``ref_dtype`` (e.g. np.longdouble) the analytic gradient is still
    taken at the inputs' own precision, but the finite differences are
    evaluated on widened copies. Deep ReLU graphs need this: a step large
    enough to beat 64-bit rounding also crosses activation kinks.
    """
    rng = np.random.default_rng(0) if rng is None else rng
    inputs = list(inputs)
    for t in inputs:
        t.requires_grad = True
        t.grad = None
    loss = f(*inputs)
    backward(loss)
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    sizes = [t.size for t in inputs]
    total = sum(sizes)
    if total <= n_coords:
        picks = np.arange(total)
    else:
        picks = np.sort(rng.choice(total, size=n_coords, replace=False))
    offsets = np.cumsum([0] + sizes)

    saved = [t.data for t in inputs]
    if ref_dtype is not None:
        for t in inputs:
            t.data = t.data.astype(ref_dtype)
    try:
        with no_grad():
            return _scan(f, inputs, analytic, picks, offsets, eps)
    finally:
        for t, d in zip(inputs, saved):
            t.data = d


def _scan(f, inputs, analytic, picks, offsets, eps):
    worst = 0.0
    for flat in picks:
        k = int(np.searchsorted(offsets, flat, side="right") - 1)
        i = int(flat - offsets[k])
        view = inputs[k].data.reshape(-1)
        orig = view[i].copy()
        view[i] = orig + eps
        fp = f(*inputs).data
        view[i] = orig - eps
        fm = f(*inputs).data
        view[i] = orig
        # difference before narrowing, so a wide reference keeps its digits
        numeric = float((fp - fm) / (2 * view.dtype.type(eps)))
        a = float(analytic[k].reshape(-1)[i])
        err = abs(a - numeric) / max(1e-8, abs(a) + abs(numeric))
        worst = max(worst, err)
    return worst
