"""Central finite-difference gradient checking used across the test suite.

The oracle never touches the backward pass: it re-runs the forward scalar
loss at perturbed inputs. Relative error uses a unit floor so elements
with near-zero true gradient are compared absolutely (finite differences
cannot resolve a 1e-6 relative error on a 1e-8 gradient).
"""

import numpy as np


def numeric_grad(fn, arr: np.ndarray, indices=None, h: float = 1e-5) -> dict:
    """d fn / d arr[idx] by central differences; fn() reads arr in place."""
    if indices is None:
        indices = list(np.ndindex(arr.shape))
    grads = {}
    for idx in indices:
        orig = arr[idx]
        arr[idx] = orig + h
        hi = fn()
        arr[idx] = orig - h
        lo = fn()
        arr[idx] = orig
        grads[idx] = (hi - lo) / (2.0 * h)
    return grads


def rel_err(analytic: float, numeric: float, floor: float = 1.0) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), floor)


def sample_indices(rng: np.random.Generator, shape, k: int):
    size = int(np.prod(shape))
    picks = rng.choice(size, size=min(k, size), replace=False)
    return [np.unravel_index(i, shape) for i in picks]


def check_tensor_grad(fn, tensors, max_rel: float = 1e-6, h: float = 1e-5,
                      rng=None, samples=None) -> float:
    """Compare loss.backward() grads against finite differences.

    fn() must build and return a fresh scalar loss Tensor from the current
    contents of ``tensors`` (dict name -> Tensor). When ``samples`` is set,
    only that many randomly chosen elements per tensor are checked.
    """
    loss = fn()
    loss.backward()
    analytic = {name: t.grad.copy() for name, t in tensors.items()}
    worst = 0.0
    for name, t in tensors.items():
        if samples is not None:
            idxs = sample_indices(rng, t.data.shape, samples)
        else:
            idxs = list(np.ndindex(t.data.shape))
        num = numeric_grad(lambda: float(fn().data), t.data, idxs, h)
        for idx, g in num.items():
            err = rel_err(float(analytic[name][idx]), g)
            worst = max(worst, err)
            assert err < max_rel, (
                f"{name}{idx}: analytic {analytic[name][idx]:.3e} vs numeric {g:.3e} "
                f"(rel err {err:.2e} >= {max_rel:.0e})")
    for t in tensors.values():
        t.zero_grad()
    return worst
