"""Central finite-difference oracle shared by the gradient tests."""

import numpy as np

from tstkit import tensor as T


def numerical_grad(f, arr: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f() / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr, dtype=np.float64)
    for i in np.ndindex(arr.shape):
        orig = arr[i]
        arr[i] = orig + h
        fp = float(f())
        arr[i] = orig - h
        fm = float(f())
        arr[i] = orig
        grad[i] = (fp - fm) / (2 * h)
    return grad


def rel_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """max |a - n| / max(|a|_inf, |n|_inf, floor).

    The floor keeps parameters whose true gradient is zero (e.g. biases that
    a following normalization removes) from dividing rounding noise by noise.
    """
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), floor)
    return float(np.max(np.abs(analytic - numeric)) / scale)


def check_grads(loss_fn, tensors: dict, h: float = 1e-5) -> dict:
    """Relative error of tape gradients vs finite differences for every tensor."""
    for t in tensors.values():
        t.grad = None
    loss = loss_fn()
    T.backward(loss)
    analytic = {n: t.grad.copy() for n, t in tensors.items()}
    # rounding noise of the difference quotient grows with |loss|
    floor = 1e-6 * max(1.0, abs(loss.item()))
    return {n: rel_error(analytic[n], numerical_grad(lambda: loss_fn().item(), t.data, h), floor)
            for n, t in tensors.items()}
