import numpy as np
import pytest

from qrnnkit import Rng


def numeric_grad(loss_fn, arr, eps=1e-5):
    """Central finite differences of loss_fn w.r.t. every element of arr."""
    grad = np.zeros_like(arr, dtype=np.float64)
    flat = arr.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = loss_fn()
        flat[i] = orig - eps
        down = loss_fn()
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return grad


def assert_grads_close(analytic, numeric, rtol=1e-4, floor=1e-8):
    """1e-4 relative agreement with an absolute floor for near-zero elements.

    Allowed difference per element is max(rtol * magnitude, floor): elements
    below the floor are compared absolutely at the floor, everything else
    relatively.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    assert analytic.shape == numeric.shape
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    bad = diff > np.maximum(rtol * scale, floor)
    if bad.any():
        idx = np.unravel_index(np.argmax(diff * bad), diff.shape)
        raise AssertionError(
            f"gradient mismatch at {idx}: analytic={analytic[idx]!r} "
            f"numeric={numeric[idx]!r} ({int(bad.sum())} bad of {bad.size})")


@pytest.fixture
def rng():
    return Rng(1234)
