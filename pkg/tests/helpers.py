"""Shared test utilities: finite-difference gradient checking."""

import numpy as np

from refinpaint.nn import Module


def numeric_grad(f, tensor, eps=1e-6):
    """Central finite differences of the scalar f() w.r.t. one tensor."""
    grad = np.zeros_like(tensor.data)
    flat = tensor.data.ravel()
    gflat = grad.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f().item()
        flat[i] = orig - eps
        fm = f().item()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def check_grads(f, tensors, tol=1e-5, eps=1e-6):
    """Assert autodiff grads of scalar f() match finite differences.

    Relative error is normalized by the larger of the two gradient
    magnitudes (floored at 1 to avoid blowing up near-zero gradients).
    """
    for t in tensors:
        t.grad = None
    f().backward()
    for t in tensors:
        analytic = t.grad if t.grad is not None else np.zeros_like(t.data)
        numeric = numeric_grad(f, t, eps=eps)
        scale = max(np.abs(numeric).max(), np.abs(analytic).max(), 1.0)
        err = np.abs(analytic - numeric).max() / scale
        assert err < tol, f"gradient mismatch: max rel err {err:.2e} (tol {tol})"
        t.grad = None


def use_float64(module: Module) -> Module:
    """Promote all parameters to float64 for tight finite-difference checks."""
    for p in module.parameters():
        p.data = p.data.astype(np.float64)
    return module
