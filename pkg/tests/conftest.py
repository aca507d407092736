"""Shared numerical oracles for the test suite."""

import numpy as np

from seismoforge.tensor import Tensor, backward


def numeric_grad(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar-valued f at x, elementwise."""
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        g.reshape(-1)[i] = (fp - fm) / (2.0 * h)
    return g


def grad_close(analytic: np.ndarray, numeric: np.ndarray, rtol: float = 1e-4, atol: float = 1e-6):
    """Elementwise |a-n| <= atol + rtol*max(|a|,|n|); returns (ok, worst)."""
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    err = np.abs(analytic - numeric) - (atol + rtol * scale)
    return bool(np.all(err <= 0)), float(err.max())


def check_op_grad(build_loss, inputs: list[np.ndarray], rtol: float = 1e-4, atol: float = 1e-6):
    """Verify analytic gradients of build_loss(*tensors) for every input.

    ``build_loss`` maps Tensors to a scalar Tensor.  Asserts agreement with
    central differences on each input independently.
    """
    tensors = [Tensor(x.copy(), requires_grad=True) for x in inputs]
    loss = build_loss(*tensors)
    backward(loss)
    for i, t in enumerate(tensors):
        def f(x, i=i):
            probe = [Tensor(v.data) for v in tensors]
            probe[i] = Tensor(x)
            return build_loss(*probe).item()

        num = numeric_grad(f, inputs[i].copy())
        ok, worst = grad_close(t.grad, num, rtol=rtol, atol=atol)
        assert ok, f"gradient mismatch on input {i}: worst excess {worst:.3e}"
