import numpy as np

from hyperl1.tensor import Tensor

# one PASS/FAIL line per acceptance criterion, printed in the terminal summary
ACCEPTANCE: dict = {}


def numeric_grad(f, x: np.ndarray, eps: float = 1e-6) -> np.ndarray:
    """Central differences of a scalar function of an array."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for k in range(flat.size):
        old = flat[k]
        flat[k] = old + eps
        hi = f(x)
        flat[k] = old - eps
        lo = f(x)
        flat[k] = old
        gf[k] = (hi - lo) / (2 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_grad(fn, x, rtol: float = 1e-5, eps: float = 1e-6) -> float:
    """Compare the tape gradient of ``fn(Tensor)`` at ``x`` with central differences."""
    t = Tensor(np.array(x, dtype=np.float64), requires_grad=True)
    fn(t).backward()
    analytic = t.grad
    numeric = numeric_grad(lambda v: fn(Tensor(v)).item(), x, eps)
    err = relative_error(analytic, numeric)
    assert err < rtol, f"relative gradient error {err:.3g} >= {rtol}"
    return err
