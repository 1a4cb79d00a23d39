"""Central finite-difference gradient checking used across the test suite.

The finite-difference side only re-runs forward passes, so it stays
independent of the reverse-mode code it checks.
"""

import numpy as np


def finite_diff(f, arrays, eps=1e-6):
    """Central-difference gradient of scalar f() w.r.t. each array, in place."""
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        flat_a = a.ravel()
        flat_g = g.ravel()
        for i in range(flat_a.size):
            orig = flat_a[i]
            flat_a[i] = orig + eps
            fp = f()
            flat_a[i] = orig - eps
            fm = f()
            flat_a[i] = orig
            flat_g[i] = (fp - fm) / (2.0 * eps)
        grads.append(g)
    return grads


def rel_error(a, b):
    """Norm-relative difference; the floor avoids 0/0 on all-zero gradients."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(np.linalg.norm(a.ravel()), np.linalg.norm(b.ravel()), 1e-3)
    return np.linalg.norm((a - b).ravel()) / denom


def assert_grads_close(analytic, numeric, tol=1e-5, names=None):
    for i, (a, n) in enumerate(zip(analytic, numeric)):
        err = rel_error(a, n)
        label = names[i] if names else f"tensor {i}"
        assert err <= tol, f"gradient mismatch for {label}: rel error {err:.3e} > {tol}"
