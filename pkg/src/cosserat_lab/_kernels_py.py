"""Pure numpy implementations of the hot kernels (fallback backend)."""
import numpy as np

from .corners import CORNERS, corner_gradient, corner_gradient_T, corner_weight


def pdirichlet(R, h, p, eps):
    """Regularized p-Dirichlet energy of a matrix field and its gradient.

    Energy is ``sum_c w ((|D_c R|^2 + eps^2)^(p/2) - eps^p)``; the gradient
    is with respect to the nodal matrix entries.
    """
    R = np.asarray(R, dtype=float)
    w = corner_weight(h)
    e0 = eps**p if eps > 0 else 0.0
    grad = np.zeros_like(R)
    energy = 0.0
    for s in CORNERS:
        G = corner_gradient(R, s, h)
        q = np.einsum("...ijk,...ijk->...", G, G) + eps * eps
        energy += w * float(np.sum(q ** (0.5 * p) - e0))
        coef = w * p * q ** (0.5 * p - 1.0)
        corner_gradient_T(coef[..., None, None, None] * G, s, h, grad)
    return energy, grad


def laplace7(u, h):
    """7-point Laplacian on interior nodes; boundary nodes of the result are zero."""
    u = np.asarray(u, dtype=float)
    out = np.zeros_like(u)
    c = u[1:-1, 1:-1, 1:-1]
    acc = -6.0 * c
    acc = acc + u[2:, 1:-1, 1:-1] + u[:-2, 1:-1, 1:-1]
    acc = acc + u[1:-1, 2:, 1:-1] + u[1:-1, :-2, 1:-1]
    acc = acc + u[1:-1, 1:-1, 2:] + u[1:-1, 1:-1, :-2]
    out[1:-1, 1:-1, 1:-1] = acc / (h * h)
    return out
