"""Corner quadrature on a uniform box grid.

Every cell is integrated with eight quadrature points, one per corner node,
each carrying weight ``h^3 / 8``. At a corner the gradient is formed from
the three cell edges that meet there (a one-sided difference per axis).
The rule is exact for affine fields. Its Dirichlet form ``sum_c w |D_c u|^2``
decomposes edge by edge, so on interior nodes it reproduces the standard
7-point Laplacian with no checkerboard null space.

Arrays are node fields of shape ``(n1, n2, n3, *k)``; corner gradients have
shape ``(n1-1, n2-1, n3-1, *k, 3)`` with the derivative axis last.
"""
import itertools

import numpy as np

CORNERS = tuple(itertools.product((0, 1), repeat=3))


def cell_dims(dims):
    return tuple(int(n) - 1 for n in dims[:3])


def corner_weight(h):
    return h**3 / 8.0


def _node_slices(s, cdims):
    return tuple(slice(si, si + ci) for si, ci in zip(s, cdims))


def _edge_slices(s, cdims, axis):
    lo = list(_node_slices(s, cdims))
    hi = list(lo)
    lo[axis] = slice(0, cdims[axis])
    hi[axis] = slice(1, cdims[axis] + 1)
    return tuple(lo), tuple(hi)


def corner_values(u, s):
    return u[_node_slices(s, cell_dims(u.shape))]


def corner_values_T(dv, s, out):
    out[_node_slices(s, cell_dims(out.shape))] += dv
    return out


def corner_gradient(u, s, h):
    cdims = cell_dims(u.shape)
    G = np.empty(cdims + u.shape[3:] + (3,))
    for a in range(3):
        lo, hi = _edge_slices(s, cdims, a)
        G[..., a] = (u[hi] - u[lo]) / h
    return G


def corner_gradient_T(dG, s, h, out):
    """Accumulate ``D_s^T dG`` into ``out`` (the adjoint of :func:`corner_gradient`)."""
    cdims = cell_dims(out.shape)
    for a in range(3):
        lo, hi = _edge_slices(s, cdims, a)
        g = dG[..., a] / h
        out[hi] += g
        out[lo] -= g
    return out


def node_weights(dims, h):
    """Trapezoidal node weights; they equal the summed corner weights at each node."""
    w = np.full(tuple(dims[:3]), h**3)
    for axis in range(3):
        idx = [slice(None)] * 3
        idx[axis] = 0
        w[tuple(idx)] *= 0.5
        idx[axis] = -1
        w[tuple(idx)] *= 0.5
    return w


def edge_weighted_operator(coef, h):
    """Edge weights of the quadratic form ``sum_c w_c coef_c |D_c u|^2``.

    ``coef`` has one value per corner quadrature point, shape ``(8, c1, c2, c3)``.
    Returns three arrays ``kappa_a`` (one per axis, living on the edges along
    that axis) such that the form equals ``sum_a sum_e kappa_a[e] (u[e+] - u[e-])^2``.
    """
    cdims = coef.shape[1:4]
    dims = tuple(c + 1 for c in cdims)
    w = corner_weight(h) / h**2
    kappas = []
    for a in range(3):
        shape = list(dims)
        shape[a] -= 1
        k = np.zeros(shape)
        for idx, s in enumerate(CORNERS):
            lo, _ = _edge_slices(s, cdims, a)
            k[lo] += w * coef[idx]
        kappas.append(k)
    return kappas
