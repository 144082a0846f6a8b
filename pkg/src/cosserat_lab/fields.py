"""Uniform box grids, finite-difference operators, quadrature and Poisson solves.

Fields are plain numpy arrays of shape ``(n1, n2, n3, *k)``: ``k = ()`` for
scalars, ``(3,)`` for vectors and ``(3, 3)`` for matrices and rotations.
Gradients append a trailing derivative axis.
"""
from dataclasses import dataclass

import numpy as np
from scipy import fft

from . import kernels
from .errors import DomainError, InvariantViolation, SolverFailure
from .corners import node_weights


@dataclass(frozen=True)
class Grid:
    """Closed box ``[origin, origin + (n - 1) h]`` sampled at ``n1 x n2 x n3`` nodes."""

    dims: tuple
    h: float
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        dims = tuple(int(n) for n in self.dims)
        if len(dims) != 3 or min(dims) < 3:
            raise InvariantViolation(f"grid needs three node counts >= 3, got {self.dims}")
        if not (np.isfinite(self.h) and self.h > 0):
            raise InvariantViolation(f"grid spacing must be positive, got {self.h}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "h", float(self.h))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))

    @classmethod
    def cube(cls, n, length=1.0, origin=(0.0, 0.0, 0.0)):
        return cls((n, n, n), length / (n - 1), origin)

    @property
    def shape(self):
        return self.dims

    @property
    def size(self):
        return int(np.prod(self.dims))

    @property
    def lower(self):
        return np.asarray(self.origin)

    @property
    def upper(self):
        return self.lower + (np.asarray(self.dims) - 1) * self.h

    @property
    def center(self):
        return 0.5 * (self.lower + self.upper)

    @property
    def volume(self):
        return float(np.prod(self.upper - self.lower))

    def coords(self):
        axes = [self.origin[a] + self.h * np.arange(self.dims[a]) for a in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def weights(self):
        return node_weights(self.dims, self.h)

    def interior_mask(self):
        m = np.zeros(self.dims, dtype=bool)
        m[1:-1, 1:-1, 1:-1] = True
        return m

    def boundary_mask(self):
        return ~self.interior_mask()

    def dist_to_boundary(self, x):
        x = np.asarray(x, dtype=float)
        return float(min(np.min(x - self.lower), np.min(self.upper - x)))

    def node_position(self, idx):
        return self.lower + self.h * np.asarray(idx, dtype=float)


def gradient(F, h):
    """Second-order central differences inside, second-order one-sided at faces."""
    F = np.asarray(F, dtype=float)
    parts = np.gradient(F, h, axis=(0, 1, 2), edge_order=2)
    return np.stack(parts, axis=-1)


def divergence(F, h):
    """Contract the gradient with the last axis of ``F`` (row-wise for matrices)."""
    F = np.asarray(F, dtype=float)
    if F.shape[-1] != 3:
        raise ValueError("divergence needs a trailing axis of length 3")
    out = np.zeros(F.shape[:-1])
    for k in range(3):
        out += np.gradient(F[..., k], h, axis=k, edge_order=2)
    return out


def laplacian(F, h):
    """7-point Laplacian. Values are defined on interior nodes; boundary entries are 0."""
    return kernels.laplace7(np.asarray(F, dtype=float), h)


def conjugate_gradient(apply_A, b, x0=None, precond=None, converged=None, maxiter=5000):
    """Preconditioned conjugate gradients for an SPD operator.

    ``converged(x, r, k)`` decides termination from the current iterate and
    residual ``r = b - A x``; it defaults to a relative 2-norm test.
    Returns ``(x, r, iterations)``.
    """
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=float)
    if precond is None:
        precond = lambda v: v  # noqa: E731
    if converged is None:
        bnorm = np.linalg.norm(b)
        converged = lambda x, r, k: np.linalg.norm(r) <= 1e-10 * bnorm  # noqa: E731
    r = b - apply_A(x) if x0 is not None else b.copy()
    if converged(x, r, 0):
        return x, r, 0
    z = precond(r)
    d = z.copy()
    rz = float(np.vdot(r, z))
    for k in range(1, maxiter + 1):
        Ad = apply_A(d)
        dAd = float(np.vdot(d, Ad))
        if dAd <= 0:
            raise SolverFailure("operator is not positive definite along a search direction",
                                residual=float(np.linalg.norm(r)))
        alpha = rz / dAd
        x += alpha * d
        r -= alpha * Ad
        if converged(x, r, k):
            return x, r, k
        z = precond(r)
        rz_new = float(np.vdot(r, z))
        d = z + (rz_new / rz) * d
        rz = rz_new
    raise SolverFailure(f"conjugate gradients did not converge in {maxiter} iterations",
                        residual=float(np.linalg.norm(r)))


def poisson_solve(rhs, boundary, h, rtol=1e-10, atol=1e-14, maxiter=5000, x0=None,
                  damping=1.0):
    """Solve ``laplacian(u) = rhs`` on interior nodes with ``u = boundary`` on the faces.

    Jacobi-preconditioned conjugate gradients on the symmetric 7-point system.
    Converged when ``max |laplacian(u) - rhs| <= rtol * max|rhs| + atol`` over
    interior nodes.

    Parameters
    ----------
    rhs, boundary : ndarray
        Node arrays of identical shape ``(n1, n2, n3, *k)``. Interior entries
        of ``boundary`` are ignored unless ``x0`` is None, in which case the
        iteration starts from zero inside.
    x0 : ndarray, optional
        Warm start for the interior values.
    """
    rhs = np.asarray(rhs, dtype=float)
    u = np.array(boundary, dtype=float)
    if u.shape != rhs.shape:
        raise ValueError(f"rhs shape {rhs.shape} != boundary shape {u.shape}")
    inner = (slice(1, -1),) * 3
    if x0 is None:
        u[inner] = 0.0
    else:
        u[inner] = np.asarray(x0, dtype=float)[inner]
    rmax = float(np.max(np.abs(rhs[inner]))) if rhs[inner].size else 0.0
    threshold = rtol * rmax + atol

    # unknowns: interior correction e with -lap(e) = -(rhs - lap(u))
    b = np.zeros_like(u)
    b[inner] = -(rhs[inner] - laplacian(u, h)[inner])
    if float(np.max(np.abs(b))) <= threshold:
        return u

    def apply_A(e):
        return -laplacian(e, h)

    scale = damping * h * h / 6.0

    def precond(r):
        return scale * r

    def converged(e, r, k):
        return float(np.max(np.abs(r))) <= threshold

    e, _, _ = conjugate_gradient(apply_A, b, precond=precond, converged=converged,
                                 maxiter=maxiter)
    u[inner] += e[inner]
    return u


def dirichlet_eigenvalues(dims, h):
    """Eigenvalues of ``-laplacian`` with zero Dirichlet data, as a broadcast grid."""
    lams = []
    for a, n in enumerate(dims):
        k = np.arange(1, n - 1)
        lam = (4.0 / h**2) * np.sin(np.pi * k / (2.0 * (n - 1))) ** 2
        shape = [1, 1, 1]
        shape[a] = n - 2
        lams.append(lam.reshape(shape))
    return lams[0] + lams[1] + lams[2]


def dirichlet_solve_fast(g, h, shift=0.0):
    """Apply ``(-laplacian + shift)^(-1)`` with zero Dirichlet data via a sine transform.

    ``g`` is a node array; its boundary entries are ignored and the result has
    zero boundary. Used as a preconditioner, not as the Poisson solver of record.
    """
    g = np.asarray(g, dtype=float)
    inner = (slice(1, -1),) * 3
    lam = dirichlet_eigenvalues(g.shape[:3], h) + shift
    lam = lam.reshape(lam.shape + (1,) * (g.ndim - 3))
    gh = fft.dstn(g[inner], type=1, axes=(0, 1, 2))
    out = np.zeros_like(g)
    out[inner] = fft.idstn(gh / lam, type=1, axes=(0, 1, 2))
    return out


# --- ball and shell quadrature -------------------------------------------------

_SUB = 8
_SUB_OFFSETS = (np.arange(_SUB) + 0.5) / _SUB


def _cell_fractions(rel_lo, h, r):
    """Volume fraction of each cell inside a ball of radius ``r`` centred at 0.

    ``rel_lo`` holds cell lower-corner positions relative to the centre,
    shape ``(m, 3)``. Cells that are clearly in or out are classified exactly;
    cut cells use ``8^3`` subsample points.
    """
    rel_hi = rel_lo + h
    near = np.clip(0.0, rel_lo, rel_hi)
    far = np.maximum(np.abs(rel_lo), np.abs(rel_hi))
    dn = np.sum(near * near, axis=1)
    df = np.sum(far * far, axis=1)
    r2 = r * r
    frac = np.where(df <= r2, 1.0, 0.0)
    cut = (dn < r2) & (df > r2)
    if np.any(cut):
        sub = np.stack(np.meshgrid(_SUB_OFFSETS, _SUB_OFFSETS, _SUB_OFFSETS, indexing="ij"),
                       axis=-1).reshape(-1, 3) * h
        pts = rel_lo[cut][:, None, :] + sub[None, :, :]
        inside = np.sum(pts * pts, axis=2) <= r2
        frac[cut] = np.count_nonzero(inside, axis=1) / float(_SUB**3)
    return frac


def _cell_average(F):
    return 0.125 * (
        F[:-1, :-1, :-1] + F[1:, :-1, :-1] + F[:-1, 1:, :-1] + F[:-1, :-1, 1:]
        + F[1:, 1:, :-1] + F[1:, :-1, 1:] + F[:-1, 1:, 1:] + F[1:, 1:, 1:]
    )


def _check_ball(grid, center, r, what="ball"):
    if not r > 0:
        raise DomainError(f"{what} radius must be positive, got {r}")
    d = grid.dist_to_boundary(center)
    if not r < d:
        raise DomainError(f"{what} of radius {r:.6g} around {np.asarray(center)} leaves the "
                          f"domain (distance to boundary {d:.6g})")


def ball_integral(F, grid, center, r):
    """Integral of a scalar node field over ``B_r(center)``.

    Cell-wise rule: the mean of the eight corner values times the cell volume
    times the fraction of the cell inside the ball.
    """
    F = np.asarray(F, dtype=float)
    center = np.asarray(center, dtype=float)
    _check_ball(grid, center, r)
    h = grid.h
    lo_idx = np.maximum(np.floor((center - r - grid.lower) / h).astype(int), 0)
    hi_idx = np.minimum(np.ceil((center + r - grid.lower) / h).astype(int),
                        np.asarray(grid.dims) - 1)
    sl = tuple(slice(a, b) for a, b in zip(lo_idx, hi_idx))
    avg = _cell_average(F[tuple(slice(a, b + 1) for a, b in zip(lo_idx, hi_idx))])
    idx = np.stack(np.meshgrid(*[np.arange(s.start, s.stop) for s in sl], indexing="ij"),
                   axis=-1).reshape(-1, 3)
    rel_lo = (idx - (center - grid.lower) / h) * h
    frac = _cell_fractions(rel_lo, h, r).reshape(avg.shape)
    return float(np.sum(frac * avg)) * h**3


def ball_integral_map(F, grid, r):
    """Ball integrals of radius ``r`` centred at every node; NaN where the ball leaves the box."""
    F = np.asarray(F, dtype=float)
    h = grid.h
    m = int(np.ceil(r / h))
    offs = np.arange(-m, m)
    idx = np.stack(np.meshgrid(offs, offs, offs, indexing="ij"), axis=-1).reshape(-1, 3)
    frac = _cell_fractions(idx * h, h, r)
    keep = frac > 0
    idx, frac = idx[keep], frac[keep]
    avg = _cell_average(F)
    dims = np.asarray(grid.dims)
    out = np.full(grid.dims, np.nan)
    # nodes whose ball fits strictly inside the box
    lo = np.zeros(3, dtype=int)
    hi = dims.copy()
    for a in range(3):
        pos = np.arange(dims[a]) * h
        ok = (pos > r) & (pos < (dims[a] - 1) * h - r)
        if not np.any(ok):
            return out
        lo[a] = int(np.argmax(ok))
        hi[a] = int(len(ok) - np.argmax(ok[::-1]))
    acc = np.zeros(tuple(hi - lo))
    for (i, j, k), w in zip(idx, frac):
        acc += w * avg[lo[0] + i:hi[0] + i, lo[1] + j:hi[1] + j, lo[2] + k:hi[2] + k]
    out[lo[0]:hi[0], lo[1]:hi[1], lo[2]:hi[2]] = acc * h**3
    return out


def shell_integral(F, grid, center, r, dr=None):
    """Surface integral of ``F`` over the sphere ``|x - center| = r``.

    Estimated as the centred difference quotient of ball integrals,
    ``(B(r + dr/2) - B(r - dr/2)) / dr``.
    """
    dr = grid.h if dr is None else float(dr)
    if not 0 < dr < 2 * r:
        raise DomainError(f"shell width {dr} must lie in (0, 2r) for r={r}")
    _check_ball(grid, center, r + 0.5 * dr, what="shell")
    outer = ball_integral(F, grid, center, r + 0.5 * dr)
    inner = ball_integral(F, grid, center, r - 0.5 * dr)
    return (outer - inner) / dr


def radial_unit(grid, center):
    x = grid.coords() - np.asarray(center, dtype=float)
    dist = np.linalg.norm(x, axis=-1)
    unit = np.zeros_like(x)
    np.divide(x, dist[..., None], out=unit, where=dist[..., None] > 0)
    return unit


def radial_derivative(F, grid, center):
    """``<grad F(x), (x - x0)/|x - x0|>`` at every node (0 at the centre node)."""
    return np.einsum("...a,...a->...", gradient(F, grid.h), _expand_unit(F, grid, center))


def _expand_unit(F, grid, center):
    unit = radial_unit(grid, center)
    extra = np.ndim(F) - 3
    return unit.reshape(unit.shape[:3] + (1,) * extra + (3,))
