"""Numerical checks of the structural identities satisfied by critical points.

Pointwise quantities (energy densities, radial derivatives, divergences) use
the second-order node gradients of :func:`cosserat_lab.fields.gradient`.
Quadratic forms (stability) use the corner rule of the energy itself so that
they are comparable with :func:`cosserat_lab.energy.second_variation`.

All checks report numbers; violations are data, not exceptions.
"""
import logging
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as splinalg

from .corners import CORNERS, corner_gradient, corner_values, corner_weight, \
    edge_weighted_operator
from .energy import State, el_residual, l2_norm
from .errors import CalibrationFailure, DomainError, PreconditionError, SolverFailure
from .fields import Grid, ball_integral, ball_integral_map, divergence, gradient, \
    poisson_solve, radial_unit
from .geometry import lie_basis, pmap, tangent_frame

log = logging.getLogger(__name__)

KAPPA = 10.0
SUPPORT_MARGIN = 3  # test fields must vanish on this many outer node layers


# ---------------------------------------------------------------- densities

def energy_density(s, p):
    """``|grad R|^p + |grad phi|^2`` at every node."""
    h = s.grid.h
    gR = gradient(s.R, h)
    gphi = gradient(s.phi, h)
    q = np.sum(gR * gR, axis=(-3, -2, -1))
    return q ** (0.5 * p) + np.sum(gphi * gphi, axis=(-2, -1))


def radial_density(s, center, p, phi_factor=1.0):
    """``p |grad R|^(p-2) |dR/dr|^2 + phi_factor |dphi/dr|^2`` at every node."""
    h = s.grid.h
    gR = gradient(s.R, h)
    gphi = gradient(s.phi, h)
    n = radial_unit(s.grid, center)
    dR = np.einsum("...abk,...k->...ab", gR, n)
    dphi = np.einsum("...ak,...k->...a", gphi, n)
    q = np.sum(gR * gR, axis=(-3, -2, -1))
    # |grad R|^(p-2) with 0^0 = 1
    a = np.where(q > 0, q, 1.0) ** (0.5 * p - 1.0) if p > 2 else np.ones_like(q)
    a = np.where(q > 0, a, 0.0 if p > 2 else 1.0)
    return p * a * np.sum(dR * dR, axis=(-2, -1)) + phi_factor * np.sum(dphi * dphi, axis=-1)


def _min_radius(grid):
    return 4.0 * grid.h


def _check_radius(grid, center, r):
    rmin = _min_radius(grid)
    if r < rmin * (1.0 - 1e-12):
        raise DomainError(f"radius {r:.6g} is below the reliable minimum 4h = {rmin:.6g}")
    d = grid.dist_to_boundary(center)
    if not r < d:
        raise DomainError(f"radius {r:.6g} reaches the boundary (distance {d:.6g})")


def renormalized_energy(s, center, r, C, p, density=None):
    """``exp(C r^2) r^(p-3) int_{B_r} (|grad R|^p + |grad phi|^2) + C r^3``.

    Raises
    ------
    DomainError
        Unless ``4h <= r < dist(center, boundary)``.
    """
    if C < 0:
        raise DomainError(f"C must be nonnegative, got {C}")
    _check_radius(s.grid, center, r)
    e = energy_density(s, p) if density is None else density
    return float(np.exp(C * r * r) * r ** (p - 3.0) * ball_integral(e, s.grid, center, r)
                 + C * r**3)


# ---------------------------------------------------------------- monotonicity

@dataclass
class MonotonicityTable:
    """Both sides of the monotonicity inequality for consecutive radius pairs.

    ``lhs[k] = values[k] + radial[k]`` and ``rhs[k] = values[k + 1]``; the pair
    is a violation when ``lhs - rhs > tau``. ``radial_factor2`` repeats the
    radial integral with weight 2 on the ``phi`` term, for reference.
    """

    center: np.ndarray
    radii: np.ndarray
    values: np.ndarray
    radial: np.ndarray
    radial_factor2: np.ndarray
    C: float
    tau: float

    @property
    def lhs(self):
        return self.values[:-1] + self.radial

    @property
    def rhs(self):
        return self.values[1:]

    @property
    def excess(self):
        return self.lhs - self.rhs

    def violations(self, tau=None):
        tau = self.tau if tau is None else tau
        return self.excess > tau

    @property
    def violation_count(self):
        return int(np.count_nonzero(self.violations()))

    def rows(self):
        """CSV rows: center, r1, r2, lhs, radial term, rhs, violation flag."""
        c = ";".join(f"{x:.6g}" for x in self.center)
        out = []
        for k in range(len(self.radii) - 1):
            out.append([c, self.radii[k], self.radii[k + 1], self.lhs[k], self.radial[k],
                        self.rhs[k], int(self.violations()[k])])
        return out


def _radial_integral(g, grid, center, r1, r2, p):
    """``int_{r1}^{r2} r^(p-3) int_{dB_r} g dr`` from differences of ball integrals."""
    m = max(1, int(np.ceil((r2 - r1) / grid.h)))
    edges = np.linspace(r1, r2, m + 1)
    balls = [ball_integral(g, grid, center, r) for r in edges]
    mids = 0.5 * (edges[:-1] + edges[1:])
    return float(np.sum(mids ** (p - 3.0) * np.diff(balls)))


def mono_tolerance(grid, residual, kappa=KAPPA):
    """``tau_mono = kappa (h + residual)``."""
    return kappa * (grid.h + residual)


def monotonicity_scan(s, center, radii, C, p, tau=None, residual=None, prm=None,
                      kappa=KAPPA):
    """Tabulate the monotonicity inequality at ``center`` for consecutive radii.

    Parameters
    ----------
    s : State
    center : array_like
    radii : sequence of float
        Strictly increasing, each in ``[4h, dist(center, boundary))``.
    C : float
    p : float
    tau : float, optional
        Violation tolerance. Defaults to ``kappa (h + residual)`` where
        ``residual`` is the larger Euler-Lagrange residual of ``s`` under
        ``prm`` (0 if neither is given).
    """
    radii = np.asarray(radii, dtype=float)
    center = np.asarray(center, dtype=float)
    if radii.ndim != 1 or len(radii) < 2 or np.any(np.diff(radii) <= 0):
        raise DomainError("radii must be a strictly increasing list of at least two values")
    for r in radii:
        _check_radius(s.grid, center, r)
    if tau is None:
        if residual is None:
            residual = max(el_residual(s, prm)) if prm is not None else 0.0
        tau = mono_tolerance(s.grid, residual, kappa)
    e = energy_density(s, p)
    values = np.array([renormalized_energy(s, center, r, C, p, density=e) for r in radii])
    g1 = radial_density(s, center, p, 1.0)
    g2 = radial_density(s, center, p, 2.0)
    radial = np.array([_radial_integral(g1, s.grid, center, radii[k], radii[k + 1], p)
                       for k in range(len(radii) - 1)])
    radial2 = np.array([_radial_integral(g2, s.grid, center, radii[k], radii[k + 1], p)
                        for k in range(len(radii) - 1)])
    return MonotonicityTable(center, radii, values, radial, radial2, float(C), float(tau))


def probe_state(n=16, length=1.0):
    """Trivial state ``phi = x``, ``R = I`` used to calibrate ``C``."""
    g = Grid.cube(n, length)
    return State(g, g.coords(), np.broadcast_to(np.eye(3), g.dims + (3, 3)).copy())


def calibrate_C(prm, C0=1.0, kmax=40, probe=None, n_radii=8, kappa=KAPPA):
    """Smallest ``C0 2^k`` (k >= 0) passing the monotonicity scan on a probe state.

    Candidates below the load floor ``C0 (sup|f|^2 + sup|M|^(p/(p-1)))`` are
    skipped, so larger loads never yield a smaller constant.

    Raises
    ------
    CalibrationFailure
        If no candidate up to ``C0 2^kmax`` passes.
    """
    probe = probe_state() if probe is None else probe
    g = probe.grid
    center = g.center
    rmax = 0.9 * g.dist_to_boundary(center)
    radii = np.linspace(_min_radius(g), rmax, n_radii)
    fs, Ms = prm.load_sup()
    floor = C0 * (fs**2 + Ms ** (prm.p / (prm.p - 1.0)))
    residual = max(el_residual(probe, prm))
    tau = mono_tolerance(g, residual, kappa)
    for k in range(kmax + 1):
        C = C0 * 2.0**k
        if C < floor:
            continue
        table = monotonicity_scan(probe, center, radii, C, prm.p, tau=tau)
        if table.violation_count == 0:
            return C
    raise CalibrationFailure(f"no C up to {C0 * 2.0**kmax:g} removes all violations")


# ---------------------------------------------------------------- density

def density_estimate(s, center, C, p):
    """Renormalized energy at the smallest reliable radius ``4h``."""
    return renormalized_energy(s, center, _min_radius(s.grid), C, p)


def density_trace(s, center, C, p, factors=(1.0, 1.25, 1.5, 2.0, 2.5, 3.0, 4.0)):
    """``(radii, values)`` of the renormalized energy from ``4h`` outwards."""
    rmin = _min_radius(s.grid)
    d = s.grid.dist_to_boundary(center)
    radii = np.array([rmin * f for f in factors if rmin * f < d])
    e = energy_density(s, p)
    return radii, np.array([renormalized_energy(s, center, r, C, p, density=e) for r in radii])


@dataclass
class DensityMap:
    """Per-node density at ``r_min`` (NaN where the ball leaves the box) and flags."""

    values: np.ndarray
    flags: np.ndarray
    threshold: float
    r_min: float
    C: float

    @property
    def count(self):
        return int(np.count_nonzero(self.flags))

    def locations(self, grid):
        idx = np.argwhere(self.flags)
        return grid.lower + grid.h * idx


def detect_singular_set(s, eps0, C, p):
    """Flag nodes whose density estimate is at least ``eps0^p / 2``."""
    if not eps0 > 0:
        raise DomainError(f"eps0 must be positive, got {eps0}")
    r = _min_radius(s.grid)
    ball = ball_integral_map(energy_density(s, p), s.grid, r)
    values = np.exp(C * r * r) * r ** (p - 3.0) * ball + C * r**3
    threshold = 0.5 * eps0**p
    flags = np.nan_to_num(values, nan=-np.inf) >= threshold
    return DensityMap(values, flags, threshold, r, float(C))


# ---------------------------------------------------------------- stationarity

def _require_margin(field, grid, name, margin=SUPPORT_MARGIN):
    inner = tuple(slice(margin, n - margin) for n in grid.dims)
    mask = np.ones(grid.dims, dtype=bool)
    mask[inner] = False
    vals = np.asarray(field)[mask]
    if vals.size and float(np.max(np.abs(vals))) > 0.0:
        raise PreconditionError(f"{name} must vanish on the {margin} outer node layers")


def bump(grid, margin=SUPPORT_MARGIN):
    """Smooth ``prod sin^2`` cutoff supported strictly inside the outer layers."""
    out = np.ones(grid.dims)
    for a, n in enumerate(grid.dims):
        t = (np.arange(n) - (margin - 1)) / (n - 2 * margin + 1)
        prof = np.where((t > 0) & (t < 1), np.sin(np.pi * t) ** 2, 0.0)
        shape = [1, 1, 1]
        shape[a] = n
        out = out * prof.reshape(shape)
    return out


def random_test_field(grid, rng, modes=2, margin=SUPPORT_MARGIN):
    """Smooth random vector field with the compact support required by the checks."""
    x = (grid.coords() - grid.lower) / (grid.upper - grid.lower)
    Y = np.zeros(grid.dims + (3,))
    for _ in range(modes):
        k = rng.integers(0, 3, size=3)
        amp = rng.standard_normal(3)
        ph = rng.uniform(0, 2 * np.pi, size=3)
        Y += amp * np.cos(np.pi * np.sum(k * x, axis=-1)[..., None] + ph)
    return Y * bump(grid, margin)[..., None]


def c1_norm(Y, grid):
    return float(np.max(np.abs(Y)) + np.max(np.abs(gradient(Y, grid.h))))


def stationarity_tolerance(grid, Y, residual, kappa=KAPPA):
    """``tau_stat = kappa (h + residual) |Y|_C1``."""
    return kappa * (grid.h + residual) * c1_norm(Y, grid)


def stationarity_residual(s, prm, Y):
    """Absolute value of the inner-variation identity tested with ``Y``.

    Evaluates

        int e (-div Y) + <f, grad(phi) Y> + <M, grad(R) Y>
            + <de/d(grad phi), grad(phi) grad(Y)> + <de/d(grad R), grad(R) grad(Y)>

    with ``e = |P(R^T grad phi - I)|^2 - |P(I)|^2 + lam (|grad R|^2 + eps^2)^(p/2)``.
    For unit moduli ``de/d(grad phi) : grad(phi) grad(Y)`` is
    ``2 grad(phi) x grad(phi) : grad Y - 2 R_ij d_k phi^i d_j Y^k``.

    Raises
    ------
    PreconditionError
        If ``Y`` does not vanish on the outer ``SUPPORT_MARGIN`` node layers.
    """
    g = s.grid
    Y = np.asarray(Y, dtype=float)
    _require_margin(Y, g, "Y")
    h = g.h
    w = g.weights()
    gphi = gradient(s.phi, h)  # (..., i, k) = d_k phi^i
    gR = gradient(s.R, h)      # (..., a, b, k)
    gY = gradient(Y, h)        # (..., k, j) = d_j Y^k
    divY = np.trace(gY, axis1=-2, axis2=-1)
    A = np.swapaxes(s.R, -1, -2) @ gphi - np.eye(3)
    PA = pmap(A, prm.mu)
    PI = pmap(np.eye(3), prm.mu)
    q = np.sum(gR * gR, axis=(-3, -2, -1))
    base = q + prm.eps**2
    e = (np.sum(PA * PA, axis=(-2, -1)) - float(np.sum(PI * PI))
         + prm.lam * base ** (0.5 * prm.p))
    dphi_e = 2.0 * s.R @ pmap(PA, prm.mu)  # d e / d(grad phi)
    dR_e = prm.lam * prm.p * (base ** (0.5 * prm.p - 1.0))[..., None, None, None] * gR
    f = prm.body_force(g.dims)
    M = prm.moment(g.dims)
    total = (-e * divY
             + np.einsum("...i,...ik,...k->...", f, gphi, Y)
             + np.einsum("...ab,...abk,...k->...", M, gR, Y)
             + np.einsum("...ij,...ik,...kj->...", dphi_e, gphi, gY)
             + np.einsum("...abj,...abk,...kj->...", dR_e, gR, gY))
    return abs(float(np.sum(w * total)))


# ---------------------------------------------------------------- div-curl

@dataclass
class DivCurlReport:
    """Residuals of the divergence-free rewriting of the rotation equation.

    ``div_residual[i]`` is the L2 norm of ``div(lam a <grad R, V_i> + grad Y_i)``;
    ``reconstruction`` is the L2 norm of the difference between
    ``div(lam a grad R)`` and its reconstruction from the ``Y_i``.
    """

    div_residual: np.ndarray
    reconstruction: float
    Y: np.ndarray = field(repr=False)

    @property
    def max_div(self):
        return float(np.max(self.div_residual))


def divcurl_check(s, prm):
    """Solve the auxiliary Poisson problems and evaluate both residuals.

    With ``a = (|grad R|^2 + eps^2)^((p-2)/2)`` and ``e`` the strain density,
    ``Y_i`` solves ``laplacian(Y_i) = -(1/p) <de/dR + M, V_i>`` with zero
    boundary values; for unit moduli the right-hand side is
    ``(2/p) <grad phi, V_i> - (1/p) <M, V_i>``.
    """
    g = s.grid
    h, p = g.h, prm.p
    gphi = gradient(s.phi, h)
    gR = gradient(s.R, h)
    V = tangent_frame(s.R)  # (..., i, a, b)
    basis = lie_basis()
    q = np.sum(gR * gR, axis=(-3, -2, -1))
    a = (q + prm.eps**2) ** (0.5 * p - 1.0)
    A = np.swapaxes(s.R, -1, -2) @ gphi - np.eye(3)
    S = pmap(pmap(A, prm.mu), prm.mu)
    dRe = 2.0 * gphi @ np.swapaxes(S, -1, -2)
    M = prm.moment(g.dims)
    src = -np.einsum("...ab,...iab->...i", dRe + M, V) / p
    Y = poisson_solve(src, np.zeros_like(src), h, rtol=1e-12)
    gY = gradient(Y, h)  # (..., i, k)
    flux_R = prm.lam * a[..., None, None] * np.einsum("...abk,...iab->...ik", gR, V)
    div_res = divergence(flux_R + gY, h)  # (..., i)
    norms = np.array([l2_norm(div_res[..., i], g) for i in range(3)])

    # reconstruction: div(lam a grad R) against the rewritten right-hand side
    lhs = divergence(prm.lam * a[..., None, None, None] * gR, h)
    gV = np.einsum("iac,...cbk->...iabk", basis, gR)  # d_k V_i = a_i d_k R
    rhs = (np.einsum("...ik,...iabk->...ab", flux_R + gY, gV)
           - np.einsum("...ik,...iabk->...ab", gY, gV)
           - np.einsum("...i,...iab->...ab", src, V))
    return DivCurlReport(norms, l2_norm(lhs - rhs, g), Y)


# ---------------------------------------------------------------- stability

def _corner_powers(R, h, p, eps):
    """Per corner: ``a = (q + eps^2)^((p-2)/2)`` and ``b = a q`` with ``q = |grad R|^2``."""
    out = []
    for s in CORNERS:
        G = corner_gradient(R, s, h)
        q = np.sum(G * G, axis=(-3, -2, -1))
        base = q + eps**2
        if p == 2.0:
            a = np.ones_like(q)
        else:
            a = np.where(base > 0, np.where(base > 0, base, 1.0) ** (0.5 * p - 1.0), 0.0)
        out.append((a, a * q))
    return out


def stability_form(s, prm, omega, psi):
    """Corner-rule quadrature of the stability integrand

        6 |grad w|^2 - 4 sum_i psi sum_k (a_i R)_ik d_k w
            + p (p+1) a |grad psi|^2 - 2 p a |grad R|^2 psi^2

    with ``a = (|grad R|^2 + eps^2)^((p-2)/2)``.
    """
    g = s.grid
    omega = np.asarray(omega, dtype=float)
    psi = np.asarray(psi, dtype=float)
    for name, fld in (("omega", omega), ("psi", psi)):
        b = fld[g.boundary_mask()]
        if b.size and float(np.max(np.abs(b))) > 0.0:
            raise PreconditionError(f"{name} must vanish on the boundary")
    h, p = g.h, prm.p
    basis = lie_basis()
    w = corner_weight(h)
    powers = _corner_powers(s.R, h, p, prm.eps)
    total = 0.0
    for (a, b), c in zip(powers, CORNERS):
        Gw = corner_gradient(omega, c, h)
        Gp = corner_gradient(psi, c, h)
        pc = corner_values(psi, c)
        Rc = corner_values(s.R, c)
        aiR = np.einsum("iab,...bc->...iac", basis, Rc)
        cross = np.einsum("...iik,...k->...", aiR, Gw)
        dens = (6.0 * np.sum(Gw * Gw, axis=-1) - 4.0 * pc * cross
                + p * (p + 1.0) * a * np.sum(Gp * Gp, axis=-1) - 2.0 * p * b * pc * pc)
        total += w * float(np.sum(dens))
    return total


def rayleigh_operator(s, prm):
    """Sparse matrices ``(A, n_inner)`` with ``psi^T A psi = Q(psi)`` on interior nodes.

    ``Q(psi) = int (p+1) a |grad psi|^2 - 2 b psi^2`` by the corner rule.
    """
    g = s.grid
    h, p = g.h, prm.p
    powers = _corner_powers(s.R, h, p, prm.eps)
    coef = np.stack([(p + 1.0) * a for a, _ in powers])
    kappas = edge_weighted_operator(coef, h)
    dims = g.dims
    inner_dims = tuple(n - 2 for n in dims)
    n_in = int(np.prod(inner_dims))
    index = -np.ones(dims, dtype=np.int64)
    index[1:-1, 1:-1, 1:-1] = np.arange(n_in).reshape(inner_dims)
    diag = np.zeros(dims)
    rows, cols, vals = [], [], []
    for ax, k in enumerate(kappas):
        lo = [slice(None)] * 3
        hi = [slice(None)] * 3
        lo[ax] = slice(0, -1)
        hi[ax] = slice(1, None)
        i_lo, i_hi = index[tuple(lo)], index[tuple(hi)]
        diag[tuple(lo)] += k
        diag[tuple(hi)] += k
        both = (i_lo >= 0) & (i_hi >= 0)
        rows += [i_lo[both], i_hi[both]]
        cols += [i_hi[both], i_lo[both]]
        vals += [-k[both], -k[both]]
    # lumped mass of the zeroth-order term
    mass = np.zeros(dims)
    w = corner_weight(h)
    for (_, b), c in zip(powers, CORNERS):
        sl = tuple(slice(ci, ci + n - 1) for ci, n in zip(c, dims))
        mass[sl] += 2.0 * w * b
    d = (diag - mass)[1:-1, 1:-1, 1:-1].ravel()
    rows.append(np.arange(n_in))
    cols.append(np.arange(n_in))
    vals.append(d)
    A = sparse.csc_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n_in, n_in))
    return A, n_in


@dataclass
class StabilityReport:
    minimum: float
    minimizer: np.ndarray = field(repr=False)
    iterations: int
    probes: dict = field(default_factory=dict)
    trace: list = field(default_factory=list, repr=False)


def stability_rayleigh(s, prm, tol=1e-13, maxiter=5000, probes=True):
    """Minimum of ``Q(psi) / int psi^2`` over interior node values.

    Shifted inverse power iteration: the shift is a Gershgorin lower bound,
    so ``A - shift I`` is positive definite and its largest inverse
    eigenvalue belongs to the minimum. ``int psi^2`` is ``h^3 sum psi^2``.

    Raises
    ------
    SolverFailure
        If the Rayleigh quotient has not settled to ``tol`` (relative) after
        ``maxiter`` iterations.
    """
    g = s.grid
    h3 = g.h**3
    A, n_in = rayleigh_operator(s, prm)
    B = A / h3
    absrow = np.asarray(abs(B).sum(axis=1)).ravel()
    dvals = B.diagonal()
    shift = float(np.min(2.0 * dvals - absrow))
    shift -= 1e-3 * max(1.0, abs(shift))
    lu = splinalg.splu((B - shift * sparse.identity(n_in, format="csc")).tocsc())
    x = bump(g, 1)[1:-1, 1:-1, 1:-1].ravel()
    x /= np.linalg.norm(x)
    rho_old = float(x @ (B @ x))
    trace = [rho_old]
    for k in range(1, maxiter + 1):
        x = lu.solve(x)
        x /= np.linalg.norm(x)
        rho = float(x @ (B @ x))
        trace.append(rho)
        if abs(rho - rho_old) <= tol * max(1.0, abs(rho)):
            break
        rho_old = rho
    else:
        raise SolverFailure("inverse power iteration did not converge", residual=abs(rho - rho_old),
                            trace=trace)
    psi = np.zeros(g.dims)
    psi[1:-1, 1:-1, 1:-1] = (x / np.sqrt(h3)).reshape(tuple(n - 2 for n in g.dims))
    report = StabilityReport(rho, psi, k, trace=trace)
    if probes:
        b = bump(g, 1)
        report.probes = {
            "omega=0,psi=min": stability_form(s, prm, np.zeros(g.dims), psi),
            "omega=bump,psi=0": stability_form(s, prm, b, np.zeros(g.dims)),
            "omega=bump,psi=bump": stability_form(s, prm, b, b),
        }
    return report


def dirichlet_ground_eigenvalue(dims, h):
    """Smallest eigenvalue of the 7-point Dirichlet Laplacian on a box of nodes."""
    return float(sum(4.0 / h**2 * np.sin(np.pi / (2.0 * (n - 1))) ** 2 for n in dims))
