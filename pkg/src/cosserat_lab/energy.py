"""Discrete Cosserat energy, its gradients and Euler-Lagrange residuals.

The energy density

    |P(R^T grad(phi) - I)|^2 + lam ((|grad R|^2 + eps^2)^(p/2) - eps^p)
        + <phi - x, f> + <R, M>

is integrated with the corner rule of :mod:`cosserat_lab.corners`. The
gradients below are the exact derivatives of that discrete sum, so they can
be checked against finite differences to rounding accuracy.

Gradients are reported as L2 gradients (derivative divided by the nodal
quadrature weight). Boundary nodes carry Dirichlet data and their entries
are zero.
"""
from dataclasses import dataclass, field, replace

import numpy as np

from . import kernels
from .corners import CORNERS, corner_gradient, corner_gradient_T, corner_values, \
    corner_values_T, corner_weight
from .errors import DataError, DegeneratePointError, InvariantViolation, PreconditionError
from .fields import Grid
from .geometry import ModuliSet, check_rotation, pmap, project_tangent, realize_tangent


@dataclass(frozen=True, eq=False)
class ModelParams:
    """Exponent, moduli, regularization and loads.

    ``f`` and ``M`` may be None (zero), a constant of shape ``(3,)`` /
    ``(3, 3)``, or a node field ``(n1, n2, n3, 3)`` / ``(n1, n2, n3, 3, 3)``.
    """

    p: float = 2.0
    mu: ModuliSet = field(default_factory=ModuliSet)
    eps: float = 1e-3
    f: object = None
    M: object = None
    lam: float = 1.0

    def __post_init__(self):
        if not 2.0 <= self.p < 3.0:
            raise InvariantViolation(f"exponent p must lie in [2, 3), got {self.p}")
        if not (np.isfinite(self.eps) and self.eps >= 0):
            raise InvariantViolation(f"regularization eps must be >= 0, got {self.eps}")
        if not (np.isfinite(self.lam) and self.lam > 0):
            raise InvariantViolation(f"rotational weight lam must be positive, got {self.lam}")
        for name in ("f", "M"):
            v = getattr(self, name)
            if v is not None and not np.all(np.isfinite(np.asarray(v, dtype=float))):
                raise InvariantViolation(f"load {name} must be finite")

    def with_eps(self, eps):
        return replace(self, eps=float(eps))

    def body_force(self, dims):
        return _broadcast_load(self.f, dims, (3,))

    def moment(self, dims):
        return _broadcast_load(self.M, dims, (3, 3))

    def load_sup(self):
        """``(sup|f|, sup|M|)`` with Euclidean / Frobenius pointwise norms."""
        fs = 0.0 if self.f is None else float(np.max(np.linalg.norm(
            np.asarray(self.f, dtype=float).reshape(-1, 3), axis=-1)))
        Ms = 0.0 if self.M is None else float(np.max(np.linalg.norm(
            np.asarray(self.M, dtype=float).reshape(-1, 9), axis=-1)))
        return fs, Ms


def _broadcast_load(v, dims, trailing):
    if v is None:
        return np.zeros(tuple(dims) + trailing)
    v = np.asarray(v, dtype=float)
    if v.shape == trailing:
        return np.broadcast_to(v, tuple(dims) + trailing)
    if v.shape != tuple(dims) + trailing:
        raise InvariantViolation(f"load of shape {v.shape} does not fit grid {dims}")
    return v


@dataclass(eq=False)
class State:
    """Translation ``phi`` and microrotation ``R`` sampled on a shared grid."""

    grid: Grid
    phi: np.ndarray
    R: np.ndarray

    def __post_init__(self):
        self.phi = np.asarray(self.phi, dtype=float)
        self.R = np.asarray(self.R, dtype=float)
        dims = tuple(self.grid.dims)
        if self.phi.shape != dims + (3,):
            raise InvariantViolation(f"phi must have shape {dims + (3,)}, got {self.phi.shape}")
        if self.R.shape != dims + (3, 3):
            raise InvariantViolation(f"R must have shape {dims + (3, 3)}, got {self.R.shape}")
        if not (np.all(np.isfinite(self.phi)) and np.all(np.isfinite(self.R))):
            raise DataError("state contains non-finite values")
        check_rotation(self.R, what="rotation field")

    def copy(self):
        return State(self.grid, self.phi.copy(), self.R.copy())


@dataclass
class Evaluation:
    energy: float
    dphi: np.ndarray  # raw derivative w.r.t. nodal phi
    dR: np.ndarray    # raw (extrinsic) derivative w.r.t. nodal R entries


def _check_finite(state):
    if not (np.all(np.isfinite(state.phi)) and np.all(np.isfinite(state.R))):
        raise DataError("state contains non-finite values")


def strain_energy(phi, R, h, mu, grad=False, simplified=False):
    """Corner-rule integral of ``|P(R^T grad phi - I)|^2``.

    With ``simplified=True`` the unit-moduli density
    ``|grad phi|^2 - 2 <R, grad phi> + 3`` is integrated instead.
    """
    w = corner_weight(h)
    energy = 0.0
    dphi = np.zeros_like(phi) if grad else None
    dR = np.zeros_like(R) if grad else None
    eye = np.eye(3)
    for s in CORNERS:
        G = corner_gradient(phi, s, h)
        Rc = corner_values(R, s)
        if simplified:
            dens = np.sum(G * G, axis=(-2, -1)) - 2.0 * np.sum(Rc * G, axis=(-2, -1)) + 3.0
            energy += w * float(np.sum(dens))
            if grad:
                corner_gradient_T(w * (2.0 * G - 2.0 * Rc), s, h, dphi)
                corner_values_T(-2.0 * w * G, s, dR)
            continue
        A = np.swapaxes(Rc, -1, -2) @ G - eye
        P = pmap(A, mu)
        energy += w * float(np.sum(P * P))
        if grad:
            S = pmap(P, mu)  # P is self-adjoint, so P^T P A = P(P(A))
            corner_gradient_T(2.0 * w * (Rc @ S), s, h, dphi)
            corner_values_T(2.0 * w * (G @ np.swapaxes(S, -1, -2)), s, dR)
    return energy, dphi, dR


def evaluate(state, prm, grad=True, simplified=False):
    """Energy and raw derivatives of the discrete functional."""
    _check_finite(state)
    g = state.grid
    h = g.h
    w = g.weights()
    e_strain, dphi, dR = strain_energy(state.phi, state.R, h, prm.mu, grad=grad,
                                       simplified=simplified)
    e_rot, dR_rot = kernels.pdirichlet(state.R, h, prm.p, prm.eps)
    f = prm.body_force(g.dims)
    M = prm.moment(g.dims)
    x = g.coords()
    e_force = float(np.sum(w * np.sum((state.phi - x) * f, axis=-1)))
    e_moment = float(np.sum(w * np.sum(state.R * M, axis=(-2, -1))))
    energy = e_strain + prm.lam * e_rot + e_force + e_moment
    if not np.isfinite(energy):
        raise DataError("energy evaluated to a non-finite value")
    if not grad:
        return Evaluation(energy, None, None)
    dphi = dphi + w[..., None] * f
    dR = dR + prm.lam * dR_rot + w[..., None, None] * M
    return Evaluation(energy, dphi, dR)


def cosserat_energy(state, prm):
    """Discrete Cosserat energy through the material map ``P``."""
    return evaluate(state, prm, grad=False).energy


def simplified_energy(state, prm):
    """Energy with the unit-moduli density ``|grad phi|^2 - 2<R, grad phi> + 3``.

    Agrees with :func:`cosserat_energy` when all moduli equal one.
    """
    return evaluate(state, prm, grad=False, simplified=True).energy


def _interior_weights(grid):
    w = grid.weights().copy()
    w[grid.boundary_mask()] = np.inf
    return w


def phi_gradient_from(ev, grid):
    g = ev.dphi / _interior_weights(grid)[..., None]
    return g


def rotation_gradient_from(ev, state):
    c = project_tangent(state.R, ev.dR) / _interior_weights(state.grid)[..., None]
    return c


def grad_phi(state, prm):
    """L2 gradient of the energy with respect to ``phi`` (zero on the boundary)."""
    return phi_gradient_from(evaluate(state, prm), state.grid)


def _check_degenerate(state, prm):
    if prm.eps > 0 or prm.p <= 2.0:
        return
    h = state.grid.h
    for s in CORNERS:
        G = corner_gradient(state.R, s, h)
        if np.any(np.sum(G * G, axis=(-3, -2, -1)) == 0.0):
            raise DegeneratePointError(
                "grad R vanishes at a quadrature point and eps = 0 with p > 2")


def grad_R(state, prm):
    """Frame coefficients ``<E'(R), V_i(R)> / w`` of the tangential energy gradient."""
    _check_degenerate(state, prm)
    return rotation_gradient_from(evaluate(state, prm), state)


def l2_norm(field, grid):
    """Discrete L2 norm over interior nodes with trapezoidal weights."""
    w = grid.weights()[grid.interior_mask()]
    vals = field[grid.interior_mask()].reshape(w.shape[0], -1)
    return float(np.sqrt(np.sum(w * np.sum(vals * vals, axis=1))))


def el_residual(state, prm):
    """Weak-form residual norms ``(r_phi, r_R)`` of the Euler-Lagrange system."""
    _check_degenerate(state, prm)
    ev = evaluate(state, prm)
    g = state.grid
    return (l2_norm(phi_gradient_from(ev, g), g),
            l2_norm(rotation_gradient_from(ev, state), g))


def _require_compact(field, grid, name):
    b = field[grid.boundary_mask()]
    if b.size and float(np.max(np.abs(b))) > 0.0:
        raise PreconditionError(f"{name} must vanish on the boundary")


def second_variation(state, prm, eta, v):
    """Quadratic form of the second variation at ``(phi, R)``.

    Evaluates, with the corner rule and eps-regularized powers of ``|grad R|``,

        2|grad eta|^2 - 4<v, grad eta> + p|grad R|^(p-2) (|grad v|^2 - |grad R|^2 |v|^2)
            + p(p-2)|grad R|^(p-4) <grad R, grad v>^2

    where ``v = sum_i v_i a_i R`` is realized from its frame coefficients.
    The form is the one stated for unit moduli; it is evaluated as written
    for any moduli.
    """
    eta = np.asarray(eta, dtype=float)
    v = np.asarray(v, dtype=float)
    g = state.grid
    _require_compact(eta, g, "eta")
    _require_compact(v, g, "v")
    h, p, eps2 = g.h, prm.p, prm.eps**2
    Vf = realize_tangent(state.R, v)
    w = corner_weight(h)
    total = 0.0
    for s in CORNERS:
        Ge = corner_gradient(eta, s, h)
        GV = corner_gradient(Vf, s, h)
        GR = corner_gradient(state.R, s, h)
        Vc = corner_values(Vf, s)
        q = np.sum(GR * GR, axis=(-3, -2, -1))
        base = q + eps2
        a = np.where(base > 0, base, 1.0) ** (0.5 * p - 1.0)
        a = np.where(base > 0, a, 0.0 if p > 2 else 1.0)
        a4 = np.where(base > 0, np.where(base > 0, base, 1.0) ** (0.5 * p - 2.0), 0.0)
        cross = np.sum(GR * GV, axis=(-3, -2, -1))
        dens = (2.0 * np.sum(Ge * Ge, axis=(-2, -1))
                - 4.0 * np.sum(Vc * Ge, axis=(-2, -1))
                + prm.lam * p * a * (np.sum(GV * GV, axis=(-3, -2, -1))
                                     - q * np.sum(Vc * Vc, axis=(-2, -1)))
                + prm.lam * p * (p - 2.0) * a4 * cross * cross)
        total += w * float(np.sum(dens))
    return total


def _pterm_delta(q_old, q_new_minus_old, eps2, p):
    """``(q' + eps^2)^(p/2) - (q + eps^2)^(p/2)`` without cancellation."""
    x = q_old + eps2
    safe = np.where(x > 0, x, 1.0)
    ratio = q_new_minus_old / safe
    with np.errstate(divide="ignore", invalid="ignore"):
        d = safe ** (0.5 * p) * np.expm1(0.5 * p * np.log1p(ratio))
    # where the old base vanishes, fall back to the direct power
    direct = np.maximum(x + q_new_minus_old, 0.0) ** (0.5 * p) - np.maximum(x, 0.0) ** (0.5 * p)
    return np.where(x > 0, d, direct)


def energy_difference(state, prm, phi_new=None, R_new=None):
    """``E(phi_new, R_new) - E(phi, R)`` evaluated from the increments.

    Each density difference is formed algebraically from ``phi_new - phi``
    and ``R_new - R`` before summation, so the result stays accurate when the
    change is far below the rounding level of the total energy. This is what
    the line search compares against its sufficient-decrease threshold.
    """
    g = state.grid
    h = g.h
    w_c = corner_weight(h)
    phi0, R0 = state.phi, state.R
    dphi = np.zeros_like(phi0) if phi_new is None else np.asarray(phi_new, dtype=float) - phi0
    dR = np.zeros_like(R0) if R_new is None else np.asarray(R_new, dtype=float) - R0
    R1 = R0 + dR
    eps2 = prm.eps**2
    total = 0.0
    for s in CORNERS:
        G0 = corner_gradient(phi0, s, h)
        dG = corner_gradient(dphi, s, h)
        Rc0 = corner_values(R0, s)
        dRc = corner_values(dR, s)
        Rc1 = Rc0 + dRc
        # A1 - A0 = R1^T (G0 + dG) - R0^T G0 = dR^T G0 + R1^T dG
        dA = np.swapaxes(dRc, -1, -2) @ G0 + np.swapaxes(Rc1, -1, -2) @ dG
        A0 = np.swapaxes(Rc0, -1, -2) @ G0 - np.eye(3)
        PdA = pmap(dA, prm.mu)
        total += w_c * float(np.sum(PdA * pmap(2.0 * A0 + dA, prm.mu)))
        if R_new is not None:
            GR0 = corner_gradient(R0, s, h)
            dGR = corner_gradient(dR, s, h)
            q0 = np.sum(GR0 * GR0, axis=(-3, -2, -1))
            dq = np.sum(dGR * (2.0 * GR0 + dGR), axis=(-3, -2, -1))
            total += prm.lam * w_c * float(np.sum(_pterm_delta(q0, dq, eps2, prm.p)))
    w = g.weights()
    total += float(np.sum(w * np.sum(dphi * prm.body_force(g.dims), axis=-1)))
    total += float(np.sum(w * np.sum(dR * prm.moment(g.dims), axis=(-2, -1))))
    return total
