"""Alternating minimization of the discrete Cosserat energy.

Each outer iteration solves the convex quadratic problem for ``phi`` exactly
and then takes one Armijo-backtracked descent step in ``R`` along a
retraction curve. The regularization ``eps`` is lowered through a schedule;
only the last stage has to meet the final tolerance.
"""
import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .corners import CORNERS, corner_gradient, corner_gradient_T, corner_values, corner_weight
from .energy import State, energy_difference, evaluate, l2_norm, phi_gradient_from, \
    rotation_gradient_from
from .errors import InvariantViolation, PartialResult, StagnationError
from .fields import Grid, conjugate_gradient, dirichlet_solve_fast, gradient, poisson_solve
from .geometry import covering_map, exp_retract, pmap, project_so3, random_unit_quaternions, \
    rotation_about

log = logging.getLogger(__name__)

DEFAULT_SCHEDULE = (1e-1, 2.5e-2, 6.25e-3, 1e-3)


@dataclass(frozen=True)
class SolveConfig:
    """Solver controls.

    ``stage_tol`` is the residual target of every stage except the last,
    which uses ``tol``. With ``precondition`` the descent direction is the
    Sobolev gradient ``(-laplacian + shift)^(-1) grad_R`` (scaled); otherwise
    it is the plain L2 gradient.
    """

    tol: float = 1e-7
    max_outer: int = 2000
    max_inner: int = 40
    step0: float = 1.0
    armijo: tuple = (1e-4, 0.5)
    eps_schedule: tuple = DEFAULT_SCHEDULE
    seed: int = 0
    stage_tol: float = 1e-4
    phi_rtol: float = 1e-11
    precondition: bool = True

    def __post_init__(self):
        object.__setattr__(self, "armijo", tuple(float(a) for a in self.armijo))
        object.__setattr__(self, "eps_schedule", tuple(float(e) for e in self.eps_schedule))
        c, beta = self.armijo
        if not self.tol > 0:
            raise InvariantViolation(f"tol must be positive, got {self.tol}")
        if not 0 < c < 1:
            raise InvariantViolation(f"Armijo constant must lie in (0, 1), got {c}")
        if not 0 < beta < 1:
            raise InvariantViolation(f"backtrack factor must lie in (0, 1), got {beta}")
        if self.max_outer < 0 or self.max_inner < 1:
            raise InvariantViolation("max_outer must be >= 0 and max_inner >= 1")
        if not self.step0 > 0:
            raise InvariantViolation(f"step0 must be positive, got {self.step0}")
        if any(not (np.isfinite(e) and e >= 0) for e in self.eps_schedule):
            raise InvariantViolation("eps_schedule entries must be finite and >= 0")

    def to_dict(self):
        d = asdict(self)
        d["armijo"] = list(self.armijo)
        d["eps_schedule"] = list(self.eps_schedule)
        return d


@dataclass
class SolveReport:
    energies: list = field(default_factory=list)
    stages: list = field(default_factory=list)  # stage index of each trace entry
    eps_stages: list = field(default_factory=list)
    steps: list = field(default_factory=list)
    residual: tuple = (np.inf, np.inf)
    iterations: int = 0
    converged: bool = False
    stagnated_stages: list = field(default_factory=list)
    wall_time: float = 0.0

    @property
    def final_energy(self):
        return self.energies[-1] if self.energies else float("nan")

    def to_dict(self, include_time=False):
        d = {
            "energy_final": self.final_energy,
            "residual_phi": self.residual[0],
            "residual_R": self.residual[1],
            "iterations": self.iterations,
            "converged": self.converged,
            "eps_stages": list(self.eps_stages),
            "stagnated_stages": list(self.stagnated_stages),
            "trace_length": len(self.energies),
        }
        if include_time:
            d["wall_time"] = self.wall_time
        return d


# ---------------------------------------------------------------- phi block

def _rotation_divergence(R, h):
    """``-(sum_c D_c^T (w R_c)) / h^3``: the discrete ``div R`` of the corner rule."""
    out = np.zeros(R.shape[:3] + (3,))
    w = corner_weight(h)
    for s in CORNERS:
        corner_gradient_T(w * corner_values(R, s), s, h, out)
    return -out / h**3


def _phi_hessian(R, h, mu):
    w = corner_weight(h)
    Rc = [corner_values(R, s) for s in CORNERS]
    Rt = [np.swapaxes(r, -1, -2) for r in Rc]

    def apply(u):
        out = np.zeros_like(u)
        for k, s in enumerate(CORNERS):
            B = Rt[k] @ corner_gradient(u, s, h)
            corner_gradient_T(2.0 * w * (Rc[k] @ pmap(pmap(B, mu), mu)), s, h, out)
        out[0, :, :] = out[-1, :, :] = 0.0
        out[:, 0, :] = out[:, -1, :] = 0.0
        out[:, :, 0] = out[:, :, -1] = 0.0
        return out

    return apply


def solve_phi(s, prm, rtol=1e-11):
    """Minimize the energy over ``phi`` with ``R`` and the boundary values fixed.

    For unit moduli this is the Poisson problem ``laplacian(phi) = div R + f/2``
    solved with the 7-point operator. Otherwise the quadratic problem is
    solved by conjugate gradients on its Hessian, preconditioned with a
    fast Dirichlet Laplacian inverse.

    Returns
    -------
    ndarray
        The updated ``phi``; the boundary values are copied from ``s.phi``.
    """
    g = s.grid
    h = g.h
    f = prm.body_force(g.dims)
    if prm.mu.is_unit:
        rhs = _rotation_divergence(s.R, h) + 0.5 * f
        return poisson_solve(rhs, s.phi, h, rtol=rtol, atol=1e-14, x0=s.phi)
    ev = evaluate(s, prm)
    b = -ev.dphi
    b[g.boundary_mask()] = 0.0
    scale = 2.0 * h**3 * (prm.mu.mu1 + prm.mu.muc + prm.mu.mu2) / 3.0
    bmax = float(np.max(np.abs(b))) if b.size else 0.0
    threshold = rtol * max(bmax, h**3) + 1e-14 * h**3
    if bmax <= threshold:
        return s.phi.copy()
    delta, _, _ = conjugate_gradient(
        _phi_hessian(s.R, h, prm.mu), b,
        precond=lambda r: dirichlet_solve_fast(r, h) / scale,
        converged=lambda x, r, k: float(np.max(np.abs(r))) <= threshold,
    )
    return s.phi + delta


# ---------------------------------------------------------------- R block

def _descent_direction(state, prm, coeffs, precondition):
    if not precondition:
        return coeffs
    h = state.grid.h
    # effective diffusion of the p-term, used only to scale the preconditioner
    q = np.sum(gradient(state.R, h) ** 2, axis=(-3, -2, -1))
    inner = state.grid.interior_mask()
    k = prm.lam * 0.5 * prm.p * float(np.mean((q[inner] + prm.eps**2) ** (0.5 * prm.p - 1.0)))
    k = max(k, 1e-8)
    return dirichlet_solve_fast(coeffs, h, shift=1.0 / k) / (2.0 * k)


def _retract(state, d, t):
    R_new = state.R.copy()
    inner = (slice(1, -1),) * 3
    R_new[inner] = project_so3(exp_retract(state.R[inner], -d[inner], t))
    return R_new


def _rounding_floor(ev, state):
    """Upper bound on energy changes caused by rounding ``R`` to doubles."""
    return 16.0 * np.finfo(float).eps * float(np.sum(np.abs(ev.dR)) + abs(ev.energy) * 1e-3)


def _armijo_step(state, prm, cfg, ev=None):
    """One backtracked step; returns ``(state, step, energy change)``.

    A trial step passes if ``dE <= -c t slope``. When ``|dE|`` is below the
    rounding floor the difference carries no information; the step then
    passes if the exact slope at the trial point satisfies the trapezoidal
    form of the same condition, ``phi'(t) <= (1 - 2c) slope``.
    """
    if ev is None:
        ev = evaluate(state, prm)
    g = state.grid
    coeffs = rotation_gradient_from(ev, state)
    if not np.any(coeffs):
        return state, 0.0, 0.0
    d = _descent_direction(state, prm, coeffs, cfg.precondition)
    w = g.weights()[..., None]
    slope = float(np.sum(w * coeffs * d))
    floor = _rounding_floor(ev, state)
    c, beta = cfg.armijo
    t = cfg.step0
    for _ in range(cfg.max_inner):
        R_new = _retract(state, d, t)
        dE = energy_difference(state, prm, R_new=R_new)
        if dE <= -c * t * slope:
            return State(g, state.phi, R_new), t, dE
        if abs(dE) <= floor:
            trial = State(g, state.phi, R_new)
            slope_t = -float(np.sum(w * rotation_gradient_from(evaluate(trial, prm), trial) * d))
            if slope_t <= (1.0 - 2.0 * c) * slope:
                return trial, t, dE
        t *= beta
    raise StagnationError("line search exhausted its backtracking budget",
                          step=t / beta, energy=ev.energy, slope=slope)


def descent_step_R(s, prm, cfg):
    """Armijo-backtracked step ``R' = exp_retract(R, -d, t)``.

    ``d`` is the frame-coefficient gradient (or its Sobolev-preconditioned
    version, see :class:`SolveConfig`). Accepted steps satisfy
    ``E(R') <= E(R) - c t <grad_R, d>``, or, when the energy change is below
    the rounding floor, the equivalent slope test. Boundary nodes are left
    unchanged.

    Returns
    -------
    (State, float)
        The new state and the accepted step; ``(s, 0.0)`` if the gradient
        vanishes.

    Raises
    ------
    StagnationError
        If ``max_inner`` halvings do not yield sufficient decrease.
    """
    new, t, _ = _armijo_step(s, prm, cfg)
    return new, t


# ---------------------------------------------------------------- driver

def _residuals(ev, state):
    g = state.grid
    return (l2_norm(phi_gradient_from(ev, g), g), l2_norm(rotation_gradient_from(ev, state), g))


def minimize(s0, prm, cfg=None, callback=None):
    """Alternating minimization with eps continuation.

    Parameters
    ----------
    s0 : State
        Initial guess; its boundary values are the Dirichlet data.
    prm : ModelParams
        ``prm.eps`` is ignored when ``cfg.eps_schedule`` is non-empty.
    cfg : SolveConfig, optional
    callback : callable, optional
        Called as ``callback(iteration, state, energy)`` after each outer step.

    Returns
    -------
    (State, SolveReport)

    Raises
    ------
    PartialResult
        When ``max_outer`` is exhausted or the last stage stagnates before
        reaching ``cfg.tol``; carries the final state and report.
    """
    cfg = cfg or SolveConfig()
    t0 = time.perf_counter()
    schedule = cfg.eps_schedule or (prm.eps,)
    rep = SolveReport(eps_stages=list(schedule))
    state = s0.copy()
    outer = 0
    for k, eps in enumerate(schedule):
        pk = prm.with_eps(eps)
        last = k == len(schedule) - 1
        tol_k = cfg.tol if last else max(cfg.tol, cfg.stage_tol)
        phi = solve_phi(state, pk, rtol=cfg.phi_rtol)
        state = State(state.grid, phi, state.R)
        ev = evaluate(state, pk)
        energy = ev.energy
        rep.energies.append(energy)
        rep.stages.append(k)
        while True:
            rep.residual = _residuals(ev, state)
            if max(rep.residual) <= tol_k:
                break
            if outer >= cfg.max_outer:
                rep.iterations = outer
                rep.wall_time = time.perf_counter() - t0
                raise PartialResult(f"max_outer={cfg.max_outer} reached at eps={eps:g} with "
                                    f"residuals {rep.residual}", state=state, report=rep)
            try:
                state, t, dE = _armijo_step(state, pk, cfg, ev)
            except StagnationError as exc:
                log.info("stage %d (eps=%g) stagnated: %s", k, eps, exc)
                rep.stagnated_stages.append(k)
                break
            energy += dE
            phi = solve_phi(state, pk, rtol=cfg.phi_rtol)
            energy += energy_difference(state, pk, phi_new=phi)
            state = State(state.grid, phi, state.R)
            ev = evaluate(state, pk)
            outer += 1
            rep.energies.append(energy)
            rep.stages.append(k)
            rep.steps.append(t)
            if callback is not None:
                callback(outer, state, energy)
            log.debug("iter %d eps=%g E=%.12g step=%g r=%s", outer, eps, energy, t, rep.residual)
    rep.iterations = outer
    rep.wall_time = time.perf_counter() - t0
    rep.converged = max(rep.residual) <= cfg.tol
    if not rep.converged:
        raise PartialResult(f"final stage stopped at residuals {rep.residual} > tol={cfg.tol}",
                            state=state, report=rep)
    return state, rep


# ---------------------------------------------------------------- configurations

def equatorial_map(n):
    """Rotation ``pi(0, n)`` for unit vectors ``n``: the half-turn ``2 n n^T - I``."""
    n = np.asarray(n, dtype=float)
    q = np.concatenate([np.zeros(n.shape[:-1] + (1,)), n], axis=-1)
    return covering_map(q, tol=1e-9)


def homogeneous_extend(boundary_map, grid, phi_map=None, center=None,
                       center_rotation=None, center_phi=None):
    """Degree-zero extension ``R(x) = boundary_map((x - x0)/|x - x0|)``.

    ``phi`` is ``phi_map`` composed the same way, or the identity map
    ``phi = x`` when ``phi_map`` is None. A node sitting exactly at the
    center gets ``center_rotation`` (identity by default) and ``center_phi``.
    """
    x0 = grid.center if center is None else np.asarray(center, dtype=float)
    x = grid.coords()
    rel = x - x0
    r = np.linalg.norm(rel, axis=-1)
    at_center = r == 0
    unit = rel / np.where(at_center, 1.0, r)[..., None]
    unit[at_center] = (0.0, 0.0, 1.0)
    R = np.asarray(boundary_map(unit), dtype=float).copy()
    R[at_center] = np.eye(3) if center_rotation is None else center_rotation
    phi = x.copy() if phi_map is None else np.asarray(phi_map(unit), dtype=float).copy()
    if phi_map is not None and center_phi is not None:
        phi[at_center] = center_phi
    return State(grid, phi, R)


def trivial_state(grid):
    """``phi = x``, ``R = I``: the global minimizer for zero loads."""
    x = grid.coords()
    return State(grid, x, np.broadcast_to(np.eye(3), grid.dims + (3, 3)).copy())


def twist_state(grid, rate=0.5 * np.pi, axis=2):
    """``phi = x`` and ``R`` rotating about ``e_axis`` at ``rate`` radians per unit length.

    The angle vanishes on the mid-plane normal to the axis.
    """
    x = grid.coords()
    e = np.zeros(3)
    e[axis] = 1.0
    angle = rate * (x[..., axis] - grid.center[axis])
    return State(grid, x, rotation_about(e, angle))


def hedgehog_state(grid):
    """``phi = x`` and the degree-zero half-turn field ``R = 2 n n^T - I``."""
    return homogeneous_extend(equatorial_map, grid)


PRESETS = {"trivial": trivial_state, "twist": twist_state, "hedgehog": hedgehog_state}


def initial_state(boundary, mode="perturb", amplitude=0.1, seed=0):
    """Initial guess with the boundary values of ``boundary``.

    ``perturb`` rotates every interior node of ``boundary.R`` by a random
    rotation vector of length at most ``amplitude`` (and shifts ``phi`` by
    at most ``amplitude * h``). ``random`` draws interior rotations from
    uniformly random unit quaternions and takes ``phi`` as the harmonic
    extension of its boundary values. ``extend`` returns ``boundary`` as is.
    """
    rng = np.random.default_rng(seed)
    g = boundary.grid
    inner = (slice(1, -1),) * 3
    phi = boundary.phi.copy()
    R = boundary.R.copy()
    n_in = tuple(n - 2 for n in g.dims)
    if mode == "extend":
        pass
    elif mode == "perturb":
        v = rng.uniform(-1.0, 1.0, n_in + (3,))
        c = np.sqrt(2.0) * amplitude * v / max(1.0, float(np.sqrt(3.0)))
        R[inner] = project_so3(exp_retract(R[inner], c))
        phi[inner] += amplitude * g.h * rng.uniform(-1.0, 1.0, n_in + (3,))
    elif mode == "random":
        R[inner] = covering_map(random_unit_quaternions(rng, n_in), tol=1e-9)
        phi = poisson_solve(np.zeros_like(phi), phi, g.h)
    else:
        raise InvariantViolation(f"unknown initialization mode {mode!r}")
    return State(g, phi, R)
