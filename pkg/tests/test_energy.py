import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cosserat_lab import kernels
from cosserat_lab.energy import (
    ModelParams, State, cosserat_energy, el_residual, energy_difference, evaluate, grad_phi,
    grad_R, second_variation, simplified_energy, strain_energy,
)
from cosserat_lab.errors import DataError, DegeneratePointError, InvariantViolation, \
    PreconditionError
from cosserat_lab.fields import Grid
from cosserat_lab.geometry import ModuliSet, exp_retract, pmap, random_rotations, \
    project_tangent, realize_tangent, rotation_about, tangent_frame
from cosserat_lab.solver import trivial_state, twist_state

from conftest import random_state

GENERIC = ModuliSet(1.3, 0.7, 2.1)


def _compact(g, rng, trailing):
    v = rng.standard_normal(g.dims + trailing)
    v[g.boundary_mask()] = 0.0
    return v


def test_trivial_state_has_zero_energy():
    s = trivial_state(Grid.cube(6))
    for p in (2.0, 2.5):
        # phi = x carries rounding in its differences
        assert cosserat_energy(s, ModelParams(p=p, mu=GENERIC)) < 1e-28
        assert max(el_residual(s, ModelParams(p=p))) < 1e-13


@pytest.mark.parametrize("mu", [ModuliSet(), GENERIC])
def test_affine_phi_constant_R_closed_form(mu):
    g = Grid((5, 6, 7), 0.2)
    F = np.array([[1.1, 0.2, 0.0], [-0.1, 0.9, 0.3], [0.05, 0.0, 1.2]])
    s = State(g, g.coords() @ F.T, np.broadcast_to(np.eye(3), g.dims + (3, 3)))
    P = pmap(F - np.eye(3), mu)
    assert cosserat_energy(s, ModelParams(p=2.4, mu=mu)) == pytest.approx(
        np.sum(P * P) * g.volume, rel=1e-12)


@pytest.mark.parametrize("backend", sorted(kernels.backends()))
@pytest.mark.parametrize("p,eps", [(2.0, 1e-3), (2.13, 1e-3), (2.8, 0.1)])
def test_twist_rotation_term_closed_form(backend, p, eps):
    # each cell edge along the twist axis rotates by alpha h, so |R' - R|_F^2 = 8 sin^2(alpha h/2)
    g = Grid.cube(9)
    alpha = 1.7
    s = twist_state(g, rate=alpha, axis=2)
    q = 8.0 * np.sin(0.5 * alpha * g.h) ** 2 / g.h**2
    expected = g.volume * ((q + eps**2) ** (p / 2) - eps**p)
    e, _ = kernels.backends()[backend].pdirichlet(s.R, g.h, p, eps)
    assert e == pytest.approx(expected, rel=1e-12)


@given(st.integers(0, 10_000))
def test_simplified_energy_matches_unit_moduli(seed):
    s = random_state(5, seed)
    prm = ModelParams(p=2.3)
    assert simplified_energy(s, prm) == pytest.approx(cosserat_energy(s, prm), rel=1e-12)
    a = evaluate(s, prm)
    b = evaluate(s, prm, simplified=True)
    assert np.allclose(a.dphi, b.dphi, atol=1e-11)
    # the densities agree only on SO(3), so only tangential R-derivatives match
    assert np.allclose(project_tangent(s.R, a.dR), project_tangent(s.R, b.dR), atol=1e-11)


def test_loads_enter_linearly():
    s = random_state(5, 3)
    g = s.grid
    f = np.array([0.3, -1.0, 2.0])
    M = np.arange(9.0).reshape(3, 3) / 10
    base = cosserat_energy(s, ModelParams())
    w = g.weights()
    exp_f = np.sum(w * ((s.phi - g.coords()) @ f))
    exp_M = np.sum(w * np.sum(s.R * M, axis=(-2, -1)))
    assert cosserat_energy(s, ModelParams(f=f, M=M)) == pytest.approx(base + exp_f + exp_M,
                                                                      rel=1e-12)


def _fd_phi(s, prm, idx, k, t=1e-5):
    out = []
    for sign in (1, -1):
        phi = s.phi.copy()
        phi[idx + (k,)] += sign * t
        out.append(cosserat_energy(State(s.grid, phi, s.R), prm))
    return (out[0] - out[1]) / (2 * t)


def _fd_R(s, prm, idx, i, t=1e-5):
    c = np.zeros(3)
    c[i] = 1.0
    out = []
    for sign in (1, -1):
        R = s.R.copy()
        R[idx] = exp_retract(R[idx], c, sign * t)
        out.append(cosserat_energy(State(s.grid, s.phi, R), prm))
    return (out[0] - out[1]) / (2 * t)


@pytest.mark.parametrize("mu", [ModuliSet(), GENERIC])
@pytest.mark.parametrize("p", [2.0, 2.6])
def test_gradients_match_finite_differences_sampled(mu, p):
    s = random_state(6, 7)
    prm = ModelParams(p=p, mu=mu, f=[0.1, 0.2, -0.3], M=0.1 * np.eye(3))
    gp = grad_phi(s, prm)
    gr = grad_R(s, prm)
    w = s.grid.weights()
    for idx in [(1, 1, 1), (2, 3, 4), (4, 4, 2)]:
        for k in range(3):
            # FD rounding is about eps_mach E / t
            assert _fd_phi(s, prm, idx, k) == pytest.approx(w[idx] * gp[idx + (k,)],
                                                            rel=1e-6, abs=1e-8)
            assert _fd_R(s, prm, idx, k) == pytest.approx(w[idx] * gr[idx + (k,)],
                                                          rel=1e-6, abs=1e-8)


def test_gradients_vanish_on_boundary():
    s = random_state(5, 8)
    prm = ModelParams(p=2.2)
    b = s.grid.boundary_mask()
    assert np.all(grad_phi(s, prm)[b] == 0) and np.all(grad_R(s, prm)[b] == 0)


def test_grad_R_is_tangential():
    s = random_state(5, 9)
    gr = grad_R(s, ModelParams(p=2.5))
    G = realize_tangent(s.R, gr)
    Sym = np.random.default_rng(0).standard_normal(s.grid.dims + (3, 3))
    Sym = Sym + np.swapaxes(Sym, -1, -2)
    assert np.max(np.abs(np.sum(G * (Sym @ s.R), axis=(-2, -1)))) < 1e-10


def test_frame_weak_form_pairing():
    # d/dt E(R + t psi V_i) equals sum w g_i psi: the weak form tested with psi V_i
    s = random_state(6, 10)
    prm = ModelParams(p=2.4, mu=GENERIC)
    g = s.grid
    psi = _compact(g, np.random.default_rng(1), ())
    V = tangent_frame(s.R)
    gr = grad_R(s, prm)
    w = g.weights()

    def raw_energy(R):
        e, _, _ = strain_energy(s.phi, R, g.h, prm.mu)
        er, _ = kernels.pdirichlet(R, g.h, prm.p, prm.eps)
        return e + prm.lam * er

    t = 1e-6
    for i in range(3):
        dR = psi[..., None, None] * V[..., i, :, :]
        fd = (raw_energy(s.R + t * dR) - raw_energy(s.R - t * dR)) / (2 * t)
        assert fd == pytest.approx(np.sum(w * gr[..., i] * psi), rel=1e-6)


def test_small_gradient_step_decreases_energy():
    s = random_state(6, 11)
    prm = ModelParams(p=2.2)
    E0 = cosserat_energy(s, prm)
    gp = grad_phi(s, prm)
    gr = grad_R(s, prm)
    t = 1e-4
    assert cosserat_energy(State(s.grid, s.phi - t * gp, s.R), prm) < E0
    assert cosserat_energy(State(s.grid, s.phi, exp_retract(s.R, -gr, t)), prm) < E0


@pytest.mark.parametrize("p", [2.0, 2.13, 2.8])
def test_energy_difference_matches_direct_difference(p):
    s = random_state(6, 12)
    prm = ModelParams(p=p, mu=GENERIC, f=[1.0, 0.0, 0.5], M=0.2 * np.eye(3))
    rng = np.random.default_rng(2)
    phi1 = s.phi + 0.05 * _compact(s.grid, rng, (3,))
    R1 = exp_retract(s.R, 0.1 * _compact(s.grid, rng, (3,)))
    direct = cosserat_energy(State(s.grid, phi1, R1), prm) - cosserat_energy(s, prm)
    assert energy_difference(s, prm, phi1, R1) == pytest.approx(direct, rel=1e-10)


def test_energy_difference_resolves_tiny_steps():
    # for a step t along -grad the change is -t |g|^2_W to first order
    s = random_state(6, 13)
    prm = ModelParams(p=2.5)
    gr = grad_R(s, prm)
    w = s.grid.weights()
    slope = np.sum(w[..., None] * gr * gr)
    t = 1e-12
    dE = energy_difference(s, prm, R_new=exp_retract(s.R, -gr, t))
    assert dE / (-t * slope) == pytest.approx(1.0, rel=1e-5)


def test_second_variation_trivial_inputs():
    s = random_state(5, 14)
    z = np.zeros(s.grid.dims + (3,))
    assert second_variation(s, ModelParams(p=2.5), z, z) == 0.0


def test_second_variation_eta_only_is_twice_dirichlet():
    s = random_state(6, 15)
    prm = ModelParams(p=2.3)
    eta = _compact(s.grid, np.random.default_rng(3), (3,))
    z = np.zeros(s.grid.dims + (3,))
    # the strain term is exactly quadratic along phi + t eta
    E = [cosserat_energy(State(s.grid, s.phi + t * eta, s.R), prm) for t in (-1.0, 0.0, 1.0)]
    assert second_variation(s, prm, eta, z) == pytest.approx(E[0] - 2 * E[1] + E[2], rel=1e-9)


@pytest.mark.parametrize("p,eps,t", [(2.0, 1e-3, 1e-3), (2.5, 0.5, 1e-4)])
def test_second_variation_matches_energy_along_curves(p, eps, t):
    # constant phi and constant R: the quoted form is the exact second derivative
    g = Grid.cube(7)
    rng = np.random.default_rng(4)
    R0 = random_rotations(rng)
    s = State(g, np.full(g.dims + (3,), 0.3), np.broadcast_to(R0, g.dims + (3, 3)).copy())
    prm = ModelParams(p=p, eps=eps)
    eta = _compact(g, rng, (3,))
    v = _compact(g, rng, (3,))

    def E(t_):
        return cosserat_energy(State(g, s.phi + t_ * eta, exp_retract(s.R, v, t_)), prm)

    fd = (E(t) - 2 * E(0.0) + E(-t)) / t**2
    assert second_variation(s, prm, eta, v) == pytest.approx(fd, rel=1e-3)


def test_second_variation_constant_R_p2_nonnegative():
    g = Grid.cube(6)
    rng = np.random.default_rng(5)
    s = State(g, g.coords(), np.broadcast_to(random_rotations(rng), g.dims + (3, 3)).copy())
    for _ in range(5):
        eta = _compact(g, rng, (3,))
        v = _compact(g, rng, (3,))
        assert second_variation(s, ModelParams(), eta, v) >= 0.0


def test_second_variation_constant_R_v_only():
    g = Grid.cube(6)
    R0 = rotation_about([1, 2, 3], 0.7)
    s = State(g, g.coords(), np.broadcast_to(R0, g.dims + (3, 3)).copy())
    v = _compact(g, np.random.default_rng(6), (3,))
    # 2 int |grad (v a_i R0)|^2 = 2 int |grad v|^2 by orthonormality of the frame
    expected = 2.0 * cosserat_energy(
        State(g, g.coords() + v, np.broadcast_to(np.eye(3), g.dims + (3, 3)).copy()),
        ModelParams())
    z = np.zeros(g.dims + (3,))
    assert second_variation(s, ModelParams(), z, v) == pytest.approx(expected, rel=1e-12)


def test_second_variation_requires_compact_support():
    s = random_state(5, 16)
    eta = np.ones(s.grid.dims + (3,))
    with pytest.raises(PreconditionError):
        second_variation(s, ModelParams(), eta, np.zeros_like(eta))


def test_degenerate_point_detection():
    s = trivial_state(Grid.cube(5))
    with pytest.raises(DegeneratePointError):
        grad_R(s, ModelParams(p=2.5, eps=0.0))
    assert np.all(grad_R(s, ModelParams(p=2.0, eps=0.0)) == 0)


def test_parameter_and_state_validation():
    with pytest.raises(InvariantViolation):
        ModelParams(p=3.0)
    with pytest.raises(InvariantViolation):
        ModelParams(eps=-1.0)
    with pytest.raises(InvariantViolation):
        ModelParams(f=[np.nan, 0, 0])
    g = Grid.cube(4)
    with pytest.raises(InvariantViolation):
        State(g, g.coords(), np.broadcast_to(2 * np.eye(3), g.dims + (3, 3)))
    with pytest.raises(InvariantViolation):
        State(g, g.coords()[..., :2], np.broadcast_to(np.eye(3), g.dims + (3, 3)))
    phi = g.coords()
    phi[1, 1, 1, 0] = np.inf
    with pytest.raises(DataError):
        State(g, phi, np.broadcast_to(np.eye(3), g.dims + (3, 3)))
