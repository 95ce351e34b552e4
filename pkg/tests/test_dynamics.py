import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scatmap.dynamics import (
    CollisionError,
    EquilibriumError,
    PerturbationSpec,
    breakpoints,
    characteristic_polynomial_roots,
    classify_equilibrium,
    eval_hamiltonian,
    eval_perturbation,
    eval_vector_field,
    find_collinear_equilibria,
    find_triangular_equilibria,
    flow,
    hamiltonian_gradient,
    integrate,
    integrate_variational,
    perturbation_jacobian,
    section_event,
    smooth_step,
    state_at_rest,
    stm_of,
    vector_field_jacobian,
)

Z = np.array([0.12, -0.83, -0.78, 0.05])


def test_gradient_matches_finite_differences(mu):
    g = hamiltonian_gradient(Z, mu)
    h = 1e-6
    fd = [(eval_hamiltonian(Z + h * e, mu) - eval_hamiltonian(Z - h * e, mu)) / (2 * h) for e in np.eye(4)]
    np.testing.assert_allclose(g, fd, atol=1e-8)


def test_vector_field_is_hamiltonian(mu):
    g = hamiltonian_gradient(Z, mu)
    X = eval_vector_field(Z, mu)
    # (p, q)' = (-dH/dq, dH/dp)
    np.testing.assert_allclose(X, [-g[2], -g[3], g[0], g[1]], rtol=1e-14)
    assert abs(g @ X) < 1e-14


def test_jacobian_matches_finite_differences(mu):
    A = vector_field_jacobian(Z, mu)
    h = 1e-6
    fd = np.column_stack([(eval_vector_field(Z + h * e, mu) - eval_vector_field(Z - h * e, mu)) / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(A, fd, atol=1e-7)


def test_collinear_points_are_saddle_centers(mu):
    eqs = find_collinear_equilibria(mu)
    assert eqs["L2"][2] < eqs["L1"][2] < 0 < eqs["L3"][2]
    for z in eqs.values():
        assert np.linalg.norm(hamiltonian_gradient(z, mu)) < 1e-12
        sp = classify_equilibrium(z, mu)
        roots = characteristic_polynomial_roots(z, mu)
        assert sp.lam == pytest.approx(max(r.real for r in roots), rel=1e-10)
        assert sp.omega == pytest.approx(max(r.imag for r in roots), rel=1e-10)


def test_equal_masses_still_saddle_center():
    eqs = find_collinear_equilibria(0.5)
    assert abs(eqs["L1"][2]) < 1e-12
    for z in eqs.values():
        assert classify_equilibrium(z, 0.5).lam > 0


def test_triangular_points_are_not_saddle_centers(mu):
    for z in find_triangular_equilibria(mu).values():
        assert np.linalg.norm(hamiltonian_gradient(z, mu)) < 1e-12
        with pytest.raises(EquilibriumError):
            classify_equilibrium(z, mu)


def test_l1_energy_value(mu):
    # Jacobi constant 3.18834 of the Earth-Moon L1 point
    assert eval_hamiltonian(find_collinear_equilibria(mu)["L1"], mu) == pytest.approx(-1.59417, abs=1e-5)


def test_energy_conserved_along_flow(mu):
    z1 = flow(Z, 3.0, mu)
    assert abs(eval_hamiltonian(z1, mu) - eval_hamiltonian(Z, mu)) < 1e-11


def test_time_reversal_symmetry(mu):
    # R(p1, p2, q1, q2) = (-p1, p2, q1, -q2) reverses time
    R = np.diag([-1.0, 1.0, 1.0, -1.0])
    z1 = flow(Z, 1.3, mu)
    back = flow(R @ z1, 1.3, mu)
    np.testing.assert_allclose(R @ back, Z, atol=1e-10)


def test_stm_matches_finite_differences_and_is_symplectic(mu):
    tr = integrate_variational(Z, (0.0, 1.0), mu, dense_output=False)
    Phi = stm_of(tr.y_final)
    h = 1e-6
    fd = np.column_stack([(flow(Z + h * e, 1.0, mu) - flow(Z - h * e, 1.0, mu)) / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(Phi, fd, atol=1e-6)
    J = np.block([[np.zeros((2, 2)), -np.eye(2)], [np.eye(2), np.zeros((2, 2))]])
    np.testing.assert_allclose(Phi.T @ J @ Phi, J, atol=1e-10)


def test_collision_guard(mu):
    z = state_at_rest(mu - 1.0 + 0.02, 0.0)  # at rest near the Moon: falls in
    with pytest.raises(CollisionError):
        integrate(z, (0.0, 5.0), mu)


def test_section_event_locates_crossing(mu):
    tr = integrate(Z, (0.0, 10.0), mu, events=[section_event(3, 0.0, 0)])
    assert len(tr.t_events[0]) == 1
    assert abs(tr.y_events[0][0][3]) < 1e-12


def test_smooth_step_and_envelope():
    assert smooth_step(-0.1) == 0.0 and smooth_step(1.1) == 1.0
    assert smooth_step(0.5) == pytest.approx(0.5)
    spec = PerturbationSpec(kind="constant-thrust-windowed", epsilon=1.0, magnitude=0.05, window=(1.0, 2.0), ramp=0.05)
    assert spec.envelope(0.94) == 0.0 and spec.envelope(1.5) == 1.0 and spec.envelope(2.06) == 0.0
    assert spec.support() == (0.95, 2.05)
    assert breakpoints(spec) == (0.95, 1.0, 2.0, 2.05)
    assert breakpoints(spec.with_epsilon(0.0)) == ()


@given(st.floats(-2.0, 3.0), st.floats(-2.0, 3.0))
def test_smooth_step_is_monotone_and_bounded(a, b):
    lo, hi = sorted((a, b))
    assert 0.0 <= smooth_step(lo) <= smooth_step(hi) <= 1.0
    assert smooth_step(1.0 - lo) == pytest.approx(1.0 - smooth_step(lo), abs=1e-15)


def test_spec_validation():
    with pytest.raises(ValueError):
        PerturbationSpec(kind="constant-thrust-windowed", epsilon=1.0, magnitude=0.05)
    with pytest.raises(ValueError):
        PerturbationSpec(kind="constant-thrust-windowed", direction=(1.0, 1.0), window=(0.0, 1.0))
    with pytest.raises(ValueError):
        PerturbationSpec(kind="hamiltonian-gradient")
    with pytest.raises(ValueError):
        PerturbationSpec(kind="nonsense")
    s = PerturbationSpec(kind="velocity-dissipation", epsilon=0.1, kappa=0.3, window=(0.0, 1.0))
    assert PerturbationSpec.from_dict(s.to_dict()) == s


@pytest.mark.parametrize(
    "spec",
    [
        PerturbationSpec(kind="velocity-dissipation", epsilon=1.0, kappa=0.7),
        PerturbationSpec(kind="constant-thrust-windowed", epsilon=1.0, magnitude=0.05, window=(0.0, 1.0)),
        PerturbationSpec(kind="user-callback", epsilon=1.0, callback=lambda z, t: np.array([z[2] * z[3], math.sin(z[0]), 0.0, z[1] ** 2])),
    ],
)
def test_perturbation_jacobian(spec):
    t = 0.5
    A = perturbation_jacobian(Z, t, spec)
    h = 1e-6
    fd = np.column_stack([(eval_perturbation(Z + h * e, t, spec) - eval_perturbation(Z - h * e, t, spec)) / (2 * h) for e in np.eye(4)])
    np.testing.assert_allclose(A, fd, atol=1e-8)


def test_dissipation_lowers_energy(mu):
    spec = PerturbationSpec(kind="velocity-dissipation", epsilon=1e-2, kappa=1.0)
    z1 = flow(Z, 2.0, mu, spec)
    assert eval_hamiltonian(z1, mu) < eval_hamiltonian(Z, mu)


def test_window_split_integration_is_continuous(mu):
    spec = PerturbationSpec(kind="constant-thrust-windowed", epsilon=1e-2, magnitude=0.05, window=(1.0, 2.0), ramp=0.05)
    ts = np.linspace(0.0, 3.0, 7)
    for span in [(0.0, 3.0), (3.0, 0.0)]:
        z0 = Z if span[0] == 0.0 else flow(Z, 3.0, mu, spec)
        tr = integrate(z0, span, mu, spec, t_eval=ts[:: 1 if span[0] == 0.0 else -1])
        np.testing.assert_allclose(tr.sol(tr.t), tr.y, atol=1e-14)
    fwd = flow(Z, 3.0, mu, spec)
    np.testing.assert_allclose(flow(fwd, -3.0, mu, spec, t0=3.0), Z, atol=1e-10)
