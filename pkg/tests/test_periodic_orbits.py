import numpy as np
import pytest

from scatmap.dynamics import eval_hamiltonian, find_collinear_equilibria, flow
from scatmap.periodic_orbits import (
    TWO_PI,
    continue_family,
    correct_orbit,
    family_from_dict,
    family_to_dict,
    orbit_from_dict,
    orbit_to_dict,
    phase_of_point_on_orbit,
    seed_orbit_from_linearization,
)


def test_linear_seed_period(mu):
    z = find_collinear_equilibria(mu)["L1"]
    g = seed_orbit_from_linearization(z, mu, 1e-4)
    o = correct_orbit(g, mu)
    # small orbits have the linear period 2 pi / omega
    assert o.period == pytest.approx(TWO_PI / 2.3343858850112253, rel=1e-3)


def test_correction_at_fixed_energy(l1_family):
    o = l1_family.members[10]
    h = o.energy + 1e-5
    o2 = correct_orbit(o, l1_family.mu, energy=h)
    assert abs(o2.energy - h) < 1e-13
    assert np.linalg.norm(flow(o2.z_pc, o2.period, o2.mu) - o2.z_pc) < 1e-9


def test_family_is_monotone(l1_family):
    h, I, T = l1_family.energies, l1_family.actions, l1_family.periods
    assert np.all(np.diff(h) > 0) and np.all(np.diff(I) > 0) and np.all(np.diff(T) > 0)
    assert l1_family.members[0].action > 0


def test_splines_and_inverse(l1_family):
    h = 0.5 * sum(l1_family.h_range)
    I = l1_family.action_of_energy(h)
    assert l1_family.energy_of_action(I) == pytest.approx(h, abs=1e-12)
    o = l1_family.orbit_at_energy(h)
    assert o.action == pytest.approx(I, rel=1e-8)
    assert l1_family.omega_of_energy(h) == pytest.approx(o.omega, rel=1e-8)


def test_period_derivative_matches_family(l1_family):
    o = l1_family.members[20]
    dh = 1e-6
    a = correct_orbit(o, o.mu, energy=o.energy - dh)
    b = correct_orbit(o, o.mu, energy=o.energy + dh)
    assert o.dT_dh == pytest.approx((b.period - a.period) / (2 * dh), rel=1e-6)
    # dI/dh = T / 2 pi
    assert (b.action - a.action) / (2 * dh) == pytest.approx(o.period / TWO_PI, rel=1e-6)


def test_state_and_phase_tables(l1_family):
    o = l1_family.members[5]
    th = 1.234
    z = o.state_at(th)
    assert abs(eval_hamiltonian(z, o.mu) - o.energy) < 1e-12
    assert phase_of_point_on_orbit(o, z) == pytest.approx(th, abs=1e-8)
    np.testing.assert_allclose(flow(z, 0.4, o.mu), o.state_at(th + o.omega * 0.4), atol=1e-10)


def test_floquet_frame(l1_family):
    o = l1_family.members[30]
    M = o.monodromy
    np.testing.assert_allclose(M @ o.v_u, o.rho_u * o.v_u, rtol=1e-6, atol=1e-6 * o.rho_u)
    F, D = o.frame_at(0.7), o.dual_frame_at(0.7)
    np.testing.assert_allclose(D @ F, np.eye(4), atol=1e-9)


def test_orbit_round_trip_is_exact(l1_family):
    o = l1_family.members[3]
    r = orbit_from_dict(orbit_to_dict(o), o.mu)
    assert r.period == o.period and r.energy == o.energy and r.action == o.action
    np.testing.assert_array_equal(r.z_pc, o.z_pc)
    np.testing.assert_array_equal(r.state_at(1.0), o.state_at(1.0))


def test_family_round_trip(l1_family):
    sub = type(l1_family)(l1_family.mu, l1_family.equilibrium, l1_family.z_eq, l1_family.members[:5])
    r = family_from_dict(family_to_dict(sub))
    np.testing.assert_array_equal(r.energies, sub.energies)
    np.testing.assert_array_equal(r.actions, sub.actions)


def test_range_validation(mu):
    z = find_collinear_equilibria(mu)["L1"]
    h = eval_hamiltonian(z, mu)
    with pytest.raises(ValueError):
        continue_family(z, mu, (h - 1e-3, h + 1e-3), 5)
    with pytest.raises(ValueError):
        continue_family(z, mu, (h + 1e-3, h + 2e-3), 2)


def test_orbit_at_energy_outside_range(l1_family):
    with pytest.raises(ValueError):
        l1_family.orbit_at_energy(l1_family.h_range[1] + 1.0)
