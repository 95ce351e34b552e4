import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from scatmap.dynamics import eval_hamiltonian, flow
from scatmap.manifolds import (
    asymptotic_phase,
    channel_point_from_dict,
    channel_point_to_dict,
    fiber_initial_condition,
    min_distance_to_orbit,
    mirror_cut_error,
    reflect,
    symmetric_partner,
    unperturbed_scattering_map,
    wrap_angle,
)


def test_wrap_angle_and_reflect():
    assert wrap_angle(3 * math.pi / 2) == pytest.approx(-math.pi / 2)
    assert wrap_angle(-0.1) == pytest.approx(-0.1)
    z = np.array([1.0, 2.0, 3.0, 4.0])
    np.testing.assert_array_equal(reflect(reflect(z)), z)
    np.testing.assert_array_equal(reflect(z), [-1.0, 2.0, 3.0, -4.0])


@given(st.floats(-1e3, 1e3))
def test_wrap_angle_range(a):
    w = wrap_angle(a)
    assert -math.pi <= w <= math.pi
    assert math.cos(w - a) == pytest.approx(1.0)


def test_fiber_start_energy_error_is_quadratic(cp):
    o = cp.orbit_u
    errs = [abs(eval_hamiltonian(fiber_initial_condition(o, 0.9, "u", d).z0, o.mu) - o.energy) for d in (1e-4, 1e-5)]
    # the Floquet vector is tangent to the energy level
    assert errs[0] < 1e-7
    assert errs[1] < errs[0] / 30


def test_fiber_start_rejects_unknown_branch(cp):
    with pytest.raises(ValueError):
        fiber_initial_condition(cp.orbit_u, 0.0, "x", 1e-6)


def test_cuts_lie_on_energy_and_section(channel):
    for cut in (channel.cut_u, channel.cut_s):
        assert cut.max_energy_error() < 1e-10
        assert cut.max_section_error() < 1e-12
    # reversibility maps the unstable cut onto the stable one
    assert mirror_cut_error(channel.cut_u, channel.cut_s)["normal"] < 1e-8


def test_channel_point_is_a_connection(cp):
    assert abs(eval_hamiltonian(cp.z0, cp.orbit_u.mu) - cp.energy) < 1e-10
    assert abs(cp.z0[cp.section.index] - cp.section.value) < 1e-10
    assert min_distance_to_orbit(cp.z0, cp.orbit_u, "u")[0] < 1e-6
    assert min_distance_to_orbit(cp.z0, cp.orbit_s, "s")[0] < 1e-6
    assert 0.0 <= cp.phase_shift < 2 * math.pi
    assert not cp.heteroclinic


def test_asymptotic_phase_of_point_on_stable_fiber(cp):
    o = cp.orbit_u
    z = fiber_initial_condition(o, 1.0, "s", 1e-6).z0
    ap = asymptotic_phase(z, o, "s")
    assert abs(wrap_angle(ap.theta - 1.0)) < 1e-8


def test_shifted_point_keeps_phase_shift(cp):
    c2 = cp.shifted(0.7)
    np.testing.assert_allclose(c2.z0, flow(cp.z0, 0.7, cp.orbit_u.mu), atol=1e-12)
    assert abs(wrap_angle(c2.phase_shift - cp.phase_shift)) < 1e-12
    ap = asymptotic_phase(c2.z0, cp.orbit_s, "s")
    assert abs(wrap_angle(ap.theta - c2.theta_plus)) < 1e-7


def test_channel_point_round_trip(cp):
    d = channel_point_to_dict(cp)
    r = channel_point_from_dict(d, cp.orbit_u.mu)
    assert r.orbit_s is r.orbit_u
    np.testing.assert_array_equal(r.z0, cp.z0)
    assert r.phase_shift == cp.phase_shift
    assert channel_point_to_dict(r) == d


def test_points_come_in_reflected_pairs(channel):
    for c in channel.points:
        partner = symmetric_partner(c, channel.points, tol=1e-7)
        assert partner is not None
        # reflection swaps the roles of theta^- and theta^+
        assert abs(wrap_angle(partner.theta_plus + c.theta_minus)) < 1e-6


def test_single_point_scattering_map(cp):
    ch = unperturbed_scattering_map(cp)
    assert ch.delta(cp.action) == pytest.approx(cp.phase_shift)
    assert ch.delta_derivative(cp.action) == 0.0
    with pytest.raises(ValueError):
        unperturbed_scattering_map([])


def test_heteroclinic_connection(heteroclinic):
    c = heteroclinic.cp
    assert c.heteroclinic
    assert c.orbit_u.energy == c.orbit_s.energy
    assert min_distance_to_orbit(c.z0, c.orbit_u, "u")[0] < 1e-6
    assert min_distance_to_orbit(c.z0, c.orbit_s, "s")[0] < 1e-6
    r = channel_point_from_dict(channel_point_to_dict(c), c.orbit_u.mu)
    assert r.orbit_s is not r.orbit_u and r.orbit_s.energy == c.orbit_s.energy
