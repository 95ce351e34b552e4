import math
from dataclasses import replace

import numpy as np
import pytest

from scatmap.dynamics import PerturbationSpec, eval_vector_field, flow
from scatmap.melnikov import (
    FrequencyError,
    coordinate_observable,
    connection_track,
    decay_rate,
    energy_rate_integrand,
    flow_derivative_integrand,
    master_integral,
    melnikov,
    melnikov_action,
    observable_integrand,
    phase_covector_track,
    weighted_exponential_selftest,
)


def test_weighted_exponential_quadrature():
    a, b = 1.3, 2.0
    v, w = weighted_exponential_selftest(a, b)
    assert v == pytest.approx(a / b, rel=1e-12)
    assert w == pytest.approx(a / b**2, rel=1e-12)


def test_integrand_arithmetic():
    p1, q1 = observable_integrand(coordinate_observable(0)), observable_integrand(coordinate_observable(2))
    F = 2.0 * p1 + q1
    z = np.array([1.0, 2.0, 3.0, 4.0])
    assert F.on_orbit(0.0, z, 0.0) == 5.0
    assert F.difference(0.0, z, 0.5 * z, 0.0) == 2.5
    assert F.support is None


def test_connection_track_follows_the_flow(cp):
    for side, tau in (("+", 0.8), ("-", -0.8)):
        tr = connection_track(cp, side)
        np.testing.assert_allclose(tr(tau), flow(cp.z0, tau, cp.orbit_u.mu), atol=1e-11)
        assert tr.match_jump < 1e-9
        # the track converges to its footpoint trajectory
        far = tr.tau_far + (2.0 if side == "+" else -2.0) * tr.orbit.period
        assert tr.distance(far) < 1e-8
        assert abs(tr.phase_correction) < 1e-6


def test_phase_covector_at_channel_point(cp):
    for side, f_same, f_opp in (("+", cp.f_s, cp.f_u), ("-", cp.f_u, cp.f_s)):
        dth = phase_covector_track(cp, side)(0.0)
        X0 = eval_vector_field(cp.z0, cp.orbit_u.mu)
        assert dth @ X0 == pytest.approx(cp.orbit_u.omega, rel=1e-6)
        # constant along its own fiber; the extension kills the other fiber
        assert abs(dth @ f_same) < 1e-5 * np.linalg.norm(dth)
        assert abs(dth @ f_opp) < 1e-10 * np.linalg.norm(dth)


def test_flow_derivative_integrand_decays_at_lyapunov_rate(cp, mu):
    F = flow_derivative_integrand(coordinate_observable(2), mu)
    r = master_integral(F, cp, "+")
    lam = math.log(cp.orbit_u.rho_u) / cp.orbit_u.period
    assert decay_rate(r, cp.orbit_u.period) == pytest.approx(lam, rel=0.1)
    # J+(X0 q1) = q1(z0) - q1 at the limiting footpoint
    tr = connection_track(cp, "+")
    assert r.value == pytest.approx(cp.z0[2] - tr.footpoint(0.0)[2], abs=1e-9)


def test_integral_outside_support_is_zero(cp, thrust, mu):
    early = replace(thrust, window=(cp.t0 - 5.0, cp.t0 - 4.0))
    r = master_integral(energy_rate_integrand(early, mu), cp, "+")
    assert r.value == 0.0 and r.tail == 0.0
    with pytest.raises(ValueError):
        master_integral(energy_rate_integrand(thrust, mu), cp, "x")


def test_zero_perturbation(cp):
    res = melnikov(cp, PerturbationSpec(kind="zero"))
    assert res.S_I == 0.0 and res.S_theta == 0.0 and res.tails_ok()


def test_action_correction_and_serialization(cp, thrust):
    res = melnikov(cp, thrust, angle=False)
    assert melnikov_action(cp, thrust) == res.S_I
    assert math.isnan(res.S_theta)
    d = res.to_dict()
    assert all(isinstance(v, float) for k, v in d.items() if k not in ("tails", "tau_max"))
    assert res.tails_ok()


def test_frequency_threshold(cp, thrust):
    with pytest.raises(FrequencyError):
        melnikov(cp, thrust, omega_min=10.0)
