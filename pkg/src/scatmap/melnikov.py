"""
Melnikov integrals along an unperturbed homoclinic (or heteroclinic)
connection and the first-order corrections of the scattering map.

For a channel point ``z0`` at time ``t0`` with asymptotic footpoints
``z0+`` (stable side) and ``z0-`` (unstable side), the operators are

    J+(F) = int_0^inf   [F(Phi^tau z0+, t0 + tau) - F(Phi^tau z0, t0 + tau)] dtau
    J-(F) = int_-inf^0  [F(Phi^tau z0-, t0 + tau) - F(Phi^tau z0, t0 + tau)] dtau

and their ``tau``-weighted variants.  The first-order action and angle
corrections are

    S_I     = -(1/omega) [J+(X1 H0) + J-(X1 H0)]
    S_theta = -J+(X1 theta^s) - J-(X1 theta^u)
              + (d omega/dI / omega) [J+_tau(X1 H0) + J-_tau(X1 H0)]

with the ``eps`` factor left to the caller.

The running integrals are extra states of an adaptive integration along a
``ConnectionTrack``, which represents the connection near the orbit by a
trajectory of the local manifold rather than by direct integration (whose
round-off is amplified by the unstable multiplier every period).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import solve_ivp

from .dynamics import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    PerturbationSpec,
    eval_perturbation,
    eval_vector_field,
    hamiltonian_gradient,
    integrate,
    vector_field_jacobian,
)
from .manifolds import ChannelPoint
from .periodic_orbits import TWO_PI, LyapunovOrbit


class NonDecayingIntegrandError(RuntimeError):
    """The Melnikov integrand does not decay: wrong footpoint or not a connection."""


class FrequencyError(ValueError):
    """Orbital frequency too small to divide by."""


# ---------------------------------------------------------------------------
# observables and integrands


@dataclass
class ScalarObservable:
    """
    Scalar function ``F(z, t)`` with its gradient in ``z``.

    Phase observables carry no closed-form gradient; theirs is built along a
    specific trajectory by ``phase_covector_track``.
    """

    name: str
    value: Callable
    gradient: Optional[Callable] = None


def energy_observable(params) -> ScalarObservable:
    from .dynamics import _mu, eval_hamiltonian

    mu = _mu(params)
    return ScalarObservable(
        "H0",
        lambda z, t=0.0: eval_hamiltonian(z, mu),
        lambda z, t=0.0: hamiltonian_gradient(z, mu),
    )


def coordinate_observable(index: int) -> ScalarObservable:
    names = ("p1", "p2", "q1", "q2")
    e = np.zeros(4)
    e[index] = 1.0
    return ScalarObservable(names[index], lambda z, t=0.0: float(z[index]), lambda z, t=0.0: e)


@dataclass
class Integrand:
    """
    Integrand of a master integral, evaluated separately on the footpoint
    trajectory (``on_orbit``) and on the connection (``on_connection``);
    both take ``(tau, z, t)``.  ``support`` is an absolute time interval
    outside which both vanish identically (``None``: unbounded).
    """

    name: str
    on_orbit: Callable
    on_connection: Callable
    support: Optional[tuple] = None
    breakpoints: tuple = ()

    def difference(self, tau, z_orbit, z_conn, t) -> float:
        return self.on_orbit(tau, z_orbit, t) - self.on_connection(tau, z_conn, t)

    def __add__(self, other: "Integrand") -> "Integrand":
        sup = _union_support(self.support, other.support)
        return Integrand(
            f"({self.name}+{other.name})",
            lambda tau, z, t: self.on_orbit(tau, z, t) + other.on_orbit(tau, z, t),
            lambda tau, z, t: self.on_connection(tau, z, t) + other.on_connection(tau, z, t),
            sup,
            tuple(sorted(set(self.breakpoints) | set(other.breakpoints))),
        )

    def __rmul__(self, a: float) -> "Integrand":
        a = float(a)
        return Integrand(
            f"{a}*{self.name}",
            lambda tau, z, t: a * self.on_orbit(tau, z, t),
            lambda tau, z, t: a * self.on_connection(tau, z, t),
            self.support,
            self.breakpoints,
        )


def _spec_breakpoints(spec: PerturbationSpec) -> tuple:
    if spec.window is None:
        return ()
    t_a, t_b = spec.window
    return (t_a - spec.ramp, t_a, t_b, t_b + spec.ramp)


def _union_support(a, b):
    if a is None or b is None:
        return None
    return (min(a[0], b[0]), max(a[1], b[1]))


def observable_integrand(F: ScalarObservable) -> Integrand:
    """``F`` itself, the same function on both trajectories."""
    return Integrand(F.name, lambda tau, z, t: F.value(z, t), lambda tau, z, t: F.value(z, t))


def flow_derivative_integrand(F: ScalarObservable, params) -> Integrand:
    """``X0 F = grad F . X0``."""
    from .dynamics import _mu

    mu = _mu(params)

    def f(tau, z, t):
        return float(F.gradient(z, t) @ eval_vector_field(z, mu))

    return Integrand(f"X0({F.name})", f, f)


def perturbation_derivative_integrand(F: ScalarObservable, spec: PerturbationSpec) -> Integrand:
    """``X1 F = grad F . X1`` (no ``eps``)."""

    def f(tau, z, t):
        return float(F.gradient(z, t) @ eval_perturbation(z, t, spec))

    return Integrand(f"X1({F.name})", f, f, spec.support(), _spec_breakpoints(spec))


def energy_rate_integrand(spec: PerturbationSpec, params) -> Integrand:
    """``X1 H0``."""
    return perturbation_derivative_integrand(energy_observable(params), spec)


def poisson_bracket_energy(z, t, spec: PerturbationSpec, params) -> float:
    """
    ``{H0, H1}`` written out in canonical coordinates,
    ``sum_i dH0/dq_i dH1/dp_i - dH0/dp_i dH1/dq_i``, for a
    ``hamiltonian-gradient`` spec (an independent route to ``X1 H0``).
    """
    g0 = hamiltonian_gradient(z, params)
    g1 = np.asarray(spec.h1_grad(z, t), dtype=float) * spec.envelope(t)
    return float(g0[2] * g1[0] + g0[3] * g1[1] - g0[0] * g1[2] - g0[1] * g1[3])


# ---------------------------------------------------------------------------
# connection tracks


@dataclass
class ConnectionTrack:
    """
    The connection through a channel point on one side, ``Phi^tau(z0)`` for
    ``tau >= 0`` (side ``+``) or ``tau <= 0`` (side ``-``), in three pieces:

    * ``near``: direct integration from ``z0`` up to ``tau_match``, where the
      distance to the orbit first drops below ``d_match``;
    * ``far``: a trajectory of the local stable (unstable) manifold started
      at ``tau_far`` (distance ``d_far``) from ``gamma + c V`` and integrated back to
      ``tau_match`` in the direction in which the other hyperbolic
      direction contracts; ``c`` and the footpoint phase are solved so it
      meets ``near`` there;
    * beyond ``tau_far``: the linear fiber model ``gamma + c V``.

    Direct integration alone is useless near the orbit: the round-off of
    any numerical path is amplified by ``rho_u`` per period.
    ``theta_foot`` is the footpoint phase from the matching, which refines
    the channel point's asymptotic phase by ``phase_correction``.
    """

    side: str
    orbit: LyapunovOrbit
    theta_foot: float
    tau_match: float
    tau_far: float
    c_far: float
    t_far: float
    near: object = field(repr=False)
    far: object = field(repr=False)
    match_jump: float
    phase_correction: float

    def footpoint(self, tau: float) -> np.ndarray:
        return self.orbit.state_at(self.theta_foot + self.orbit.omega * tau)

    def _field(self, t: float) -> np.ndarray:
        return self.orbit.stable_field(t) if self.side == "+" else self.orbit.unstable_field(t)

    def __call__(self, tau: float) -> np.ndarray:
        a = abs(tau)
        if a <= abs(self.tau_match):
            return self.near(tau)[:4]
        if a <= abs(self.tau_far):
            return self.far(tau)[:4]
        return self.footpoint(tau) + self.c_far * self._field(self.t_far + (tau - self.tau_far))

    def distance(self, tau: float) -> float:
        return float(np.linalg.norm(self(tau) - self.footpoint(tau)))


def connection_track(
    cp: ChannelPoint,
    side: str,
    *,
    d_match: float = 1e-3,
    d_far: float = 1e-8,
    max_periods: float = 12.0,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> ConnectionTrack:
    """
    Build (and cache on ``cp``) the connection track of ``side``.

    Raises
    ------
    NonDecayingIntegrandError
        If the trajectory never comes within ``d_match`` of the orbit.
    """
    if side not in ("+", "-"):
        raise ValueError("side must be '+' or '-'")
    key = ("track", side, d_match, d_far, rtol, atol)
    if key in cp.cache:
        return cp.cache[key]
    plus = side == "+"
    sgn = 1.0 if plus else -1.0
    orbit = cp.orbit_s if plus else cp.orbit_u
    mu, om, T = orbit.mu, orbit.omega, orbit.period
    th0 = cp.theta_plus if plus else cp.theta_minus
    row = 2 if plus else 3
    field_fn = orbit.stable_field if plus else orbit.unstable_field

    # locate tau_match on a coarse direct run
    z = np.array(cp.z0, dtype=float)
    tau = 0.0
    tau_m = None
    step = T / 4.0
    while abs(tau) < max_periods * T:
        tr = integrate(z, (tau, tau + sgn * step), mu, rtol=rtol, atol=atol)
        for s in np.linspace(tau, tau + sgn * step, 17)[1:]:
            zz = tr(s)
            if np.linalg.norm(zz - orbit.state_at(th0 + om * s)) < d_match:
                tau_m = float(s)
                break
        if tau_m is not None:
            break
        tau += sgn * step
        z = tr.y_final
    if tau_m is None:
        raise NonDecayingIntegrandError(f"connection never within {d_match} of the orbit")
    near = integrate(cp.z0, (0.0, tau_m), mu, rtol=rtol, atol=atol)
    zm = near.y_final
    th_m = th0 + om * tau_m
    dual = orbit.dual_frame_at(th_m)
    d_m = float(np.linalg.norm(zm - orbit.state_at(th_m)))
    rho = orbit.rho_s if plus else 1.0 / orbit.rho_u
    n_far = math.log(d_far / d_m) / math.log(rho)
    tau_f = tau_m + sgn * n_far * T

    def start(c, dth):
        th = th0 + dth + om * tau_f
        t_orb = (th % TWO_PI) / om
        return orbit.state_at(th) + c * field_fn(t_orb), t_orb

    def resid(c, dth):
        zs, _ = start(c, dth)
        zl = integrate(zs, (tau_f, tau_m), mu, rtol=rtol, atol=atol, dense_output=False).y_final
        dz = zl - zm
        return np.array([dual[row] @ dz, dual[0] @ dz])

    t_orb_m = (th_m % TWO_PI) / om
    c = float(dual[row] @ (zm - orbit.state_at(th_m))) / float(dual[row] @ field_fn(t_orb_m - sgn * n_far * T))
    dth = 0.0
    r = resid(c, dth)
    for _ in range(8):
        hc = 1e-4 * abs(c)
        hth = 1e-6
        Jm = np.column_stack([(resid(c + hc, dth) - r) / hc, (resid(c, dth + hth) - r) / hth])
        dc, ddth = np.linalg.solve(Jm, -r)
        c += dc
        dth += ddth
        r_new = resid(c, dth)
        done = np.linalg.norm(r_new) >= 0.5 * np.linalg.norm(r) or np.linalg.norm(r_new) < 1e-15
        r = r_new
        if done:
            break
    zs, t_far = start(c, dth)
    far = integrate(zs, (tau_f, tau_m), mu, rtol=rtol, atol=atol)
    out = ConnectionTrack(
        side=side,
        orbit=orbit,
        theta_foot=float(th0 + dth),
        tau_match=float(tau_m),
        tau_far=float(tau_f),
        c_far=float(c),
        t_far=float(t_far),
        near=near.sol,
        far=far.sol,
        match_jump=float(np.linalg.norm(far.y_final - zm)),
        phase_correction=float(dth),
    )
    cp.cache[key] = out
    return out


# ---------------------------------------------------------------------------
# phase covectors


@dataclass
class PhaseCovectorTrack:
    """
    ``d theta^s`` (side ``+``) or ``d theta^u`` (side ``-``) along the
    connection through a channel point, for ``tau`` between 0 and
    ``t_sync``.

    ``w`` and ``nu`` are the adjoint transports of the Floquet phase
    covector and of the covector annihilating the tangent space of the
    manifold, seeded where the connection is within ``d_sync`` of the orbit.
    The returned differential is

        w(tau) - (t_sync - tau) (d omega/dh) dH0 - beta nu(tau)

    with ``beta`` fixed so that it vanishes on the opposite fiber direction at
    ``z0``; this fixes the off-manifold extension of the asymptotic phase.
    Beyond ``t_sync`` the Floquet phase covector at the footpoint is used
    (error of order ``d_sync``).
    """

    side: str
    orbit: LyapunovOrbit
    theta_foot: float
    t_sync: float
    beta: float
    domega_dh: float
    base: ConnectionTrack
    cov: object
    mu: float

    def __call__(self, tau: float, z=None) -> np.ndarray:
        lo, hi = sorted((0.0, self.t_sync))
        if lo - 1e-12 <= tau <= hi + 1e-12:
            zz = self.base(tau) if z is None else z
            y = self.cov(tau)
            w, nu = y[:4], y[4:]
            return (
                w
                - (self.t_sync - tau) * self.domega_dh * hamiltonian_gradient(zz, self.mu)
                - self.beta * nu
            )
        return self.orbit.phase_covector(self.theta_foot + self.orbit.omega * tau)


def _domega_dh(orbit: LyapunovOrbit) -> float:
    return -orbit.omega * orbit.dT_dh / orbit.period


def phase_covector_track(cp: ChannelPoint, side: str, *, d_sync: float = 1e-9) -> PhaseCovectorTrack:
    """Build (and cache on ``cp``) the phase differential along the connection."""
    key = ("covector", side, d_sync)
    if key in cp.cache:
        return cp.cache[key]
    base = connection_track(cp, side)
    plus = side == "+"
    orbit = base.orbit
    mu = orbit.mu
    # first time the connection is within d_sync (inside the far piece)
    d_m = base.distance(base.tau_match)
    rho = orbit.rho_s if plus else 1.0 / orbit.rho_u
    n = math.log(d_sync / d_m) / math.log(rho)
    t_sync = base.tau_match + (1.0 if plus else -1.0) * min(n, 0.95 * abs(base.tau_far - base.tau_match) / orbit.period) * orbit.period
    theta_c = base.theta_foot + orbit.omega * t_sync
    frame = orbit.frame_at(theta_c)
    cond = np.linalg.cond(frame)
    if cond > 1e10:
        raise ValueError(f"ill-conditioned Floquet frame (cond {cond:.2e})")
    dual = orbit.dual_frame_at(theta_c)
    w_T = orbit.omega * dual[0]
    # annihilates X0, e_h and the fiber direction of the manifold itself
    nu_T = dual[3] if plus else dual[2]

    def rhs(t, y):
        A = vector_field_jacobian(base(t), mu)
        W = y.reshape(2, 4)
        return (-(W @ A)).ravel()

    sol = solve_ivp(
        rhs,
        (t_sync, 0.0),
        np.concatenate([w_T, nu_T]),
        method="DOP853",
        rtol=DEFAULT_RTOL,
        atol=1e-14,
        dense_output=True,
    )
    y0 = sol.y[:, -1]
    w0, nu0 = y0[:4], y0[4:]
    f_opp = cp.f_u if plus else cp.f_s
    beta = float(w0 @ f_opp) / float(nu0 @ f_opp)
    out = PhaseCovectorTrack(
        side=side,
        orbit=orbit,
        theta_foot=base.theta_foot,
        t_sync=float(t_sync),
        beta=beta,
        domega_dh=_domega_dh(orbit),
        base=base,
        cov=sol.sol,
        mu=mu,
    )
    cp.cache[key] = out
    return out


def phase_rate_integrand(cp: ChannelPoint, side: str, spec: PerturbationSpec) -> Integrand:
    """``X1 theta^s`` (side ``+``) or ``X1 theta^u`` (side ``-``)."""
    track = phase_covector_track(cp, side)
    orbit = track.orbit
    th0 = track.theta_foot

    def on_orbit(tau, z, t):
        return float(orbit.phase_covector(th0 + orbit.omega * tau) @ eval_perturbation(z, t, spec))

    def on_conn(tau, z, t):
        return float(track(tau, z) @ eval_perturbation(z, t, spec))

    name = "X1(theta_s)" if side == "+" else "X1(theta_u)"
    return Integrand(name, on_orbit, on_conn, spec.support(), _spec_breakpoints(spec))


def phase_flow_integrand(cp: ChannelPoint, side: str) -> Integrand:
    """``X0 theta^{s,u}``: ``omega`` on both trajectories up to round-off."""
    track = phase_covector_track(cp, side)
    orbit = track.orbit
    mu = orbit.mu
    th0 = track.theta_foot

    def on_orbit(tau, z, t):
        return float(orbit.phase_covector(th0 + orbit.omega * tau) @ eval_vector_field(z, mu))

    def on_conn(tau, z, t):
        return float(track(tau, z) @ eval_vector_field(z, mu))

    return Integrand("X0(theta)", on_orbit, on_conn)


# ---------------------------------------------------------------------------
# master integrals


@dataclass
class IntegralResult:
    value: float
    weighted: float
    tail: float
    weighted_tail: float
    tau_max: float
    samples: np.ndarray = field(repr=False, default_factory=lambda: np.zeros((0, 2)))


def _fit_tail(tau: np.ndarray, f: np.ndarray, period: float, tau_end: float):
    """
    Remainders of ``int f`` and ``int tau f`` beyond ``tau_end`` from an
    envelope ``a exp(-b |tau|)`` fitted over the last two periods.
    Returns ``(tail, weighted_tail, b)``.
    """
    mask = np.abs(tau) >= abs(tau_end) - 2.0 * period
    tt, ff = np.abs(tau[mask]), np.abs(f[mask])
    edges = np.linspace(tt.min(), tt.max(), 9)
    xs, ys = [], []
    for a, b in zip(edges[:-1], edges[1:]):
        m = (tt >= a) & (tt <= b) & (ff > 0)
        if m.any():
            k = np.argmax(ff[m])
            xs.append(tt[m][k])
            ys.append(math.log(ff[m][k]))
    if len(xs) < 3:
        return 0.0, 0.0, math.nan
    slope, icpt = np.polyfit(xs, ys, 1)
    b = -slope
    if b <= 0:
        return math.inf, math.inf, b
    Te = abs(tau_end)
    env = math.exp(icpt - b * Te)
    return env / b, env * (Te / b + 1.0 / b**2), b


def decay_rate(result: IntegralResult, period: float) -> float:
    """Fitted exponential decay rate of the integrand over the last two periods."""
    S = result.samples
    return _fit_tail(S[:, 0], S[:, 1], period, result.tau_max)[2]


def master_integral(
    F: Integrand,
    cp: ChannelPoint,
    side: str,
    *,
    start_tau: float = 0.0,
    tol_tail: float = 1e-10,
    min_periods: float = 4.0,
    max_periods: float = 40.0,
    rtol: float = DEFAULT_RTOL,
    atol: float = 1e-15,
) -> IntegralResult:
    """
    ``J+(F)`` (side ``"+"``) or ``J-(F)`` (side ``"-"``) from ``start_tau``
    to infinity (resp. minus infinity), together with the ``tau``-weighted
    integral.

    The running integrals are extra states of an adaptive integration
    along the connection track.  The run stops once
    ``|tau - start_tau| >= min_periods * T`` and
    ``|integrand| < tol_tail * (1 + |accumulated|)`` has held over a whole
    period, or once the support of ``F`` has been passed (tail 0).
    ``tail`` estimates the discarded remainder from an exponential fit
    over the last two periods.

    Raises
    ------
    NonDecayingIntegrandError
        If the stop rule is not met within ``max_periods``.
    """
    if side not in ("+", "-"):
        raise ValueError("side must be '+' or '-'")
    plus = side == "+"
    sgn = 1.0 if plus else -1.0
    track = connection_track(cp, side)
    T = track.orbit.period
    t0 = cp.t0

    def f(tau):
        return F.on_orbit(tau, track.footpoint(tau), t0 + tau) - F.on_connection(tau, track(tau), t0 + tau)

    sup = None
    if F.support is not None:
        sup = (F.support[0] - t0, F.support[1] - t0)
        if (plus and sup[1] <= start_tau) or (not plus and sup[0] >= start_tau):
            return IntegralResult(0.0, 0.0, 0.0, 0.0, float(start_tau))
    stops = sorted({b - t0 for b in F.breakpoints} | ({track.tau_match, track.tau_far}))

    def past_support(tau):
        if sup is None:
            return False
        return tau >= sup[1] if plus else tau <= sup[0]

    def next_stop(tau):
        nxt = tau + sgn * T / 8.0
        cands = [b for b in stops if (b - tau) * sgn > 1e-12 and (nxt - b) * sgn > 0]
        if cands:
            return min(cands, key=lambda b: abs(b - tau))
        return nxt

    def rhs(tau, q):
        v = f(tau)
        return np.array([v, tau * v])

    Q = np.zeros(2)
    tau = float(start_tau)
    samples = []
    quiet_since = None
    while True:
        if abs(tau - start_tau) > max_periods * T:
            raise NonDecayingIntegrandError(f"{F.name}: no convergence within {max_periods} periods")
        nxt = next_stop(tau)
        sol = solve_ivp(rhs, (tau, nxt), Q, method="DOP853", rtol=rtol, atol=atol)
        fmax = 0.0
        for tk in np.linspace(tau, nxt, 9)[1:]:
            fk = f(tk)
            samples.append((tk, fk))
            fmax = max(fmax, abs(fk))
        prev = tau
        tau = nxt
        Q = sol.y[:, -1]
        if past_support(tau):
            return IntegralResult(sgn * float(Q[0]), sgn * float(Q[1]), 0.0, 0.0, float(tau), np.array(samples))
        if fmax < tol_tail * (1.0 + abs(Q[0])):
            if quiet_since is None:
                quiet_since = prev
        else:
            quiet_since = None
        if (
            quiet_since is not None
            and abs(tau - quiet_since) >= T - 1e-12
            and abs(tau - start_tau) >= min_periods * T
        ):
            break
    S = np.array(samples)
    tail, wtail, _ = _fit_tail(S[:, 0], S[:, 1], T, tau)
    # on side - the run goes from 0 down to tau, giving minus the integral
    return IntegralResult(
        sgn * float(Q[0]), sgn * float(Q[1]), float(tail), float(wtail), float(tau), S
    )


def weighted_exponential_selftest(a: float = 1.3, b: float = 2.0) -> tuple[float, float]:
    """
    Augmented-state quadrature of ``a exp(-b tau)`` and ``tau a exp(-b tau)``
    over ``[0, inf)`` truncated where the integrand is below round-off;
    exact values ``a/b`` and ``a/b^2``.
    """
    tau_end = 40.0 / b

    def rhs(t, q):
        f = a * math.exp(-b * t)
        return [f, t * f]

    sol = solve_ivp(rhs, (0.0, tau_end), [0.0, 0.0], method="DOP853", rtol=1e-13, atol=1e-16)
    return float(sol.y[0, -1]), float(sol.y[1, -1])


# ---------------------------------------------------------------------------
# scattering-map corrections


@dataclass
class MelnikovResult:
    """
    First-order corrections ``S_I``, ``S_theta`` (without ``eps``) and the
    integrals they are built from.
    """

    S_I: float
    S_theta: float
    omega: float
    d2h_dI2: float
    J_plus_H: float
    J_minus_H: float
    J_plus_tau_H: float
    J_minus_tau_H: float
    J_plus_theta: float
    J_minus_theta: float
    tails: dict
    tau_max: dict
    tol_tail: float

    def tails_ok(self) -> bool:
        return all(abs(v) < self.tol_tail for v in self.tails.values())

    def to_dict(self) -> dict:
        scalars = (
            "S_I", "S_theta", "omega", "d2h_dI2", "J_plus_H", "J_minus_H",
            "J_plus_tau_H", "J_minus_tau_H", "J_plus_theta", "J_minus_theta", "tol_tail",
        )
        out = {k: float(getattr(self, k)) for k in scalars}
        out["tails"] = {k: float(v) for k, v in self.tails.items()}
        out["tau_max"] = {k: float(v) for k, v in self.tau_max.items()}
        return out


def change_in_H(cp: ChannelPoint, spec: PerturbationSpec, **kw) -> dict:
    """
    First-order change of ``H0`` between the footpoints:
    ``Delta H = -eps [J+(X1 H0) + J-(X1 H0)]``.
    """
    F = energy_rate_integrand(spec, cp.orbit_u.mu)
    jp = master_integral(F, cp, "+", **kw)
    jm = master_integral(F, cp, "-", **kw)
    return {
        "delta_H": -spec.epsilon * (jp.value + jm.value),
        "J_plus": jp.value,
        "J_minus": jm.value,
        "tail_plus": jp.tail,
        "tail_minus": jm.tail,
    }


def _omega_checked(orbit: LyapunovOrbit, omega_min: float) -> float:
    om = orbit.omega
    if abs(om) < omega_min:
        raise FrequencyError(f"frequency {om} below threshold {omega_min}")
    return om


def melnikov_action(cp: ChannelPoint, spec: PerturbationSpec, *, omega_min: float = 1e-8, **kw) -> float:
    """``S_I = -(1/omega) [J+(X1 H0) + J-(X1 H0)]`` (no ``eps``)."""
    om = _omega_checked(cp.orbit_u, omega_min)
    if spec.kind == "zero":
        return 0.0
    F = energy_rate_integrand(spec, cp.orbit_u.mu)
    jp = master_integral(F, cp, "+", **kw)
    jm = master_integral(F, cp, "-", **kw)
    return -(jp.value + jm.value) / om


def melnikov_angle(
    cp: ChannelPoint,
    spec: PerturbationSpec,
    *,
    d2h_dI2: Optional[float] = None,
    omega_min: float = 1e-8,
    **kw,
) -> float:
    """S_theta (no ``eps``); see ``melnikov``."""
    return melnikov(cp, spec, d2h_dI2=d2h_dI2, omega_min=omega_min, **kw).S_theta


def melnikov(
    cp: ChannelPoint,
    spec: PerturbationSpec,
    *,
    d2h_dI2: Optional[float] = None,
    omega_min: float = 1e-8,
    angle: bool = True,
    **kw,
) -> MelnikovResult:
    """
    Both first-order corrections with their component integrals.

    ``d2h_dI2`` defaults to ``omega * d omega/dh`` of the channel orbit
    (from the exact period derivative); pass the family finite-difference
    value to test sensitivity.
    """
    orbit = cp.orbit_u
    om = _omega_checked(orbit, omega_min)
    if d2h_dI2 is None:
        d2h_dI2 = om * _domega_dh(orbit)
    tol_tail = kw.get("tol_tail", 1e-10)
    if spec.kind == "zero":
        z = {k: 0.0 for k in ("H+", "H-", "theta+", "theta-")}
        return MelnikovResult(0.0, 0.0, om, d2h_dI2, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, z, dict(z), tol_tail)
    FH = energy_rate_integrand(spec, orbit.mu)
    jp = master_integral(FH, cp, "+", **kw)
    jm = master_integral(FH, cp, "-", **kw)
    S_I = -(jp.value + jm.value) / om
    tails = {"H+": jp.tail, "H-": jm.tail, "tauH+": jp.weighted_tail, "tauH-": jm.weighted_tail}
    tmax = {"H+": jp.tau_max, "H-": jm.tau_max}
    jtp = jtm = 0.0
    S_theta = math.nan
    if angle:
        Fp = phase_rate_integrand(cp, "+", spec)
        Fm = phase_rate_integrand(cp, "-", spec)
        rp = master_integral(Fp, cp, "+", **kw)
        rm = master_integral(Fm, cp, "-", **kw)
        jtp, jtm = rp.value, rm.value
        tails.update({"theta+": rp.tail, "theta-": rm.tail})
        tmax.update({"theta+": rp.tau_max, "theta-": rm.tau_max})
        S_theta = -jtp - jtm + (d2h_dI2 / om) * (jp.weighted + jm.weighted)
    return MelnikovResult(
        S_I=S_I,
        S_theta=S_theta,
        omega=om,
        d2h_dI2=d2h_dI2,
        J_plus_H=jp.value,
        J_minus_H=jm.value,
        J_plus_tau_H=jp.weighted,
        J_minus_tau_H=jm.weighted,
        J_plus_theta=jtp,
        J_minus_theta=jtm,
        tails=tails,
        tau_max=tmax,
        tol_tail=tol_tail,
    )
