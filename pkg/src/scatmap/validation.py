"""
Direct computation of the perturbed scattering map for compact-window
perturbations, the eps^2 remainder study, and the Gronwall bound check.

Past and future asymptotic data are recorded at the reference time
``t_r`` (the channel time ``t0``): a trajectory asymptotic to the orbit of
energy ``h`` with phase ``theta(t) = Theta + omega(h) (t - t_r)`` has data
``(I(h), Theta)``.

The direct transition solves two boundary-value problems by two-sided
shooting (``bridge``):

* outer: the perturbed trajectory that starts on the unstable fiber of
  ``(h-, Theta-)`` (the unperturbed channel's past data, untouched since
  the window lies after ``t_r``) and ends on the stable fiber of some
  ``(h+, Theta+)``;
* inner: the trajectory that stays near the orbit cylinder through the
  window and ends at ``(h+, Theta+)``; its past data ``(h_p, Theta_p)``
  expresses the future footpoint in the same coordinates as the past
  footpoint, which is how the first-order corrections are defined.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from scipy import stats
from scipy.integrate import solve_ivp

from .dynamics import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    CollisionError,
    PerturbationSpec,
    _mu,
    eval_hamiltonian,
    eval_perturbation,
    eval_vector_field,
    hamiltonian_gradient,
    integrate,
    integrate_variational,
    perturbation_bound,
    stm_of,
    vector_field_jacobian,
)
from .manifolds import ChannelPoint
from .melnikov import connection_track
from .periodic_orbits import TWO_PI, LyapunovOrbit, OrbitFamily


class TransitDestroyedError(RuntimeError):
    """The perturbed transit does not return to any family orbit."""


class ScalingError(RuntimeError):
    """A direct transition failed inside a scaling study."""

    def __init__(self, msg: str, epsilon: float):
        super().__init__(msg)
        self.epsilon = epsilon


# ---------------------------------------------------------------------------
# orbits at arbitrary energies


class OrbitProvider:
    """Corrected family orbits at requested energies, cached by value."""

    def __init__(self, family: OrbitFamily, seed: Optional[LyapunovOrbit] = None):
        self.family = family
        self._cache: dict[float, LyapunovOrbit] = {}
        if seed is not None:
            self._cache[float(seed.energy)] = seed

    def __call__(self, h: float) -> LyapunovOrbit:
        h = float(h)
        for k, o in self._cache.items():
            if abs(k - h) < 1e-15:
                return o
        try:
            o = self.family.orbit_at_energy(h)
        except Exception as exc:  # noqa: BLE001 - any correction failure means the transit left the family
            raise TransitDestroyedError(f"no family orbit at energy {h}: {exc}") from exc
        self._cache[h] = o
        return o


def action_difference(o1: LyapunovOrbit, o2: LyapunovOrbit) -> float:
    """
    ``I(h2) - I(h1)`` from ``dI/dh = T/(2 pi)`` by the endpoint-corrected
    trapezoid rule (error of fifth order in ``h2 - h1``).
    """
    dh = o2.energy - o1.energy
    f1, f2 = o1.period / TWO_PI, o2.period / TWO_PI
    g1, g2 = o1.dT_dh / TWO_PI, o2.dT_dh / TWO_PI
    return 0.5 * dh * (f1 + f2) - dh * dh * (g2 - g1) / 12.0


# ---------------------------------------------------------------------------
# two-sided shooting


@dataclass
class FiberEnd:
    """
    End of a bridge: the point ``gamma_h(phi) + s v(phi)`` at time ``t``,
    ``phi = Theta + omega(h) (t - t_r)``, ``v`` the unstable (past end) or
    stable (future end) Floquet vector.  ``free`` lists which of
    ``("h", "Theta", "s")`` the solver may change.
    """

    t: float
    h: float
    Theta: float
    s: float
    kind: str
    free: tuple = ("h", "Theta", "s")

    def _phase(self, orbit: LyapunovOrbit, t_r: float) -> float:
        dom = -orbit.omega * orbit.dT_dh / orbit.period
        return self.Theta + (orbit.omega + dom * (self.h - orbit.energy)) * (self.t - t_r)

    def point(self, orbit: LyapunovOrbit, t_r: float) -> np.ndarray:
        """
        End point built on ``orbit``; an energy offset from the orbit's is
        taken to first order along ``e_h`` (callers keep it tiny).
        """
        phi = self._phase(orbit, t_r)
        F = orbit.frame_at(phi)
        col = 3 if self.kind == "u" else 2
        return orbit.state_at(phi) + (self.h - orbit.energy) * F[:, 1] + self.s * F[:, col]

    def tangents(self, orbit: LyapunovOrbit, t_r: float) -> dict:
        phi = self._phase(orbit, t_r)
        F = orbit.frame_at(phi)
        dom = -orbit.omega * orbit.dT_dh / orbit.period
        col = 3 if self.kind == "u" else 2
        return {
            "h": F[:, 1] + F[:, 0] * dom * (self.t - t_r) / orbit.omega,
            "Theta": F[:, 0] / orbit.omega,
            "s": F[:, col],
        }


@dataclass
class BridgeSolution:
    past: FiberEnd
    future: FiberEnd
    residual: float
    iterations: int
    t_mid: float


def _propagate(z, t0, t1, params, spec, rtol, atol):
    return integrate(z, (t0, t1), params, spec, rtol=rtol, atol=atol, dense_output=False).y_final


def _stm(z, t0, t1, mu, spec, rtol, atol):
    tr = integrate_variational(z, (t0, t1), mu, rtol=rtol, atol=atol, dense_output=False, spec=spec)
    return stm_of(tr.y_final)


def bridge(
    past: FiberEnd,
    future: FiberEnd,
    t_mid: float,
    t_r: float,
    orbits: Callable,
    params,
    spec: Optional[PerturbationSpec],
    *,
    tol: float = 1e-12,
    max_iter: int = 15,
    max_stages: int = 4,
    h_refresh: float = 1e-11,
    step_tol: float = 1e-13,
    damping_floor: float = 1e-8,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> BridgeSolution:
    """
    Newton solve for the free end parameters so that the forward image of
    the past end and the backward image of the future end coincide at
    ``t_mid``.  Exactly four parameters must be free.  Residuals and
    transition matrices both use the perturbed flow.
    Energies within ``h_refresh`` of the reference orbit's are handled by
    the first-order ``e_h`` offset; larger moves trigger a re-correction.
    """
    names = [("p", k) for k in past.free] + [("f", k) for k in future.free]
    if len(names) != 4:
        raise ValueError("bridge needs exactly four free parameters")
    past = FiberEnd(**past.__dict__)
    future = FiberEnd(**future.__dict__)
    mu = _mu(params)
    it = 0
    best = (math.inf, None, None)

    def residual(pa, fu, op, of):
        try:
            za, zb = pa.point(op, t_r), fu.point(of, t_r)
            ya = _propagate(za, pa.t, t_mid, params, spec, rtol, atol)
            yb = _propagate(zb, fu.t, t_mid, params, spec, rtol, atol)
        except CollisionError:
            return math.inf, None, None, None
        return float(np.linalg.norm(ya - yb)), ya - yb, za, zb

    def moved(step, lam):
        pa, fu = FiberEnd(**past.__dict__), FiberEnd(**future.__dict__)
        for (side, k), d in zip(names, step):
            end = pa if side == "p" else fu
            setattr(end, k, getattr(end, k) + lam * float(d))
        return pa, fu

    # Orbits are frozen within a stage so the residual is smooth in the
    # parameters; each stage re-corrects them at the current energies.
    for stage in range(max_stages):
        op, of = orbits(past.h), orbits(future.h)
        nr, r, za, zb = residual(past, future, op, of)
        if r is None:
            break
        # iterates of earlier stages rest on stale orbits: return them only
        # when a later stage cannot even evaluate its start
        best = (math.inf, None, None)
        for _ in range(max_iter):
            it += 1
            if nr < best[0]:
                best = (nr, FiberEnd(**past.__dict__), FiberEnd(**future.__dict__))
            if nr < tol:
                break
            Pa = _stm(za, past.t, t_mid, mu, spec, rtol, atol)
            Pb = _stm(zb, future.t, t_mid, mu, spec, rtol, atol)
            ta, tb = past.tangents(op, t_r), future.tangents(of, t_r)
            cols = [Pa @ ta[k] if side == "p" else -(Pb @ tb[k]) for side, k in names]
            step = np.linalg.solve(np.column_stack(cols), -r)
            # backtrack while far from the solution; near it the residual
            # norm sits on an integration-noise floor and is not monotone
            lam = 1.0
            for _ in range(10):
                pa, fu = moved(step, lam)
                t_nr, t_r_, t_za, t_zb = residual(pa, fu, op, of)
                if t_nr < nr or (nr < damping_floor and t_nr < 10.0 * nr):
                    break
                lam *= 0.5
            else:
                break
            past, future = pa, fu
            nr, r, za, zb = t_nr, t_r_, t_za, t_zb
            # The fiber-offset columns are stretched by the near-orbit arcs,
            # so convergence is judged on the steps in relative units.
            scaled = [
                abs(lam * d) / max(abs(getattr(past if side == "p" else future, k)), 1e-300) if k == "s" else abs(lam * d)
                for (side, k), d in zip(names, step)
            ]
            if lam == 1.0 and max(scaled) < step_tol:
                if nr < best[0]:
                    best = (nr, FiberEnd(**past.__dict__), FiberEnd(**future.__dict__))
                break
        if best[1] is None:
            break
        past, future = best[1], best[2]
        if abs(past.h - op.energy) < h_refresh and abs(future.h - of.energy) < h_refresh:
            break
    nr, past, future = best
    if past is None:
        raise TransitDestroyedError("bridge integration failed at the initial guess")
    return BridgeSolution(past, future, nr, it, t_mid)


# ---------------------------------------------------------------------------
# direct transition


@dataclass
class DirectTransitionResult:
    epsilon: float
    delta_I: float
    delta_theta: float
    h_minus: float
    Theta_minus: float
    h_plus: float
    Theta_plus: float
    h_inner: float
    Theta_inner: float
    phase_shift_reference: float
    window: tuple
    t_ref: float
    outer_residual: float
    inner_residual: float
    energy_bookkeeping_error: float = math.nan

    def to_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def default_thrust_spec(
    cp: ChannelPoint,
    *,
    magnitude: float = 0.05,
    offset: float = 1.0,
    duration: float = 1.0,
    direction: tuple = (1.0, 0.0),
    ramp: float = 0.05,
    epsilon: float = 1.0,
) -> PerturbationSpec:
    """Windowed thrust starting ``offset`` after the channel time."""
    return PerturbationSpec(
        kind="constant-thrust-windowed",
        epsilon=epsilon,
        direction=tuple(direction),
        magnitude=magnitude,
        window=(cp.t0 + offset, cp.t0 + offset + duration),
        ramp=ramp,
    )


def _time_at_distance(cp: ChannelPoint, side: str, d: float) -> float:
    tr = connection_track(cp, side)
    o = tr.orbit
    d_m = tr.distance(tr.tau_match)
    rho = o.rho_s if side == "+" else 1.0 / o.rho_u
    return tr.tau_match + (1.0 if side == "+" else -1.0) * o.period * math.log(d / d_m) / math.log(rho)


def _fiber_offset(z, orbit: LyapunovOrbit, phi: float, kind: str) -> float:
    row = 3 if kind == "u" else 2
    return float(orbit.dual_frame_at(phi)[row] @ (np.asarray(z) - orbit.state_at(phi)))


def _check_window(cp: ChannelPoint, spec: PerturbationSpec):
    sup = spec.support()
    if sup is None:
        raise ValueError("direct transition needs a compact-window perturbation")
    if sup[0] <= cp.t0:
        raise ValueError("window must start after the channel time")
    return sup


def direct_transition(
    cp: ChannelPoint,
    spec: PerturbationSpec,
    epsilon: float,
    family: OrbitFamily,
    *,
    phase_shift_reference: Optional[float] = None,
    d_end: float = 1e-7,
    d_inner: float = 1e-6,
    residual_max: float = 1e-7,
    orbits: Optional[OrbitProvider] = None,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> DirectTransitionResult:
    """
    Measured change of the asymptotic data across one perturbed transit.

    ``phase_shift_reference`` is the unperturbed phase shift produced by this
    same pipeline at ``eps = 0`` (computed when not given).

    Raises
    ------
    TransitDestroyedError
        If the post-window trajectory has no family orbit to land on.
    """
    sup = _check_window(cp, spec)
    params = cp.orbit_u.mu
    spec_e = spec.with_epsilon(epsilon)
    orbits = orbits or OrbitProvider(family, cp.orbit_u)
    t_r = cp.t0
    h = cp.orbit_u.energy
    trm, trp = connection_track(cp, "-"), connection_track(cp, "+")
    Theta_m = trm.theta_foot
    if phase_shift_reference is None and epsilon != 0.0:
        phase_shift_reference = direct_transition(
            cp, spec, 0.0, family, d_end=d_end, d_inner=d_inner, orbits=orbits, rtol=rtol, atol=atol
        ).Theta_inner - Theta_m

    # outer bridge: past fixed except the fiber offset
    tau_a = _time_at_distance(cp, "-", d_end)
    tau_b = _time_at_distance(cp, "+", d_end)
    o = cp.orbit_u
    s_a = _fiber_offset(trm(tau_a), o, Theta_m + o.omega * tau_a, "u")
    s_b = _fiber_offset(trp(tau_b), cp.orbit_s, trp.theta_foot + cp.orbit_s.omega * tau_b, "s")
    past = FiberEnd(t_r + tau_a, h, Theta_m, s_a, "u", free=("s",))
    future = FiberEnd(t_r + tau_b, cp.orbit_s.energy, trp.theta_foot, s_b, "s")
    t_mid = 0.5 * (sup[1] + t_r + tau_b)
    outer = bridge(past, future, t_mid, t_r, orbits, params, spec_e, rtol=rtol, atol=atol)
    if outer.residual > residual_max:
        raise TransitDestroyedError(f"outer bridge residual {outer.residual:.2e}")
    h_plus, Theta_plus = outer.future.h, outer.future.Theta

    # energy bookkeeping along the outer trajectory
    zc = outer.past.point(orbits(outer.past.h), t_r)
    e_err = energy_rate_identity(zc, (outer.past.t, sup[1]), params, spec_e, rtol=rtol, atol=atol)["error"]

    # inner bridge: future fixed except the fiber offset
    lam = math.log(cp.orbit_u.rho_u) / cp.orbit_u.period
    kick = max(abs(epsilon) * perturbation_bound(spec) * (sup[1] - sup[0]), 1e-300)
    margin = min(max(math.log(kick / d_inner) / lam, 0.5), 8.0)
    f_in = FiberEnd(sup[1] + margin, h_plus, Theta_plus, 0.0, "s", free=("s",))
    p_in = FiberEnd(sup[0] - margin, h_plus, Theta_plus, 0.0, "u")
    inner = bridge(p_in, f_in, 0.5 * (sup[0] + sup[1]), t_r, orbits, params, spec_e, rtol=rtol, atol=atol)
    if inner.residual > residual_max:
        raise TransitDestroyedError(f"inner bridge residual {inner.residual:.2e}")
    h_p, Theta_p = inner.past.h, inner.past.Theta

    dI = action_difference(orbits(h), orbits(h_p))
    ref = 0.0 if phase_shift_reference is None else phase_shift_reference
    dth = (Theta_p - Theta_m - ref + math.pi) % TWO_PI - math.pi
    return DirectTransitionResult(
        epsilon=float(epsilon),
        delta_I=float(dI),
        delta_theta=float(dth),
        h_minus=float(h),
        Theta_minus=float(Theta_m),
        h_plus=float(h_plus),
        Theta_plus=float(Theta_plus),
        h_inner=float(h_p),
        Theta_inner=float(Theta_p),
        phase_shift_reference=float(ref),
        window=tuple(spec.window),
        t_ref=float(t_r),
        outer_residual=outer.residual,
        inner_residual=inner.residual,
        energy_bookkeeping_error=float(e_err),
    )


# ---------------------------------------------------------------------------
# exact energy rate


def energy_rate_identity(z0, t_span, params, spec: PerturbationSpec, *, rtol=DEFAULT_RTOL, atol=DEFAULT_ATOL) -> dict:
    """
    Compare ``H0(t1) - H0(t0)`` with ``eps int X1 H0 dt`` along the
    perturbed trajectory, the integral carried as an extra state.
    """
    mu = _mu(params)
    eps = spec.epsilon

    def rhs(t, y):
        z = y[:4]
        x1 = eval_perturbation(z, t, spec)
        dz = eval_vector_field(z, mu) + eps * x1
        return np.concatenate([dz, [float(hamiltonian_gradient(z, mu) @ x1)]])

    stops = [t_span[0], t_span[1]]
    if spec.window is not None:
        t_a, t_b = spec.window
        for b in (t_a - spec.ramp, t_a, t_b, t_b + spec.ramp):
            if min(t_span) < b < max(t_span):
                stops.append(b)
    stops = sorted(set(stops), reverse=t_span[1] < t_span[0])
    y = np.concatenate([np.asarray(z0, dtype=float), [0.0]])
    for a, b in zip(stops[:-1], stops[1:]):
        y = solve_ivp(rhs, (a, b), y, method="DOP853", rtol=rtol, atol=atol).y[:, -1]
    dH = eval_hamiltonian(y[:4], mu) - eval_hamiltonian(z0, mu)
    q = eps * y[4]
    return {"delta_H": float(dH), "integral": float(q), "error": float(abs(dH - q))}


# ---------------------------------------------------------------------------
# eps^2 scaling


@dataclass
class ScalingReport:
    eps: np.ndarray
    delta_I: np.ndarray
    delta_theta: np.ndarray
    S_I: float
    S_theta: float
    err_I: np.ndarray
    err_theta: np.ndarray
    slope_I: float
    slope_theta: float
    slope_first_order: float
    ci_I: tuple
    ci_theta: tuple
    ci_first_order: tuple
    bookkeeping: np.ndarray = field(default_factory=lambda: np.zeros(0))
    reference: Optional[DirectTransitionResult] = None

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            if k == "reference":
                out[k] = None if v is None else v.to_dict()
                continue
            out[k] = v.tolist() if isinstance(v, np.ndarray) else (list(v) if isinstance(v, tuple) else v)
        return out


def loglog_slope(x, y, level: float = 0.95) -> tuple[float, tuple]:
    """Least-squares slope of ``log|y|`` against ``log x`` with a confidence interval."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.abs(np.asarray(y, float)))
    fit = stats.linregress(lx, ly)
    n = len(lx)
    q = stats.t.ppf(0.5 + level / 2.0, n - 2) if n > 2 else math.inf
    return float(fit.slope), (float(fit.slope - q * fit.stderr), float(fit.slope + q * fit.stderr))


def scaling_study(
    cp: ChannelPoint,
    spec: PerturbationSpec,
    eps_grid: Sequence[float],
    family: OrbitFamily,
    S_I: float,
    S_theta: float,
    **kw,
) -> ScalingReport:
    """
    Direct transitions over ``eps_grid`` compared with ``eps S``; fitted
    log-log slopes of the remainders (2 expected) and of ``|Delta I|``
    (1 expected).
    """
    eps = np.asarray(sorted(eps_grid), dtype=float)
    if len(eps) < 4:
        raise ValueError("scaling study needs at least four eps values")
    orbits = OrbitProvider(family, cp.orbit_u)
    ref = direct_transition(cp, spec, 0.0, family, orbits=orbits, **kw)
    shift = ref.Theta_inner - ref.Theta_minus
    dI, dth, book = [], [], []
    for e in eps:
        try:
            r = direct_transition(cp, spec, float(e), family, phase_shift_reference=shift, orbits=orbits, **kw)
        except Exception as exc:  # noqa: BLE001
            raise ScalingError(f"direct transition failed at eps={e}: {exc}", float(e)) from exc
        dI.append(r.delta_I)
        dth.append(r.delta_theta)
        book.append(r.energy_bookkeeping_error)
    dI, dth = np.array(dI), np.array(dth)
    eI = np.abs(dI - eps * S_I)
    eth = np.abs(dth - eps * S_theta)
    sI, ciI = loglog_slope(eps, eI)
    sth, cith = loglog_slope(eps, eth)
    s1, ci1 = loglog_slope(eps, dI)
    return ScalingReport(eps, dI, dth, S_I, S_theta, eI, eth, sI, sth, s1, ciI, cith, ci1, np.array(book), ref)


# ---------------------------------------------------------------------------
# Gronwall bound


@dataclass
class GronwallCheck:
    C0: float
    C1: float
    c: float
    K: float
    rho0: float
    k: float
    eps: np.ndarray
    horizons: np.ndarray
    deviations: np.ndarray
    bounds: np.ndarray
    holds: np.ndarray

    @property
    def passed(self) -> bool:
        return bool(np.all(self.holds))

    def to_dict(self) -> dict:
        out = {}
        for k, v in self.__dict__.items():
            out[k] = v.tolist() if isinstance(v, np.ndarray) else v
        out["passed"] = self.passed
        return out


def lipschitz_estimate(z0, t_span, params, n: int = 400) -> float:
    """``sup ||D X0||`` (spectral norm) sampled along the unperturbed trajectory."""
    mu = _mu(params)
    tr = integrate(z0, t_span, mu)
    ts = np.linspace(t_span[0], t_span[1], n)
    return float(max(np.linalg.norm(vector_field_jacobian(tr(t), mu), 2) for t in ts))


def gronwall_check(
    z0,
    t0: float,
    spec: PerturbationSpec,
    eps_grid: Sequence[float],
    params,
    *,
    rho0: float = 0.5,
    c: float = 1.0,
    n_samples: int = 400,
) -> GronwallCheck:
    """
    Integrate the unperturbed and perturbed systems from ``z0`` at ``t0``
    and record the largest deviation over ``[t0, t0 + k ln(1/eps)]`` with
    ``k = (1 - rho0)/C0``, against the bound ``K eps^rho0``,
    ``K = c + C1/C0``.
    """
    mu = _mu(params)
    eps = np.asarray(eps_grid, dtype=float)
    positive = eps[eps > 0]
    T_max = max(math.log(1.0 / e) for e in positive) if len(positive) else 1.0
    # C0 from a generous window, then the horizon it implies
    C0 = lipschitz_estimate(z0, (t0, t0 + max(T_max, 1.0)), mu, n_samples)
    C1 = perturbation_bound(spec)
    k = (1.0 - rho0) / C0
    K = c + C1 / C0
    hor, dev, bnd, ok = [], [], [], []
    for e in eps:
        H = k * math.log(1.0 / e) if e > 0 else k
        ts = np.linspace(t0, t0 + H, n_samples)
        a = integrate(z0, (t0, t0 + H), mu, t_eval=ts)
        b = integrate(z0, (t0, t0 + H), mu, spec.with_epsilon(float(e)), t_eval=ts)
        d = float(np.max(np.linalg.norm(a.y[:4] - b.y[:4], axis=0)))
        B = K * e**rho0
        hor.append(H)
        dev.append(d)
        bnd.append(B)
        ok.append(d < B if e > 0 else d == 0.0)
    return GronwallCheck(C0, C1, c, K, rho0, k, eps, np.array(hor), np.array(dev), np.array(bnd), np.array(ok))


def deviation_slope(z0, t0: float, t1: float, spec: PerturbationSpec, eps_grid, params) -> float:
    """Log-log slope of the deviation at a fixed time against eps (1 expected)."""
    mu = _mu(params)
    za = integrate(z0, (t0, t1), mu, dense_output=False).y_final
    devs = []
    for e in eps_grid:
        zb = integrate(z0, (t0, t1), mu, spec.with_epsilon(float(e)), dense_output=False).y_final
        devs.append(np.linalg.norm(zb - za))
    return loglog_slope(eps_grid, devs)[0]
