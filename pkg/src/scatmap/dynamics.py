"""
Planar circular restricted three-body problem in Hamiltonian form.

Phase-space points are ``z = (p1, p2, q1, q2)`` in the rotating frame with the
heavier primary (mass ``1 - mu``) at ``(mu, 0)`` and the lighter one at
``(-1 + mu, 0)``.  The unperturbed flow is ``dz/dt = J grad H0(z)``; a
perturbation ``X1(z, t)`` enters as ``X0 + eps * X1``.  ``X1`` is always stored
and evaluated without the ``eps`` factor.

The integrators wrap scipy's DOP853 with dense output and a near-collision
guard.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional, Sequence

import numpy as np
from scipy.integrate import OdeSolution, solve_ivp
from scipy.optimize import brentq

EARTH_MOON_MU = 0.0121505856
COLLISION_RADIUS = 1e-3
DEFAULT_RTOL = 1e-12
DEFAULT_ATOL = 1e-12

# J in (p, q) ordering: dp/dt = -dH/dq, dq/dt = dH/dp
J = np.array(
    [
        [0.0, 0.0, -1.0, 0.0],
        [0.0, 0.0, 0.0, -1.0],
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
    ]
)


class CollisionError(ValueError):
    """State coincides with, or came too close to, one of the primaries."""


class EquilibriumError(RuntimeError):
    """Root finding or spectral classification of an equilibrium failed."""


class IntegrationError(RuntimeError):
    """The integrator failed (step-size underflow, missing event, ...)."""


class PhaseState(NamedTuple):
    p1: float
    p2: float
    q1: float
    q2: float


class ExtendedState(NamedTuple):
    state: PhaseState
    t: float


@dataclass(frozen=True)
class SystemParams:
    mu: float = EARTH_MOON_MU

    def __post_init__(self):
        if not (0.0 < self.mu <= 0.5):
            raise ValueError(f"mass ratio must lie in (0, 1/2], got {self.mu}")


def _mu(params) -> float:
    return params.mu if isinstance(params, SystemParams) else float(params)


def primary_distances(z, params) -> tuple[float, float]:
    mu = _mu(params)
    q1, q2 = z[2], z[3]
    r1 = math.hypot(q1 - mu, q2)
    r2 = math.hypot(q1 + 1.0 - mu, q2)
    return r1, r2


def _check_domain(r1: float, r2: float) -> None:
    if r1 == 0.0 or r2 == 0.0:
        raise CollisionError("state coincides with a primary")


def effective_potential(q1: float, q2: float, params) -> float:
    mu = _mu(params)
    r1 = math.hypot(q1 - mu, q2)
    r2 = math.hypot(q1 + 1.0 - mu, q2)
    _check_domain(r1, r2)
    return 0.5 * (q1 * q1 + q2 * q2) + (1.0 - mu) / r1 + mu / r2


def eval_hamiltonian(z, params) -> float:
    """H0 = ((p1 + q2)^2 + (p2 - q1)^2) / 2 - V(q1, q2)."""
    p1, p2, q1, q2 = (float(c) for c in z)
    u = p1 + q2
    v = p2 - q1
    return 0.5 * (u * u + v * v) - effective_potential(q1, q2, params)


def _potential_derivatives(q1: float, q2: float, mu: float):
    a = q1 - mu
    b = q1 + 1.0 - mu
    r1sq = a * a + q2 * q2
    r2sq = b * b + q2 * q2
    r1 = math.sqrt(r1sq)
    r2 = math.sqrt(r2sq)
    _check_domain(r1, r2)
    c1 = (1.0 - mu) / (r1sq * r1)
    c2 = mu / (r2sq * r2)
    vq1 = q1 - c1 * a - c2 * b
    vq2 = q2 - (c1 + c2) * q2
    return vq1, vq2, a, b, r1sq, r2sq, c1, c2


def hamiltonian_gradient(z, params) -> np.ndarray:
    """Gradient of H0 in (p1, p2, q1, q2) order."""
    mu = _mu(params)
    p1, p2, q1, q2 = (float(c) for c in z)
    vq1, vq2, *_ = _potential_derivatives(q1, q2, mu)
    u = p1 + q2
    v = p2 - q1
    return np.array([u, v, -v - vq1, u - vq2])


def eval_vector_field(z, params) -> np.ndarray:
    """X0(z) = J grad H0(z), with analytic derivatives."""
    mu = _mu(params)
    p1, p2, q1, q2 = (float(c) for c in z)
    vq1, vq2, *_ = _potential_derivatives(q1, q2, mu)
    u = p1 + q2
    v = p2 - q1
    # dH/dq1 = -v - Vq1, dH/dq2 = u - Vq2
    return np.array([v + vq1, -u + vq2, u, v])


def vector_field_jacobian(z, params) -> np.ndarray:
    """D X0(z), the 4x4 linearization of the unperturbed field."""
    mu = _mu(params)
    _, _, q1, q2 = (float(c) for c in z)
    _, _, a, b, r1sq, r2sq, c1, c2 = _potential_derivatives(q1, q2, mu)
    # second derivatives of the effective potential
    v11 = 1.0 - c1 * (1.0 - 3.0 * a * a / r1sq) - c2 * (1.0 - 3.0 * b * b / r2sq)
    v22 = 1.0 - c1 * (1.0 - 3.0 * q2 * q2 / r1sq) - c2 * (1.0 - 3.0 * q2 * q2 / r2sq)
    v12 = 3.0 * c1 * a * q2 / r1sq + 3.0 * c2 * b * q2 / r2sq
    return np.array(
        [
            [0.0, 1.0, -1.0 + v11, v12],
            [-1.0, 0.0, v12, -1.0 + v22],
            [1.0, 0.0, 0.0, 1.0],
            [0.0, 1.0, -1.0, 0.0],
        ]
    )


def rotating_velocity(z) -> tuple[float, float]:
    """(dq1/dt, dq2/dt) = (p1 + q2, p2 - q1)."""
    return float(z[0] + z[3]), float(z[1] - z[2])


def state_at_rest(q1: float, q2: float) -> np.ndarray:
    """Phase point with zero rotating-frame velocity at (q1, q2)."""
    return np.array([-q2, q1, q1, q2], dtype=float)


# ---------------------------------------------------------------------------
# perturbations


def smooth_step(x: float) -> float:
    """C-infinity transition from 0 (x <= 0) to 1 (x >= 1)."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    a = math.exp(-1.0 / x)
    b = math.exp(-1.0 / (1.0 - x))
    return a / (a + b)


PERTURBATION_KINDS = (
    "zero",
    "constant-thrust-windowed",
    "velocity-dissipation",
    "hamiltonian-gradient",
    "user-callback",
)


@dataclass(frozen=True)
class PerturbationSpec:
    """
    Description of the perturbing field X1(z, t) (without the eps factor).

    Parameters
    ----------
    kind : str
        One of ``PERTURBATION_KINDS``.
    epsilon : float
        Perturbation size. Callers multiply X1 by it; ``eval_perturbation``
        never does.
    direction, magnitude
        Thrust acceleration ``magnitude * direction`` (rotating frame) for
        ``constant-thrust-windowed``.
    window : (t_a, t_b) or None
        Full-strength interval. With a window the field is multiplied by a
        C-infinity bump that ramps over ``ramp`` time units on each side and
        vanishes outside ``[t_a - ramp, t_b + ramp]``. Required for the
        thrust kind, optional for the others.
    kappa : float
        Coefficient of ``velocity-dissipation``.
    h1, h1_grad : callable
        ``h1(z, t) -> float`` and ``h1_grad(z, t) -> 4-vector`` for the
        ``hamiltonian-gradient`` kind.
    callback : callable
        ``callback(z, t) -> 4-vector`` for ``user-callback``.
    """

    kind: str = "zero"
    epsilon: float = 0.0
    direction: tuple[float, float] = (1.0, 0.0)
    magnitude: float = 0.0
    window: Optional[tuple[float, float]] = None
    ramp: float = 0.05
    kappa: float = 0.0
    h1: Optional[Callable] = field(default=None, compare=False)
    h1_grad: Optional[Callable] = field(default=None, compare=False)
    callback: Optional[Callable] = field(default=None, compare=False)

    def __post_init__(self):
        if self.kind not in PERTURBATION_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}")
        if self.kind == "constant-thrust-windowed":
            if self.window is None:
                raise ValueError("windowed thrust needs a window (t_a, t_b)")
            norm = math.hypot(*self.direction)
            if abs(norm - 1.0) > 1e-12:
                raise ValueError("thrust direction must be a unit vector")
        if self.window is not None:
            t_a, t_b = self.window
            if not t_a <= t_b:
                raise ValueError("window must satisfy t_a <= t_b")
            if self.ramp <= 0.0:
                raise ValueError("ramp width must be positive (hard switches are not C1)")
        if self.kind == "hamiltonian-gradient" and self.h1_grad is None:
            raise ValueError("hamiltonian-gradient perturbation needs h1_grad")
        if self.kind == "user-callback" and self.callback is None:
            raise ValueError("user-callback perturbation needs a callback")

    def with_epsilon(self, epsilon: float) -> "PerturbationSpec":
        from dataclasses import replace

        return replace(self, epsilon=float(epsilon))

    def support(self) -> Optional[tuple[float, float]]:
        """Closed time interval outside which X1 vanishes, or None if unbounded."""
        if self.kind == "zero":
            return (0.0, 0.0)
        if self.window is None:
            return None
        return (self.window[0] - self.ramp, self.window[1] + self.ramp)

    def envelope(self, t: float) -> float:
        if self.window is None:
            return 1.0
        t_a, t_b = self.window
        return smooth_step((t - (t_a - self.ramp)) / self.ramp) * smooth_step(
            ((t_b + self.ramp) - t) / self.ramp
        )

    def to_dict(self) -> dict:
        if self.kind in ("hamiltonian-gradient", "user-callback"):
            raise ValueError(f"{self.kind} perturbations hold callables and cannot be serialized")
        return {
            "kind": self.kind,
            "epsilon": self.epsilon,
            "direction": list(self.direction),
            "magnitude": self.magnitude,
            "window": None if self.window is None else list(self.window),
            "ramp": self.ramp,
            "kappa": self.kappa,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PerturbationSpec":
        window = d.get("window")
        return cls(
            kind=d["kind"],
            epsilon=float(d.get("epsilon", 0.0)),
            direction=tuple(float(c) for c in d.get("direction", (1.0, 0.0))),
            magnitude=float(d.get("magnitude", 0.0)),
            window=None if window is None else (float(window[0]), float(window[1])),
            ramp=float(d.get("ramp", 0.05)),
            kappa=float(d.get("kappa", 0.0)),
        )


ZERO_PERTURBATION = PerturbationSpec()


def eval_perturbation(z, t: float, spec: PerturbationSpec) -> np.ndarray:
    """X1(z, t) for ``spec``, without the eps factor."""
    kind = spec.kind
    if kind == "zero":
        return np.zeros(4)
    s = spec.envelope(t)
    if s == 0.0:
        return np.zeros(4)
    if kind == "constant-thrust-windowed":
        a = spec.magnitude * s
        return np.array([a * spec.direction[0], a * spec.direction[1], 0.0, 0.0])
    if kind == "velocity-dissipation":
        xdot, ydot = rotating_velocity(z)
        k = spec.kappa * s
        return np.array([-k * xdot, -k * ydot, 0.0, 0.0])
    if kind == "hamiltonian-gradient":
        return s * (J @ np.asarray(spec.h1_grad(z, t), dtype=float))
    out = np.asarray(spec.callback(z, t), dtype=float)
    return s * out


def perturbation_jacobian(z, t: float, spec: PerturbationSpec, h: float = 1e-7) -> np.ndarray:
    """``D_z X1(z, t)`` (no eps); closed form for the built-in kinds, central differences otherwise."""
    kind = spec.kind
    if kind in ("zero", "constant-thrust-windowed"):
        return np.zeros((4, 4))
    s = spec.envelope(t)
    if s == 0.0:
        return np.zeros((4, 4))
    if kind == "velocity-dissipation":
        k = spec.kappa * s
        # xdot = p1 + q2, ydot = p2 - q1
        return np.array([[-k, 0.0, 0.0, -k], [0.0, -k, k, 0.0], [0.0] * 4, [0.0] * 4])
    z = np.asarray(z, dtype=float)
    D = np.empty((4, 4))
    for j in range(4):
        e = np.zeros(4)
        e[j] = h
        D[:, j] = (eval_perturbation(z + e, t, spec) - eval_perturbation(z - e, t, spec)) / (2.0 * h)
    return D


def perturbation_bound(spec: PerturbationSpec, region_speed: float = 2.0) -> float:
    """Upper bound C1 >= |X1| for specs with a closed-form bound."""
    if spec.kind == "zero":
        return 0.0
    if spec.kind == "constant-thrust-windowed":
        return abs(spec.magnitude)
    if spec.kind == "velocity-dissipation":
        return abs(spec.kappa) * region_speed
    raise ValueError(f"no closed-form bound for {spec.kind}")


# ---------------------------------------------------------------------------
# equilibria


def _dV_dq1_axis(q1: float, mu: float) -> float:
    a = q1 - mu
    b = q1 + 1.0 - mu
    return q1 - (1.0 - mu) * a / abs(a) ** 3 - mu * b / abs(b) ** 3


def find_collinear_equilibria(params) -> dict[str, np.ndarray]:
    """
    Locate L1 (between the primaries), L2 (beyond the lighter primary) and
    L3 (beyond the heavier one) on the q1-axis.

    Returns a dict ``{"L1": z, "L2": z, "L3": z}`` with zero-velocity momenta.
    """
    mu = _mu(params)
    SystemParams(mu)
    heavy = mu
    light = -1.0 + mu
    pad = 1e-9
    brackets = {
        "L1": (light + pad, heavy - pad),
        "L2": (light - 2.0, light - pad),
        "L3": (heavy + pad, heavy + 2.0),
    }
    out = {}
    for name, (lo, hi) in brackets.items():
        f_lo = _dV_dq1_axis(lo, mu)
        f_hi = _dV_dq1_axis(hi, mu)
        if f_lo * f_hi > 0:
            raise EquilibriumError(f"{name}: no sign change on bracket [{lo}, {hi}]")
        try:
            x = brentq(_dV_dq1_axis, lo, hi, args=(mu,), xtol=1e-15, rtol=1e-15, maxiter=500)
        except RuntimeError as exc:
            raise EquilibriumError(f"{name}: root finder failed on bracket [{lo}, {hi}]") from exc
        # polish: Newton on the closed-form derivative
        for _ in range(3):
            d2 = vector_field_jacobian(state_at_rest(x, 0.0), mu)[0, 2] + 1.0
            step = _dV_dq1_axis(x, mu) / d2
            if abs(step) < 1e-17:
                break
            x -= step
        out[name] = state_at_rest(x, 0.0)
    return out


def find_triangular_equilibria(params) -> dict[str, np.ndarray]:
    mu = _mu(params)
    q1 = mu - 0.5
    q2 = math.sqrt(3.0) / 2.0
    return {"L4": state_at_rest(q1, q2), "L5": state_at_rest(q1, -q2)}


@dataclass(frozen=True)
class EquilibriumSpectrum:
    rate: float  # lambda > 0
    frequency: float  # omega > 0
    eigenvalues: np.ndarray
    eigvecs: dict  # keys: "unstable", "stable", "center" (complex, for +i omega)

    @property
    def lam(self) -> float:
        return self.rate

    @property
    def omega(self) -> float:
        return self.frequency


def classify_equilibrium(z_eq, params, tol: float = 1e-9) -> EquilibriumSpectrum:
    """
    Saddle-center check of the linearization at an equilibrium.

    Raises
    ------
    EquilibriumError
        If the spectrum is not of the form {+lam, -lam, +i omega, -i omega}.
    """
    A = vector_field_jacobian(z_eq, params)
    w, V = np.linalg.eig(A)
    real = [i for i in range(4) if abs(w[i].imag) <= tol * max(1.0, abs(w[i]))]
    imag = [i for i in range(4) if abs(w[i].real) <= tol * max(1.0, abs(w[i]))]
    if len(real) != 2 or len(imag) != 2:
        raise EquilibriumError(f"not saddle-center: eigenvalues {w}")
    lam_pos = max(real, key=lambda i: w[i].real)
    lam_neg = min(real, key=lambda i: w[i].real)
    om_pos = max(imag, key=lambda i: w[i].imag)
    lam = w[lam_pos].real
    omega = w[om_pos].imag
    if lam <= 0 or omega <= 0:
        raise EquilibriumError(f"not saddle-center: eigenvalues {w}")
    return EquilibriumSpectrum(
        rate=float(lam),
        frequency=float(omega),
        eigenvalues=w,
        eigvecs={
            "unstable": np.real(V[:, lam_pos]),
            "stable": np.real(V[:, lam_neg]),
            "center": V[:, om_pos],
        },
    )


def characteristic_polynomial_roots(z_eq, params) -> np.ndarray:
    """Roots of det(A - s I); an independent route to the equilibrium spectrum."""
    mu = _mu(params)
    A = vector_field_jacobian(z_eq, mu)
    # planar restricted problem: s^4 + (4 - Vxx - Vyy) s^2 + (Vxx Vyy - Vxy^2) = 0
    # where V.. are second derivatives of the effective potential
    vxx = A[0, 2] + 1.0
    vyy = A[1, 3] + 1.0
    vxy = A[0, 3]
    return np.roots([1.0, 0.0, 4.0 - vxx - vyy, 0.0, vxx * vyy - vxy * vxy])


# ---------------------------------------------------------------------------
# integration


@dataclass
class Trajectory:
    """Dense integration result; ``y`` columns are states at ``t``."""

    t: np.ndarray
    y: np.ndarray
    sol: Optional[object]
    t_events: list
    y_events: list
    status: int
    nfev: int = 0

    def __call__(self, t):
        if self.sol is None:
            raise ValueError("trajectory was integrated without dense output")
        return self.sol(t)

    @property
    def t_final(self) -> float:
        return float(self.t[-1])

    @property
    def y_final(self) -> np.ndarray:
        return self.y[:, -1]


def _collision_events(mu: float, radius: float):
    def ev1(t, y):
        return math.hypot(y[2] - mu, y[3]) - radius

    def ev2(t, y):
        return math.hypot(y[2] + 1.0 - mu, y[3]) - radius

    ev1.terminal = True
    ev2.terminal = True
    ev1.direction = -1
    ev2.direction = -1
    return [ev1, ev2]


def make_rhs(params, spec: Optional[PerturbationSpec] = None, time_offset: float = 0.0):
    """Right-hand side ``f(t, z)`` of X0 + eps X1 for scipy solvers."""
    mu = _mu(params)
    if spec is None or spec.kind == "zero" or spec.epsilon == 0.0:

        def rhs(t, z):
            return eval_vector_field(z, mu)

        return rhs
    eps = spec.epsilon

    def rhs(t, z):
        return eval_vector_field(z, mu) + eps * eval_perturbation(z, t + time_offset, spec)

    return rhs


def breakpoints(spec: Optional[PerturbationSpec]) -> tuple:
    """Times where the window envelope changes regime (ramp ends)."""
    if spec is None or spec.window is None or spec.kind == "zero" or spec.epsilon == 0.0:
        return ()
    t_a, t_b = spec.window
    return (t_a - spec.ramp, t_a, t_b, t_b + spec.ramp)


def _solve(
    rhs,
    t_span,
    y0,
    mu,
    rtol,
    atol,
    events,
    dense_output,
    t_eval=None,
    collision_radius=COLLISION_RADIUS,
    max_step=np.inf,
    breaks=(),
) -> Trajectory:
    # Restart the integrator at each envelope breakpoint: a step straddling a
    # ramp end is mis-estimated by the embedded error control.
    t0, t1 = float(t_span[0]), float(t_span[1])
    fwd = t1 >= t0
    inner = sorted({b for b in breaks if min(t0, t1) < b < max(t0, t1)}, reverse=not fwd)
    stops = [t0] + inner + [t1]
    guards = _collision_events(mu, collision_radius)
    user_events = list(events or [])
    n_user = len(user_events)
    y = np.asarray(y0, dtype=float)
    ts, ys, pieces = [], [], []
    t_ev = [[] for _ in range(n_user)]
    y_ev = [[] for _ in range(n_user)]
    status, nfev = 0, 0
    split = len(stops) > 2
    # split runs evaluate t_eval on the stitched dense output afterwards
    want_dense = dense_output or (split and t_eval is not None)
    for a, b in zip(stops[:-1], stops[1:]):
        sol = solve_ivp(
            rhs,
            (a, b),
            y,
            method="DOP853",
            rtol=rtol,
            atol=atol,
            events=user_events + guards,
            dense_output=want_dense,
            t_eval=None if split else t_eval,
            max_step=max_step,
        )
        nfev += sol.nfev
        if sol.status == -1:
            raise IntegrationError(f"integration failed: {sol.message}")
        for j in (n_user, n_user + 1):
            if len(sol.t_events[j]):
                raise CollisionError(
                    f"trajectory came within {collision_radius} of primary {j - n_user + 1} "
                    f"at t = {sol.t_events[j][0]:.6g}"
                )
        for j in range(n_user):
            t_ev[j].extend(sol.t_events[j])
            y_ev[j].extend(sol.y_events[j])
        skip = 1 if ts else 0
        ts.append(sol.t[skip:])
        ys.append(sol.y[:, skip:])
        if want_dense:
            pieces.append(sol.sol)
        status = sol.status
        if status == 1:
            break
        y = sol.y[:, -1]
    dense = None
    if want_dense:
        if len(pieces) == 1:
            dense = pieces[0]
        else:
            seg = [pieces[0].ts[0]]
            interps = []
            for p in pieces:
                seg.extend(p.ts[1:])
                interps.extend(p.interpolants)
            dense = OdeSolution(np.array(seg), interps)
    t_out = np.concatenate(ts)
    y_out = np.concatenate(ys, axis=1)
    if split and t_eval is not None:
        te = np.asarray(t_eval, dtype=float)
        lo, hi = sorted((t0, t_out[-1]))
        t_out = te[(te >= lo) & (te <= hi)]
        y_out = dense(t_out) if len(t_out) else np.empty((len(y), 0))
    return Trajectory(
        t=t_out,
        y=y_out,
        sol=dense if dense_output else None,
        t_events=[np.array(v) for v in t_ev],
        y_events=[np.array(v).reshape(-1, len(y)) for v in y_ev],
        status=status,
        nfev=nfev,
    )


def integrate(
    z0,
    t_span,
    params,
    spec: Optional[PerturbationSpec] = None,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    events: Optional[Sequence[Callable]] = None,
    dense_output: bool = True,
    t_eval=None,
    require_event: bool = False,
) -> Trajectory:
    """
    Integrate ``dz/dt = X0(z) + eps X1(z, t)`` over ``t_span``.

    ``t_span`` may run backwards. Events follow the scipy convention
    (``terminal`` and ``direction`` attributes); event times are located on
    the dense output to a few ulps.

    Raises
    ------
    CollisionError
        If the trajectory enters the collision guard around either primary.
    IntegrationError
        On step-size underflow, or when ``require_event`` is set and no event
        fired.
    """
    mu = _mu(params)
    rhs = make_rhs(mu, spec)
    traj = _solve(rhs, tuple(t_span), z0, mu, rtol, atol, events, dense_output, t_eval, breaks=breakpoints(spec))
    if require_event and not any(len(te) for te in traj.t_events):
        raise IntegrationError(f"event not found in span {tuple(t_span)}")
    return traj


def flow(z0, t: float, params, spec=None, t0: float = 0.0, **kw) -> np.ndarray:
    """Phi^t(z0) (from time t0 to t0 + t)."""
    if t == 0.0:
        return np.array(z0, dtype=float)
    traj = integrate(z0, (t0, t0 + t), params, spec, dense_output=False, **kw)
    return traj.y_final.copy()


def _variational_rhs(mu: float, spec: Optional[PerturbationSpec] = None):
    if spec is None or spec.kind == "zero" or spec.epsilon == 0.0:

        def rhs(t, y):
            z = y[:4]
            A = vector_field_jacobian(z, mu)
            Phi = y[4:].reshape(4, 4)
            return np.concatenate([eval_vector_field(z, mu), (A @ Phi).ravel()])

        return rhs
    eps = spec.epsilon

    def rhs(t, y):
        z = y[:4]
        A = vector_field_jacobian(z, mu) + eps * perturbation_jacobian(z, t, spec)
        Phi = y[4:].reshape(4, 4)
        return np.concatenate([eval_vector_field(z, mu) + eps * eval_perturbation(z, t, spec), (A @ Phi).ravel()])

    return rhs


def integrate_variational(
    z0,
    t_span,
    params,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    events=None,
    dense_output: bool = True,
    stm0=None,
    spec: Optional[PerturbationSpec] = None,
) -> Trajectory:
    """
    Integrate the flow together with its state-transition matrix
    (unperturbed unless ``spec`` is given).

    The returned ``y`` rows 4: hold ``DPhi^{t - t0}`` flattened row-major;
    use ``stm_of`` to unpack.
    """
    mu = _mu(params)
    Phi0 = np.eye(4) if stm0 is None else np.asarray(stm0, dtype=float)
    y0 = np.concatenate([np.asarray(z0, dtype=float), Phi0.ravel()])
    if t_span[0] == t_span[1]:
        return Trajectory(
            t=np.array([t_span[0]]), y=y0[:, None], sol=None, t_events=[], y_events=[], status=0
        )
    user_events = []
    for ev in events or []:
        user_events.append(ev)
    return _solve(
        _variational_rhs(mu, spec), tuple(t_span), y0, mu, rtol, atol, user_events, dense_output, breaks=breakpoints(spec)
    )


def stm_of(y) -> np.ndarray:
    return np.asarray(y[4:20]).reshape(4, 4)


def _adjoint_rhs(mu: float, ncov: int):
    def rhs(t, y):
        z = y[:4]
        A = vector_field_jacobian(z, mu)
        W = y[4 : 4 + 4 * ncov].reshape(ncov, 4)
        return np.concatenate([eval_vector_field(z, mu), (-(W @ A)).ravel()])

    return rhs


def transport_covectors(
    z1,
    covectors,
    t1: float,
    t0: float,
    params,
    *,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
    dense_output: bool = False,
) -> Trajectory:
    """
    Adjoint transport of row covectors given at the point ``z1`` (time ``t1``)
    to time ``t0``: ``w(t0) = w(t1) DPhi^{t1 - t0}(z(t0))``.

    The base state is integrated alongside, so ``z1`` is the state at ``t1``.
    """
    mu = _mu(params)
    W = np.atleast_2d(np.asarray(covectors, dtype=float))
    y1 = np.concatenate([np.asarray(z1, dtype=float), W.ravel()])
    return _solve(_adjoint_rhs(mu, W.shape[0]), (t1, t0), y1, mu, rtol, atol, None, dense_output)


def section_event(index: int = 3, value: float = 0.0, direction: int = 0, terminal: bool = True):
    """Event g(z) = z[index] - value, with scipy attributes set."""

    def ev(t, y):
        return y[index] - value

    ev.terminal = terminal
    ev.direction = direction
    return ev
