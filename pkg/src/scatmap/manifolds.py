"""
Stable and unstable manifolds of Lyapunov orbits, their section cuts,
homoclinic/heteroclinic channel points and asymptotic phases.

Fibers are linearized: a ray leaves ``gamma(theta) + sign * delta * v(theta)``
with ``v`` the transported Floquet vector, so its footpoint is
``gamma(theta)`` up to ``O(delta^2)``.  Unstable rays run forward in time,
stable rays backward.

Asymptotic phases are read off where the trajectory is within ``d_stop`` of
the orbit, by the linear Floquet splitting (``LyapunovOrbit.linear_phase``),
and transported back with the constant frequency.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.interpolate import CubicSpline

from .dynamics import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    CollisionError,
    eval_hamiltonian,
    eval_vector_field,
    hamiltonian_gradient,
    integrate,
    integrate_variational,
    stm_of,
)
from .periodic_orbits import TWO_PI, LyapunovOrbit, OrbitFamily, correct_orbit, orbit_from_dict, orbit_to_dict

BRANCHES = ("u", "s")


class ManifoldConvergenceError(RuntimeError):
    """A trajectory claimed to lie on a manifold did not approach the orbit."""


class NoIntersectionError(RuntimeError):
    """Section cuts do not intersect transversally."""

    def __init__(self, msg: str, min_gap: float = math.nan):
        super().__init__(msg)
        self.min_gap = min_gap


def reflect(z) -> np.ndarray:
    """Time-reversal symmetry ``(p1, p2, q1, q2) -> (-p1, p2, q1, -q2)``."""
    z = np.asarray(z, dtype=float)
    return np.array([-z[0], z[1], z[2], -z[3]])


def wrap_angle(a: float) -> float:
    """Representative of ``a`` in ``(-pi, pi]``."""
    return float(math.remainder(a, TWO_PI))


# ---------------------------------------------------------------------------
# sections


@dataclass(frozen=True)
class SectionSpec:
    """
    Poincare section ``z[index] = value``.

    Only crossings in ``direction`` (+1: increasing, -1: decreasing, 0: both)
    with ``sign * (z[constraint_index] - constraint_value) > 0`` count; the
    ``crossing``-th such crossing is used.  ``coords`` are the two state
    indices used as section coordinates.
    """

    index: int = 3
    value: float = 0.0
    direction: int = 1
    constraint_index: int = 2
    constraint_value: float = 0.0
    constraint_sign: int = 1
    coords: tuple[int, int] = (2, 0)
    crossing: int = 2

    def accepts(self, y) -> bool:
        return self.constraint_sign * (y[self.constraint_index] - self.constraint_value) > 0.0

    def event(self, time_sign: float = 1.0):
        idx, val = self.index, self.value

        def ev(t, y):
            return y[idx] - val

        ev.terminal = False
        # a backward run sees the crossing with the opposite slope in t
        ev.direction = self.direction * time_sign
        return ev

    def project(self, z) -> np.ndarray:
        return np.array([z[self.coords[0]], z[self.coords[1]]])

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "value": self.value,
            "direction": self.direction,
            "constraint_index": self.constraint_index,
            "constraint_value": self.constraint_value,
            "constraint_sign": self.constraint_sign,
            "coords": list(self.coords),
            "crossing": self.crossing,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SectionSpec":
        d = dict(d)
        d["coords"] = tuple(d["coords"])
        return cls(**d)


def interior_section(mu: float, crossing: int = 2) -> SectionSpec:
    """``q2 = 0`` upward, beyond the heavier primary (``q1 > mu``)."""
    return SectionSpec(3, 0.0, 1, 2, mu, 1, (2, 0), crossing)


def moon_section(mu: float, q2_sign: int = 1, crossing: int = 1) -> SectionSpec:
    """``q1 = -1 + mu`` (through the lighter primary) on one side of the axis."""
    return SectionSpec(2, -1.0 + mu, 0, 3, 0.0, q2_sign, (3, 1), crossing)


@dataclass(frozen=True)
class Region:
    """Bounding box on ``(q1, q2)``; rays leaving it are dropped."""

    q1: tuple[float, float] = (-1.6, 1.6)
    q2: tuple[float, float] = (-1.6, 1.6)

    def event(self):
        q1lo, q1hi = self.q1
        q2lo, q2hi = self.q2

        def ev(t, y):
            return min(y[2] - q1lo, q1hi - y[2], y[3] - q2lo, q2hi - y[3])

        ev.terminal = True
        ev.direction = -1
        return ev


# ---------------------------------------------------------------------------
# fibers


@dataclass
class FiberRay:
    orbit: LyapunovOrbit
    theta: float
    branch: str
    sign: int
    delta: float
    z0: np.ndarray


def fiber_initial_condition(orbit: LyapunovOrbit, theta: float, branch: str, delta: float, sign: int = 1) -> FiberRay:
    """Start of a linearized fiber ray at phase ``theta``."""
    if branch not in BRANCHES:
        raise ValueError(f"branch must be one of {BRANCHES}")
    frame = orbit.frame_at(theta)
    v = frame[:, 3] if branch == "u" else frame[:, 2]
    z0 = orbit.state_at(theta) + sign * delta * v
    return FiberRay(orbit, float(theta), branch, int(sign), float(delta), z0)


def _ray_start(orbit, theta, branch, sign, delta):
    return fiber_initial_condition(orbit, theta, branch, delta, sign).z0


def _ray_start_derivative(orbit, theta, branch, sign, delta, h=1e-6):
    zp = _ray_start(orbit, theta + h, branch, sign, delta)
    zm = _ray_start(orbit, theta - h, branch, sign, delta)
    return (zp - zm) / (2.0 * h)


def _pick_crossing(t_ev, y_ev, section: SectionSpec):
    n = 0
    for t, y in zip(t_ev, y_ev):
        if section.accepts(y):
            n += 1
            if n == section.crossing:
                return float(t), np.array(y)
    return None


def ray_crossing(
    z0,
    branch: str,
    section: SectionSpec,
    params,
    *,
    t_max: float = 30.0,
    chunk: float = 6.0,
    region: Optional[Region] = None,
    variational: bool = False,
):
    """
    Integrate from ``z0`` (forward for ``u``, backward for ``s``) to the
    requested section crossing.

    Returns ``(t, y)`` with ``y`` of length 4, or 20 with the STM appended
    when ``variational`` is set; ``None`` if the ray leaves the region or
    no crossing occurs before ``t_max``.
    """
    s = 1.0 if branch == "u" else -1.0
    region = region or Region()
    ev = section.event(s)
    evr = region.event()
    t0 = 0.0
    y = np.asarray(z0, dtype=float)
    if variational and y.size == 4:
        y = np.concatenate([y, np.eye(4).ravel()])
    found = 0
    while abs(t0) < t_max:
        t1 = t0 + s * min(chunk, t_max - abs(t0))
        if variational:
            tr = integrate_variational(y[:4], (t0, t1), params, events=[ev, evr], dense_output=False, stm0=stm_of(y))
        else:
            tr = integrate(y, (t0, t1), params, events=[ev, evr], dense_output=False)
        for t, yy in zip(tr.t_events[0], tr.y_events[0]):
            if section.accepts(yy):
                found += 1
                if found == section.crossing:
                    return float(t), np.array(yy)
        if len(tr.t_events[1]):
            return None
        t0, y = t1, tr.y_final
    return None


def _crossing_sensitivity(y, section: SectionSpec, params, dz0) -> np.ndarray:
    """Section-coordinate derivative of the crossing point along ``dz0``."""
    z = y[:4]
    Phi = stm_of(y)
    f = eval_vector_field(z, params)
    dz = Phi @ dz0
    dt = -dz[section.index] / f[section.index]
    dzc = dz + f * dt
    return section.project(dzc)


# ---------------------------------------------------------------------------
# cuts


@dataclass
class SectionCut:
    """
    One-dimensional cut of a manifold branch with a section at fixed energy.

    ``thetas`` are departure phases of the rays, ``points`` their crossing
    states and ``times`` the signed times of flight.  Rays that left the
    region or never crossed are listed in ``lost``.
    """

    orbit: LyapunovOrbit
    branch: str
    sign: int
    delta: float
    section: SectionSpec
    thetas: np.ndarray
    points: np.ndarray
    times: np.ndarray
    lost: list = field(default_factory=list)
    closed: bool = True

    @property
    def energy(self) -> float:
        return self.orbit.energy

    @property
    def curve(self) -> np.ndarray:
        """Section coordinates of the cut points, shape ``(n, 2)``."""
        return np.array([self.section.project(p) for p in self.points])

    def to_dict(self) -> dict:
        """Cut data without the orbit (stored separately)."""
        return {
            "branch": self.branch,
            "sign": int(self.sign),
            "delta": float(self.delta),
            "section": self.section.to_dict(),
            "thetas": [float(x) for x in self.thetas],
            "points": [[float(x) for x in p] for p in self.points],
            "times": [float(x) for x in self.times],
            "lost": [float(x) for x in self.lost],
            "closed": bool(self.closed),
        }

    @classmethod
    def from_dict(cls, d: dict, orbit: LyapunovOrbit) -> "SectionCut":
        return cls(
            orbit=orbit,
            branch=d["branch"],
            sign=int(d["sign"]),
            delta=float(d["delta"]),
            section=SectionSpec.from_dict(d["section"]),
            thetas=np.array(d["thetas"], dtype=float),
            points=np.array(d["points"], dtype=float).reshape(-1, 4),
            times=np.array(d["times"], dtype=float),
            lost=list(d["lost"]),
            closed=bool(d["closed"]),
        )

    def max_energy_error(self) -> float:
        return float(max(abs(eval_hamiltonian(p, self.orbit.mu) - self.orbit.energy) for p in self.points))

    def max_section_error(self) -> float:
        return float(np.max(np.abs(self.points[:, self.section.index] - self.section.value)))


def globalize_manifold(
    orbit: LyapunovOrbit,
    branch: str,
    section: SectionSpec,
    *,
    sign: int = 1,
    delta: float = 1e-6,
    n_rays: int = 256,
    max_gap: float = 0.02,
    max_refine: int = 4,
    region: Optional[Region] = None,
    t_max: float = 30.0,
) -> SectionCut:
    """
    Integrate a fan of fiber rays and collect their section crossings.

    The uniform phase grid is refined by bisection wherever consecutive
    crossings are more than ``max_gap`` apart in section coordinates (up to
    ``max_refine`` levels).  The cut is flagged ``closed`` when no ray was
    lost.
    """
    mu = orbit.mu

    def shoot(theta):
        z0 = _ray_start(orbit, theta, branch, sign, delta)
        try:
            res = ray_crossing(z0, branch, section, mu, t_max=t_max, region=region)
        except CollisionError:
            res = None
        return res

    thetas = list(np.linspace(0.0, TWO_PI, n_rays, endpoint=False))
    results = {th: shoot(th) for th in thetas}
    for _ in range(max_refine):
        ths = sorted(results)
        new = []
        for a, b in zip(ths, ths[1:] + [ths[0] + TWO_PI]):
            ra, rb = results[a], results[b % TWO_PI if b >= TWO_PI else b]
            if ra is None or rb is None:
                continue
            gap = np.linalg.norm(section.project(ra[1]) - section.project(rb[1]))
            if gap > max_gap:
                new.append(0.5 * (a + b) % TWO_PI)
        if not new:
            break
        for th in new:
            results[th] = shoot(th)
    ths = sorted(results)
    ok = [th for th in ths if results[th] is not None]
    lost = [th for th in ths if results[th] is None]
    return SectionCut(
        orbit=orbit,
        branch=branch,
        sign=sign,
        delta=delta,
        section=section,
        thetas=np.array(ok),
        points=np.array([results[th][1] for th in ok]),
        times=np.array([results[th][0] for th in ok]),
        lost=lost,
        closed=not lost,
    )


def mirror_cut_error(cut_u: SectionCut, cut_s: SectionCut) -> dict:
    """
    Compare the reflected unstable cut with the stable cut.

    The ray at ``theta`` is paired with the stable ray at ``-theta``.
    ``normal`` is the distance of the reflected point from the stable curve,
    measured across the local chord direction.  ``paired`` is the raw
    point-to-point mismatch, which also contains the slide along the curve
    coming from the fiber parametrization.
    """
    lookup = {round(th % TWO_PI, 12): k for k, th in enumerate(cut_s.thetas)}
    C = cut_s.curve
    n = len(C)
    normal, paired = [], []
    for th, p in zip(cut_u.thetas, cut_u.points):
        k = lookup.get(round((-th) % TWO_PI, 12))
        if k is None:
            continue
        q = cut_s.section.project(reflect(p))
        tang = C[(k + 1) % n] - C[(k - 1) % n]
        tang /= np.linalg.norm(tang)
        r = q - C[k]
        normal.append(abs(r[0] * tang[1] - r[1] * tang[0]))
        paired.append(float(np.max(np.abs(reflect(p) - cut_s.points[k]))))
    if not normal:
        raise ValueError("no mirrored ray pairs found")
    return {"normal": float(max(normal)), "paired": float(max(paired))}


# ---------------------------------------------------------------------------
# asymptotic phase


@dataclass(frozen=True)
class AsymptoticPhase:
    theta: float
    footpoint: np.ndarray
    time: float
    distance: float
    residual: float


def asymptotic_phase(
    z,
    orbit: LyapunovOrbit,
    side: str,
    *,
    d_stop: float = 1e-7,
    d_fail: float = 1e-5,
    max_periods: float = 12.0,
    samples_per_period: int = 16,
    spec=None,
    t0: float = 0.0,
) -> AsymptoticPhase:
    """
    Asymptotic phase ``theta^s`` (side ``"s"``: forward) or ``theta^u``
    (side ``"u"``: backward) of a point on the stable/unstable manifold.

    The trajectory is sampled every ``T / samples_per_period`` until it is
    within ``d_stop`` of the orbit (or until its distance starts growing
    again); the phase there, from the linear Floquet splitting, is carried
    back to ``z`` with ``-omega * t``.  A second reading a quarter period
    later gives ``residual``.

    Raises
    ------
    ManifoldConvergenceError
        If the closest approach stays above ``d_fail``.
    """
    sgn = 1.0 if side == "s" else -1.0
    T = orbit.period
    dt = T / samples_per_period
    tr = integrate(z, (t0, t0 + sgn * max_periods * T), orbit.mu, spec)
    best = None
    n = int(max_periods * samples_per_period)
    prev = math.inf
    for k in range(1, n + 1):
        t = sgn * k * dt
        zt = tr(t0 + t)
        _, d = orbit.nearest_phase(zt)
        if best is None or d < best[1]:
            best = (t, d)
        if d < d_stop or (d > 2.0 * best[1] and best[1] < d_fail):
            break
        prev = d
    t, d = best
    if d > d_fail:
        raise ManifoldConvergenceError(f"trajectory stays {d:.2e} away from the orbit")
    th, _ = orbit.linear_phase(tr(t0 + t))
    theta = (th - orbit.omega * t) % TWO_PI
    t2 = t + sgn * 0.25 * T
    residual = math.nan
    if abs(t2) <= max_periods * T:
        th2, d2 = orbit.linear_phase(tr(t0 + t2))
        if d2 < d_fail:
            residual = abs(wrap_angle(th2 - orbit.omega * t2 - theta))
    return AsymptoticPhase(
        theta=float(theta),
        footpoint=orbit.state_at(theta),
        time=float(t),
        distance=float(d),
        residual=float(residual),
    )


def min_distance_to_orbit(z, orbit: LyapunovOrbit, side: str, n_periods: float = 4.0, samples_per_period: int = 32):
    """Smallest sampled distance to ``orbit`` over ``n_periods`` forward (``s``) or backward (``u``)."""
    sgn = 1.0 if side == "s" else -1.0
    tr = integrate(z, (0.0, sgn * n_periods * orbit.period), orbit.mu)
    ts = sgn * np.linspace(0.0, n_periods * orbit.period, int(n_periods * samples_per_period) + 1)
    d = [orbit.nearest_phase(tr(t))[1] for t in ts]
    k = int(np.argmin(d))
    return float(d[k]), float(ts[k]), np.array(d), ts


# ---------------------------------------------------------------------------
# channel points


@dataclass
class ChannelPoint:
    """
    Transverse intersection of an unstable and a stable cut.

    ``theta_minus``/``theta_plus`` are the refined asymptotic phases
    ``theta^u(z0)``/``theta^s(z0)``; ``ray_theta_u``/``ray_theta_s`` the
    departure phases of the rays and ``t_u > 0``/``t_s < 0`` their signed
    flight times.  ``f_u``/``f_s`` are unit tangents at ``z0`` of the
    unstable and stable fibers through ``z0``.
    """

    z0: np.ndarray
    energy: float
    orbit_u: LyapunovOrbit
    orbit_s: LyapunovOrbit
    section: SectionSpec
    ray_theta_u: float
    ray_theta_s: float
    t_u: float
    t_s: float
    theta_minus: float
    theta_plus: float
    angle: float
    f_u: np.ndarray
    f_s: np.ndarray
    delta: float
    sign_u: int = 1
    sign_s: int = 1
    phase_residual: float = math.nan
    t0: float = 0.0
    cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def shifted(self, tau: float) -> "ChannelPoint":
        """
        The same connection represented by ``Phi^tau(z0)`` at time
        ``t0 + tau``: phases advance by ``omega * tau`` and fiber tangents
        are transported.
        """
        from dataclasses import replace

        if tau == 0.0:
            return replace(self)
        tr = integrate_variational(self.z0, (0.0, tau), self.orbit_u.mu, dense_output=False)
        Phi = stm_of(tr.y_final)
        fu = Phi @ self.f_u
        fs = Phi @ self.f_s
        return replace(
            self,
            z0=tr.y_final[:4].copy(),
            theta_minus=(self.theta_minus + self.orbit_u.omega * tau) % TWO_PI,
            theta_plus=(self.theta_plus + self.orbit_s.omega * tau) % TWO_PI,
            f_u=fu / np.linalg.norm(fu),
            f_s=fs / np.linalg.norm(fs),
            t0=self.t0 + tau,
        )

    @property
    def footpoint_minus(self) -> np.ndarray:
        return self.orbit_u.state_at(self.theta_minus)

    @property
    def footpoint_plus(self) -> np.ndarray:
        return self.orbit_s.state_at(self.theta_plus)

    @property
    def phase_shift(self) -> float:
        """``Delta = theta^+ - theta^-`` in ``[0, 2pi)``."""
        return (self.theta_plus - self.theta_minus) % TWO_PI

    @property
    def action(self) -> float:
        return self.orbit_u.action

    @property
    def heteroclinic(self) -> bool:
        return self.orbit_u is not self.orbit_s


def channel_point_to_dict(cp: ChannelPoint) -> dict:
    """Full state of a channel point, orbits included (see ``orbit_to_dict``)."""
    return {
        "z0": [float(x) for x in cp.z0],
        "energy": float(cp.energy),
        "orbit_u": orbit_to_dict(cp.orbit_u),
        "orbit_s": None if cp.orbit_s is cp.orbit_u else orbit_to_dict(cp.orbit_s),
        "section": cp.section.to_dict(),
        "ray_theta_u": float(cp.ray_theta_u),
        "ray_theta_s": float(cp.ray_theta_s),
        "t_u": float(cp.t_u),
        "t_s": float(cp.t_s),
        "theta_minus": float(cp.theta_minus),
        "theta_plus": float(cp.theta_plus),
        "angle": float(cp.angle),
        "f_u": [float(x) for x in cp.f_u],
        "f_s": [float(x) for x in cp.f_s],
        "delta": float(cp.delta),
        "sign_u": int(cp.sign_u),
        "sign_s": int(cp.sign_s),
        "phase_residual": float(cp.phase_residual),
        "t0": float(cp.t0),
    }


def channel_point_from_dict(d: dict, mu: float) -> ChannelPoint:
    """Inverse of ``channel_point_to_dict``; a homoclinic point shares one orbit."""
    ou = orbit_from_dict(d["orbit_u"], mu)
    os_ = ou if d.get("orbit_s") is None else orbit_from_dict(d["orbit_s"], mu)
    return ChannelPoint(
        z0=np.array(d["z0"], dtype=float),
        energy=float(d["energy"]),
        orbit_u=ou,
        orbit_s=os_,
        section=SectionSpec.from_dict(d["section"]),
        ray_theta_u=float(d["ray_theta_u"]),
        ray_theta_s=float(d["ray_theta_s"]),
        t_u=float(d["t_u"]),
        t_s=float(d["t_s"]),
        theta_minus=float(d["theta_minus"]),
        theta_plus=float(d["theta_plus"]),
        angle=float(d["angle"]),
        f_u=np.array(d["f_u"], dtype=float),
        f_s=np.array(d["f_s"], dtype=float),
        delta=float(d["delta"]),
        sign_u=int(d["sign_u"]),
        sign_s=int(d["sign_s"]),
        phase_residual=float(d["phase_residual"]),
        t0=float(d["t0"]),
    )


def _segment_intersections(A: np.ndarray, B: np.ndarray, closed_a: bool, closed_b: bool):
    """All intersections of polylines ``A`` and ``B`` as ``(i, s, j, t)``."""
    if closed_a:
        A = np.vstack([A, A[:1]])
    if closed_b:
        B = np.vstack([B, B[:1]])
    p = A[:-1][:, None, :]
    r = (A[1:] - A[:-1])[:, None, :]
    q = B[:-1][None, :, :]
    s_ = (B[1:] - B[:-1])[None, :, :]

    def cross(u, v):
        return u[..., 0] * v[..., 1] - u[..., 1] * v[..., 0]

    den = cross(r, s_)
    qp = q - p
    with np.errstate(divide="ignore", invalid="ignore"):
        s = cross(qp, s_) / den
        t = cross(qp, r) / den
    mask = (den != 0) & (s >= 0) & (s < 1) & (t >= 0) & (t < 1)
    out = []
    for i, j in zip(*np.nonzero(mask)):
        out.append((int(i), float(s[i, j]), int(j), float(t[i, j])))
    return out


def _min_gap(A: np.ndarray, B: np.ndarray) -> float:
    d = np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2))
    return float(d.min())


def _ray_eval(orbit, theta, branch, sign, delta, section, region):
    z0 = _ray_start(orbit, theta, branch, sign, delta)
    res = ray_crossing(z0, branch, section, orbit.mu, variational=True, region=region)
    if res is None:
        raise NoIntersectionError("ray lost during channel refinement")
    t, y = res
    dz0 = _ray_start_derivative(orbit, theta, branch, sign, delta)
    dP = _crossing_sensitivity(y, section, orbit.mu, dz0)
    frame = orbit.frame_at(theta)
    v = frame[:, 3] if branch == "u" else frame[:, 2]
    fiber = stm_of(y) @ v
    return t, y[:4], dP, fiber / np.linalg.norm(fiber)


def _landing_coordinate(z, t, orbit: LyapunovOrbit, row: int, params, rtol, atol):
    """
    Floquet coordinate ``row`` (2: stable, 3: unstable) of ``Phi^t(z)``
    relative to ``orbit`` and its gradient with respect to ``z``.

    The value comes from a plain state integration (the same path later
    convergence checks follow); the STM run only supplies the gradient.
    """
    zt = integrate(z, (0.0, t), params, dense_output=False, rtol=rtol, atol=atol).y_final
    Phi = stm_of(integrate_variational(z, (0.0, t), params, dense_output=False).y_final)
    theta_c, d = orbit.nearest_phase(zt)
    w = orbit.dual_frame_at(theta_c)[row]
    return float(w @ (zt - orbit.state_at(theta_c))), w @ Phi, d


def polish_connection(
    z0,
    orbit_u: LyapunovOrbit,
    orbit_s: LyapunovOrbit,
    section: SectionSpec,
    t_forward: float,
    t_backward: float,
    *,
    max_iter: int = 6,
    tol: float = 1e-15,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
):
    """
    Newton polish of a connecting point on the section.

    Solves for ``z`` with ``z[section.index] = value``, ``H0(z) = h``, no
    unstable component relative to ``orbit_s`` after ``t_forward`` and no
    stable component relative to ``orbit_u`` after ``-t_backward``.  The
    landing times should put the trajectory near the orbits, where the
    linear Floquet splitting is accurate.

    Returns ``(z, landing_distances)``.
    """
    mu = orbit_u.mu
    h = orbit_u.energy
    z = np.array(z0, dtype=float)
    e_idx = np.zeros(4)
    e_idx[section.index] = 1.0
    dists = (math.nan, math.nan)
    for _ in range(max_iter):
        gs, dgs, ds = _landing_coordinate(z, t_forward, orbit_s, 3, mu, rtol, atol)
        gu, dgu, du = _landing_coordinate(z, -t_backward, orbit_u, 2, mu, rtol, atol)
        dists = (du, ds)
        R = np.array([gs, gu, z[section.index] - section.value, eval_hamiltonian(z, mu) - h])
        Jm = np.vstack([dgs, dgu, e_idx, hamiltonian_gradient(z, mu)])
        step = np.linalg.solve(Jm, -R)
        z = z + step
        if np.max(np.abs(step)) < tol:
            break
    return z, dists


def refine_channel_point(
    orbit_u: LyapunovOrbit,
    orbit_s: LyapunovOrbit,
    section: SectionSpec,
    theta_u: float,
    theta_s: float,
    *,
    sign_u: int = 1,
    sign_s: int = 1,
    delta: float = 1e-6,
    angle_min: float = 1e-3,
    tol: float = 1e-12,
    max_iter: int = 20,
    region: Optional[Region] = None,
    phase_kw: Optional[dict] = None,
) -> ChannelPoint:
    """
    Newton on the two departure phases so that the unstable and stable rays
    hit the same section point, then the asymptotic phases of that point.
    """
    for _ in range(max_iter):
        tu, zu, dPu, fu = _ray_eval(orbit_u, theta_u, "u", sign_u, delta, section, region)
        ts, zs, dPs, fs = _ray_eval(orbit_s, theta_s, "s", sign_s, delta, section, region)
        F = section.project(zu) - section.project(zs)
        if np.max(np.abs(F)) < tol:
            break
        Jm = np.column_stack([dPu, -dPs])
        if np.max(np.abs(F)) < 1e-9:
            # ray noise floor; the connection polish takes over from here
            break
        step = np.linalg.solve(Jm, -F)
        if np.max(np.abs(step)) > 0.5:
            step *= 0.5 / np.max(np.abs(step))
        theta_u += step[0]
        theta_s += step[1]
    else:
        raise NoIntersectionError(f"channel Newton did not converge (gap {np.max(np.abs(F)):.2e})")
    cosang = abs(dPu @ dPs) / (np.linalg.norm(dPu) * np.linalg.norm(dPs))
    angle = float(math.acos(min(1.0, cosang)))
    if angle < angle_min:
        raise NoIntersectionError(f"tangential intersection (angle {angle:.2e} rad)")
    z0, _ = polish_connection(zu, orbit_u, orbit_s, section, -ts, tu)
    kw = phase_kw or {}
    ap_u = asymptotic_phase(z0, orbit_u, "u", **kw)
    ap_s = asymptotic_phase(z0, orbit_s, "s", **kw)
    res = np.nanmax([ap_u.residual, ap_s.residual])
    return ChannelPoint(
        z0=z0,
        energy=orbit_u.energy,
        orbit_u=orbit_u,
        orbit_s=orbit_s,
        section=section,
        ray_theta_u=float(theta_u % TWO_PI),
        ray_theta_s=float(theta_s % TWO_PI),
        t_u=tu,
        t_s=ts,
        theta_minus=ap_u.theta,
        theta_plus=ap_s.theta,
        angle=angle,
        f_u=fu,
        f_s=fs,
        delta=delta,
        sign_u=sign_u,
        sign_s=sign_s,
        phase_residual=float(res),
    )


def find_channel(
    cut_u: SectionCut,
    cut_s: SectionCut,
    *,
    angle_min: float = 1e-3,
    seed: Optional[tuple[float, float]] = None,
    region: Optional[Region] = None,
    phase_kw: Optional[dict] = None,
) -> list:
    """
    Transverse intersections of two cuts at the same energy and section.

    Candidates come from polyline segment intersections and are polished by
    Newton on the departure phases.  With ``seed = (q_a, q_b)`` (section
    coordinates) only the candidate nearest to the seed is refined.

    Raises
    ------
    NoIntersectionError
        If the polylines do not intersect (``min_gap`` carries the smallest
        point distance) or every candidate is tangential.
    """
    if cut_u.section != cut_s.section:
        raise ValueError("cuts live on different sections")
    if abs(cut_u.energy - cut_s.energy) > 1e-9:
        raise ValueError("cuts are at different energies")
    A, B = cut_u.curve, cut_s.curve
    cands = _segment_intersections(A, B, cut_u.closed, cut_s.closed)
    if not cands:
        gap = _min_gap(A, B)
        raise NoIntersectionError(f"cuts do not intersect (minimal gap {gap:.3e})", gap)

    def lerp_theta(thetas, i, s):
        a = thetas[i]
        b = thetas[(i + 1) % len(thetas)]
        if b < a:
            b += TWO_PI
        return (a + s * (b - a)) % TWO_PI

    if seed is not None:
        pts = [A[i] + s * (A[(i + 1) % len(A)] - A[i]) for i, s, _, _ in cands]
        k = int(np.argmin([np.linalg.norm(p - np.asarray(seed)) for p in pts]))
        cands = [cands[k]]
    out = []
    for i, s, j, t in cands:
        th_u = lerp_theta(cut_u.thetas, i, s)
        th_s = lerp_theta(cut_s.thetas, j, t)
        try:
            out.append(
                refine_channel_point(
                    cut_u.orbit,
                    cut_s.orbit,
                    cut_u.section,
                    th_u,
                    th_s,
                    sign_u=cut_u.sign,
                    sign_s=cut_s.sign,
                    delta=cut_u.delta,
                    angle_min=angle_min,
                    region=region,
                    phase_kw=phase_kw,
                )
            )
        except (NoIntersectionError, ManifoldConvergenceError, CollisionError):
            # spurious polyline crossings (across lost rays) fail here
            continue
    if not out:
        raise NoIntersectionError("only tangential or non-convergent intersections found")
    return out


def find_heteroclinic_channel(
    family_u: OrbitFamily,
    family_s: OrbitFamily,
    energy: float,
    section: SectionSpec,
    *,
    sign_u: int = -1,
    sign_s: int = 1,
    n_rays: int = 128,
    angle_min: float = 1e-3,
    seed=None,
    region: Optional[Region] = None,
    delta: float = 1e-6,
):
    """
    Heteroclinic channel points from the unstable manifold of an orbit in
    ``family_u`` to the stable manifold of the orbit at the same energy in
    ``family_s``.

    Raises
    ------
    ValueError
        If the energy ranges of the families do not overlap, or ``energy``
        lies outside the overlap.
    """
    lo = max(family_u.h_range[0], family_s.h_range[0])
    hi = min(family_u.h_range[1], family_s.h_range[1])
    if lo >= hi:
        raise ValueError("families have disjoint energy ranges")
    if not lo <= energy <= hi:
        raise ValueError(f"energy {energy} outside the common range [{lo}, {hi}]")
    ou = family_u.orbit_at_energy(energy)
    os_ = family_s.orbit_at_energy(energy)
    cut_u = globalize_manifold(ou, "u", section, sign=sign_u, n_rays=n_rays, region=region, delta=delta)
    cut_s = globalize_manifold(os_, "s", section, sign=sign_s, n_rays=n_rays, region=region, delta=delta)
    pts = find_channel(cut_u, cut_s, angle_min=angle_min, seed=seed, region=region)
    return pts, cut_u, cut_s


# ---------------------------------------------------------------------------
# unperturbed scattering map


def phase_shift_along_orbit(cp: ChannelPoint, n: int = 10, phase_kw: Optional[dict] = None) -> np.ndarray:
    """
    ``theta^+ - theta^-`` at ``n`` representatives ``Phi^t(z0)``,
    ``t in [0, T)``, wrapped around ``cp.phase_shift``.
    """
    T = cp.orbit_u.period
    kw = phase_kw or {}
    tr = integrate(cp.z0, (0.0, T), cp.orbit_u.mu)
    out = []
    for t in np.linspace(0.0, T, n, endpoint=False):
        z = tr(t) if t > 0 else cp.z0
        a_s = asymptotic_phase(z, cp.orbit_s, "s", **kw).theta
        a_u = asymptotic_phase(z, cp.orbit_u, "u", **kw).theta
        out.append(cp.phase_shift + wrap_angle(a_s - a_u - cp.phase_shift))
    return np.array(out)


@dataclass
class Channel:
    """One branch of channel points over energies with ``Delta(I)``."""

    points: list

    def __post_init__(self):
        self.points = sorted(self.points, key=lambda c: c.energy)
        I = np.array([c.action for c in self.points])
        D = np.unwrap(np.array([c.phase_shift for c in self.points]))
        self._I = I
        self._D = D
        self._spline = CubicSpline(I, D) if len(I) >= 3 else None

    def delta(self, I: float) -> float:
        if len(self._I) == 1:
            return float(self._D[0])
        if self._spline is None:
            return float(np.interp(I, self._I, self._D))
        return float(self._spline(I))

    def delta_derivative(self, I: float) -> float:
        if self._spline is None:
            if len(self._I) < 2:
                return 0.0
            return float((self._D[-1] - self._D[0]) / (self._I[-1] - self._I[0]))
        return float(self._spline(I, 1))


def unperturbed_scattering_map(points) -> Channel:
    """``Delta(I) = theta^+ - theta^-`` interpolated over a channel branch."""
    if isinstance(points, ChannelPoint):
        points = [points]
    if not points:
        raise ValueError("empty channel")
    return Channel(list(points))


def continue_channel(cp: ChannelPoint, family: OrbitFamily, energies, **kw) -> Channel:
    """
    Follow a channel point across ``energies`` by re-running the phase
    Newton on the orbit at each energy, seeded by the previous solution.
    """
    pts = [cp]
    th_u, th_s = cp.ray_theta_u, cp.ray_theta_s
    for h in energies:
        if abs(h - cp.energy) < 1e-14:
            continue
        orb = family.orbit_at_energy(h)
        new = refine_channel_point(orb, orb, cp.section, th_u, th_s, sign_u=cp.sign_u, sign_s=cp.sign_s, delta=cp.delta, **kw)
        pts.append(new)
        th_u, th_s = new.ray_theta_u, new.ray_theta_s
    return Channel(pts)


def symmetric_partner(cp: ChannelPoint, candidates, tol: float = 1e-8) -> Optional[ChannelPoint]:
    """Channel point among ``candidates`` at the reflected position of ``cp``."""
    target = cp.section.project(reflect(cp.z0))
    for c in candidates:
        if np.max(np.abs(c.section.project(c.z0) - target)) < tol:
            return c
    return None


def default_channel_orbit(family: OrbitFamily, fraction: float = 0.5) -> LyapunovOrbit:
    lo, hi = family.h_range
    return family.orbit_at_energy(lo + fraction * (hi - lo))


def orbit_for_channel(family: OrbitFamily, energy: float) -> LyapunovOrbit:
    return correct_orbit(family.nearest_member(energy), family.mu, energy=energy)
