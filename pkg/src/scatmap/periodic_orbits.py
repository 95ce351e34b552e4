"""
Planar Lyapunov orbits around a collinear equilibrium and their family.

Each orbit is symmetric with respect to the q1-axis and is represented by its
perpendicular crossing ``z_pc = (0, p2, q1, 0)`` (so ``q2 = 0`` and
``dq1/dt = p1 + q2 = 0``).  The phase convention is ``theta = 2 pi t / T``
with ``theta = 0`` at ``z_pc``, and ``z_pc`` sits on the side of the
equilibrium facing away from the nearer primary.

Along the family the action ``I = (1/2pi) oint p dq`` satisfies
``dI/dh = T / 2pi``, so ``omega = 2pi/T = dh0/dI`` and
``d2h0/dI2 = omega * d omega/dh``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import CubicSpline

from .dynamics import (
    DEFAULT_ATOL,
    DEFAULT_RTOL,
    EquilibriumError,
    _mu,
    classify_equilibrium,
    eval_hamiltonian,
    eval_vector_field,
    hamiltonian_gradient,
    integrate,
    integrate_variational,
    stm_of,
    vector_field_jacobian,
)

TWO_PI = 2.0 * math.pi
# orbit tables and closure checks run tighter than the default: the unstable
# multiplier (~2.7e3 per period near L1) amplifies local integration error
TABLE_TOL = 1e-13


class CorrectionError(RuntimeError):
    """Differential correction diverged or produced a non-hyperbolic orbit."""


class FamilyFoldError(RuntimeError):
    """The action stopped being monotone in the energy along the family."""


@dataclass(frozen=True)
class OrbitGuess:
    z: np.ndarray
    period: float


def _away_sign(q1_eq: float, mu: float) -> float:
    heavy, light = mu, -1.0 + mu
    nearest = heavy if abs(q1_eq - heavy) < abs(q1_eq - light) else light
    return 1.0 if q1_eq > nearest else -1.0


def seed_orbit_from_linearization(z_eq, params, amplitude: float = 1e-3) -> OrbitGuess:
    """
    Linear Lyapunov orbit at the perpendicular-crossing phase.

    The center eigenvector is scaled to unit q1-component; its real part is
    the crossing displacement.  ``p1`` and ``q2`` are set to zero exactly.
    """
    mu = _mu(params)
    spec = classify_equilibrium(z_eq, mu)
    v = spec.eigvecs["center"]
    v = v / v[2]
    sign = _away_sign(float(z_eq[2]), mu)
    a = sign * abs(amplitude)
    z = np.array(z_eq, dtype=float) + a * np.real(v)
    z[0] = 0.0
    z[3] = 0.0
    return OrbitGuess(z=z, period=TWO_PI / spec.omega)


# ---------------------------------------------------------------------------
# differential correction


def _half_period_residual(q1: float, p2: float, t_half: float, mu: float, rtol, atol):
    z0 = np.array([0.0, p2, q1, 0.0])
    traj = integrate_variational(z0, (0.0, t_half), mu, rtol=rtol, atol=atol, dense_output=False)
    y = traj.y_final
    z1 = y[:4]
    Phi = stm_of(y)
    f1 = eval_vector_field(z1, mu)
    # residuals: q2 and p1 at the half period (p1 = dq1/dt when q2 = 0)
    F = np.array([z1[3], z1[0]])
    # columns: d/dq1, d/dp2, d/dt_half
    DF = np.array(
        [
            [Phi[3, 2], Phi[3, 1], f1[3]],
            [Phi[0, 2], Phi[0, 1], f1[0]],
        ]
    )
    return F, DF


def _newton_fixed_h(q1, p2, t_half, h, mu, rtol, atol, max_iter, tol):
    corr = 0.0
    for it in range(max_iter + 1):
        F, DF = _half_period_residual(q1, p2, t_half, mu, rtol, atol)
        z0 = np.array([0.0, p2, q1, 0.0])
        gH = hamiltonian_gradient(z0, mu)
        R = np.array([F[0], F[1], eval_hamiltonian(z0, mu) - h])
        Jm = np.vstack([DF, [gH[2], gH[1], 0.0]])
        if np.max(np.abs(R)) < tol:
            return q1, p2, t_half, it, corr, Jm
        if it == max_iter:
            break
        dx = np.linalg.solve(Jm, -R)
        corr += float(np.linalg.norm(dx))
        q1, p2, t_half = q1 + dx[0], p2 + dx[1], t_half + dx[2]
    raise CorrectionError(f"fixed-energy correction did not converge (residual {np.max(np.abs(R)):.3e})")


def _newton_fixed_q1(q1, p2, t_half, mu, rtol, atol, max_iter, tol):
    corr = 0.0
    for it in range(max_iter + 1):
        F, DF = _half_period_residual(q1, p2, t_half, mu, rtol, atol)
        if np.max(np.abs(F)) < tol:
            return q1, p2, t_half, it, corr
        if it == max_iter:
            break
        dx = np.linalg.solve(DF[:, 1:], -F)
        corr += float(np.linalg.norm(dx))
        p2, t_half = p2 + dx[0], t_half + dx[1]
    raise CorrectionError(f"fixed-amplitude correction did not converge (residual {np.max(np.abs(F)):.3e})")


@dataclass
class LyapunovOrbit:
    """
    One planar Lyapunov orbit.

    Attributes
    ----------
    energy, period, action : float
    z_pc : ndarray
        Perpendicular crossing, phase 0.
    monodromy : ndarray
        ``DPhi^T(z_pc)``.
    rho_u, rho_s : float
        Unstable and stable Floquet multipliers (``rho_s`` from the backward
        monodromy, independently of ``rho_u``).
    v_u, v_s : ndarray
        Unit Floquet eigenvectors at ``z_pc``; ``v_u`` has a non-negative q1
        component and ``v_s`` is chosen with the mirrored orientation.
    dz_dh, dT_dh : ndarray, float
        Derivative of the crossing point and of the period along the family.
    """

    mu: float
    energy: float
    period: float
    action: float
    z_pc: np.ndarray
    monodromy: np.ndarray
    rho_u: float
    rho_s: float
    v_u: np.ndarray
    v_s: np.ndarray
    dz_dh: np.ndarray
    dT_dh: float
    newton_iterations: int = 0
    correction_norm: float = 0.0
    _fwd: Optional[object] = field(default=None, repr=False, compare=False)
    _bwd: Optional[object] = field(default=None, repr=False, compare=False)
    _samples: Optional[tuple] = field(default=None, repr=False, compare=False)

    @property
    def omega(self) -> float:
        return TWO_PI / self.period

    # dense tables -----------------------------------------------------------

    def _forward(self):
        if self._fwd is None:
            tr = integrate_variational(self.z_pc, (0.0, self.period), self.mu, rtol=TABLE_TOL, atol=TABLE_TOL)
            self._fwd = tr.sol
        return self._fwd

    def _backward(self):
        if self._bwd is None:
            tr = integrate_variational(self.z_pc, (0.0, -self.period), self.mu, rtol=TABLE_TOL, atol=TABLE_TOL)
            self._bwd = tr.sol
        return self._bwd

    def _time(self, theta: float) -> float:
        return (float(theta) % TWO_PI) / self.omega

    def state_at(self, theta: float) -> np.ndarray:
        """Point of the orbit at phase ``theta``."""
        return self._forward()(self._time(theta))[:4]

    def states_at(self, thetas) -> np.ndarray:
        ts = (np.asarray(thetas, dtype=float) % TWO_PI) / self.omega
        return self._forward()(ts)[:4].T

    def frame_at(self, theta: float) -> np.ndarray:
        """
        Columns ``[X0, e_h, v_s, v_u]`` at phase ``theta``.

        ``e_h`` is the derivative of the orbit point at fixed phase with
        respect to the energy; ``v_s`` and ``v_u`` are the Floquet vectors
        transported along the orbit (backward and forward respectively, so
        neither picks up the other's growth) and scaled to unit length.
        """
        t = self._time(theta)
        yf = self._forward()(t)
        z = yf[:4]
        Phi = yf[4:].reshape(4, 4)
        X0 = eval_vector_field(z, self.mu)
        e_h = Phi @ self.dz_dh + (t / self.period) * self.dT_dh * X0
        vu = Phi @ self.v_u
        vu /= np.linalg.norm(vu)
        yb = self._backward()(t - self.period)
        vs = yb[4:].reshape(4, 4) @ self.v_s
        vs /= np.linalg.norm(vs)
        return np.column_stack([X0, e_h, vs, vu])

    def stable_field(self, t: float) -> np.ndarray:
        """
        Flow-invariant stable vector field along the orbit:
        ``DPhi^s V(t) = V(t + s)`` and ``V(t + T) = rho_s V(t)``, with
        ``V(T) = v_s``.
        """
        k = math.floor(t / self.period)
        r = t - k * self.period
        V = self._backward()(r - self.period)[4:].reshape(4, 4) @ self.v_s
        return V * self.rho_s**k

    def unstable_field(self, t: float) -> np.ndarray:
        """Same as ``stable_field`` for ``v_u``: ``U(t + T) = rho_u U(t)``, ``U(0) = v_u``."""
        k = math.floor(t / self.period)
        r = t - k * self.period
        U = self._forward()(r)[4:].reshape(4, 4) @ self.v_u
        return U * self.rho_u**k

    def dual_frame_at(self, theta: float) -> np.ndarray:
        """Rows dual to ``frame_at``: ``(dtheta/omega, dH0, dx_s, dx_u)``."""
        return np.linalg.inv(self.frame_at(theta))

    def phase_covector(self, theta: float) -> np.ndarray:
        """``dtheta``: equal to ``omega`` on X0 and zero on ``e_h, v_s, v_u``."""
        return self.omega * self.dual_frame_at(theta)[0]

    # phase -----------------------------------------------------------------

    def _coarse_samples(self, n: int = 256):
        if self._samples is None:
            th = np.linspace(0.0, TWO_PI, n, endpoint=False)
            self._samples = (th, self.states_at(th))
        return self._samples

    def nearest_phase(self, z) -> tuple[float, float]:
        """Phase of the orbit point closest to ``z`` and that distance."""
        z = np.asarray(z, dtype=float)
        th, pts = self._coarse_samples()
        k = int(np.argmin(np.sum((pts - z) ** 2, axis=1)))
        theta = th[k]
        for _ in range(20):
            t = self._time(theta)
            g = self.state_at(theta)
            X0 = eval_vector_field(g, self.mu)
            A = vector_field_jacobian(g, self.mu)
            r = g - z
            f = r @ X0
            df = X0 @ X0 + r @ (A @ X0)
            dt = -f / df
            theta = (theta + self.omega * dt) % TWO_PI
            if abs(dt) < 1e-15 * max(1.0, t):
                break
        d = float(np.linalg.norm(self.state_at(theta) - z))
        return float(theta), d

    def linear_phase(self, z) -> tuple[float, float]:
        """
        Asymptotic phase of a point near the orbit from the linear Floquet
        splitting: ``theta_c + dtheta . (z - gamma(theta_c))``.  The error is
        quadratic in the distance.  Returns ``(theta, distance)``.
        """
        theta_c, d = self.nearest_phase(z)
        dth = self.phase_covector(theta_c)
        theta = theta_c + float(dth @ (np.asarray(z) - self.state_at(theta_c)))
        return theta % TWO_PI, d


def phase_of_point_on_orbit(orbit: LyapunovOrbit, z, tol: float = 1e-8) -> float:
    """
    Phase ``theta = 2 pi t / T`` of a point lying on ``orbit``.

    Raises
    ------
    ValueError
        If ``z`` is farther than ``tol`` from the orbit.
    """
    theta, d = orbit.nearest_phase(z)
    if d > tol:
        raise ValueError(f"point is {d:.3e} away from the orbit (tolerance {tol:.1e})")
    return theta


def orbit_action(z_pc, period: float, params, rtol: float = DEFAULT_RTOL, atol: float = 1e-14) -> float:
    """Loop action ``(1/2pi) oint (p1 dq1 + p2 dq2)`` over one period."""
    mu = _mu(params)
    if period == 0.0:
        return 0.0

    def rhs(t, y):
        f = eval_vector_field(y[:4], mu)
        return np.append(f, y[0] * f[2] + y[1] * f[3])

    y0 = np.append(np.asarray(z_pc, dtype=float), 0.0)
    sol = solve_ivp(rhs, (0.0, period), y0, method="DOP853", rtol=rtol, atol=atol)
    return float(sol.y[4, -1] / TWO_PI)


def _floquet(M: np.ndarray, M_back: np.ndarray):
    w, V = np.linalg.eig(M)
    k = int(np.argmax(np.abs(w)))
    rho_u = w[k]
    wb, Vb = np.linalg.eig(M_back)
    kb = int(np.argmax(np.abs(wb)))
    rho_b = wb[kb]
    if abs(rho_u.imag) > 1e-9 * abs(rho_u) or abs(rho_b.imag) > 1e-9 * abs(rho_b):
        raise CorrectionError("dominant multiplier is complex: orbit not hyperbolic")
    rho_u = float(rho_u.real)
    rho_s = 1.0 / float(rho_b.real)
    if not (rho_u > 1.0 + 1e-6 and 0.0 < rho_s < 1.0 - 1e-6):
        raise CorrectionError(f"orbit not hyperbolic: multipliers {rho_u}, {rho_s}")
    v_u = np.real(V[:, k])
    v_s = np.real(Vb[:, kb])
    v_u /= np.linalg.norm(v_u)
    v_s /= np.linalg.norm(v_s)
    if v_u[2] < 0:
        v_u = -v_u
    if v_s[2] < 0:
        v_s = -v_s
    return rho_u, rho_s, v_u, v_s


def build_orbit(q1, p2, t_half, mu, jac=None, iterations=0, corr=0.0, tangent=None) -> LyapunovOrbit:
    """
    Assemble a ``LyapunovOrbit`` from a converged half-period solution.

    ``tangent = (dq1/dh, dp2/dh, dT/dh)`` overrides the family tangent that
    is otherwise solved from ``jac`` (used to restore stored orbits exactly).
    """
    z_pc = np.array([0.0, p2, q1, 0.0])
    T = 2.0 * t_half
    fwd = integrate_variational(z_pc, (0.0, T), mu, rtol=TABLE_TOL, atol=TABLE_TOL)
    bwd = integrate_variational(z_pc, (0.0, -T), mu, rtol=TABLE_TOL, atol=TABLE_TOL)
    M = stm_of(fwd.y_final)
    Mb = stm_of(bwd.y_final)
    rho_u, rho_s, v_u, v_s = _floquet(M, Mb)
    if tangent is not None:
        d = np.array([tangent[0], tangent[1], 0.5 * tangent[2]], dtype=float)
    else:
        if jac is None:
            F, DF = _half_period_residual(q1, p2, t_half, mu, DEFAULT_RTOL, DEFAULT_ATOL)
            gH = hamiltonian_gradient(z_pc, mu)
            jac = np.vstack([DF, [gH[2], gH[1], 0.0]])
        d = np.linalg.solve(jac, np.array([0.0, 0.0, 1.0]))
    dz_dh = np.array([0.0, d[1], d[0], 0.0])
    orbit = LyapunovOrbit(
        mu=mu,
        energy=eval_hamiltonian(z_pc, mu),
        period=T,
        action=orbit_action(z_pc, T, mu),
        z_pc=z_pc,
        monodromy=M,
        rho_u=rho_u,
        rho_s=rho_s,
        v_u=v_u,
        v_s=v_s,
        dz_dh=dz_dh,
        dT_dh=2.0 * float(d[2]),
        newton_iterations=iterations,
        correction_norm=corr,
    )
    orbit._fwd = fwd.sol
    orbit._bwd = bwd.sol
    return orbit


def correct_orbit(
    guess,
    params,
    *,
    energy: Optional[float] = None,
    period: Optional[float] = None,
    max_iter: int = 25,
    tol: float = 1e-13,
    rtol: float = DEFAULT_RTOL,
    atol: float = DEFAULT_ATOL,
) -> LyapunovOrbit:
    """
    Newton differential correction of a symmetric Lyapunov orbit.

    Shoots from ``(0, p2, q1, 0)`` over a half period and asks for the next
    perpendicular crossing (``q2 = p1 = 0``).  With ``energy`` given the
    unknowns are ``(q1, p2, T/2)`` and ``H0 = energy`` is appended; otherwise
    ``q1`` is held fixed (fixed amplitude).

    Parameters
    ----------
    guess : OrbitGuess or LyapunovOrbit or array
        Initial crossing point; a bare array needs ``period``.
    """
    mu = _mu(params)
    if isinstance(guess, LyapunovOrbit):
        z, T = guess.z_pc, guess.period
    elif isinstance(guess, OrbitGuess):
        z, T = guess.z, guess.period
    else:
        if period is None:
            raise ValueError("a bare initial state needs a period guess")
        z, T = np.asarray(guess, dtype=float), float(period)
    q1, p2, th = float(z[2]), float(z[1]), 0.5 * float(T)
    if energy is None:
        q1, p2, th, it, corr = _newton_fixed_q1(q1, p2, th, mu, rtol, atol, max_iter, tol)
        return build_orbit(q1, p2, th, mu, None, it, corr)
    q1, p2, th, it, corr, jac = _newton_fixed_h(q1, p2, th, float(energy), mu, rtol, atol, max_iter, tol)
    return build_orbit(q1, p2, th, mu, jac, it, corr)


def orbit_to_dict(orbit: LyapunovOrbit) -> dict:
    """Minimal data that restores ``orbit`` exactly through ``orbit_from_dict``."""
    return {
        "q1": float(orbit.z_pc[2]),
        "p2": float(orbit.z_pc[1]),
        "t_half": 0.5 * float(orbit.period),
        "tangent": [float(orbit.dz_dh[2]), float(orbit.dz_dh[1]), float(orbit.dT_dh)],
        "newton_iterations": int(orbit.newton_iterations),
        "correction_norm": float(orbit.correction_norm),
        "energy": float(orbit.energy),
        "period": float(orbit.period),
        "action": float(orbit.action),
        "rho_u": float(orbit.rho_u),
        "rho_s": float(orbit.rho_s),
    }


def orbit_from_dict(d: dict, mu: float) -> LyapunovOrbit:
    """Rebuild an orbit from ``orbit_to_dict`` output (re-integrates the tables)."""
    return build_orbit(
        float(d["q1"]),
        float(d["p2"]),
        float(d["t_half"]),
        mu,
        iterations=int(d.get("newton_iterations", 0)),
        corr=float(d.get("correction_norm", 0.0)),
        tangent=tuple(float(x) for x in d["tangent"]),
    )


def closure_residual(orbit: LyapunovOrbit, tol: float = TABLE_TOL) -> float:
    """``|Phi^T(z_pc) - z_pc|`` from a fresh integration."""
    tr = integrate(orbit.z_pc, (0.0, orbit.period), orbit.mu, dense_output=False, rtol=tol, atol=tol)
    return float(np.linalg.norm(tr.y_final - orbit.z_pc))


def energy_drift(orbit: LyapunovOrbit, n: int = 64) -> float:
    pts = orbit.states_at(np.linspace(0.0, TWO_PI, n, endpoint=False))
    H = np.array([eval_hamiltonian(p, orbit.mu) for p in pts])
    return float(np.max(np.abs(H - orbit.energy)))


def multiplier_report(orbit: LyapunovOrbit) -> dict:
    """Multiplier pattern ``{rho_u, 1/rho_u, 1, 1}`` diagnostics."""
    w = np.linalg.eigvals(orbit.monodromy)
    order = np.argsort(np.abs(np.abs(w) - 1.0))
    unit = w[order[:2]]
    return {
        "rho_u": orbit.rho_u,
        "rho_s": orbit.rho_s,
        "product_error": abs(orbit.rho_u * orbit.rho_s - 1.0),
        "unit_pair_error": float(np.max(np.abs(unit - 1.0))),
        "det_error": abs(np.linalg.det(orbit.monodromy) - 1.0),
        "floquet_residual": float(
            np.linalg.norm(orbit.monodromy @ orbit.v_u - orbit.rho_u * orbit.v_u) / orbit.rho_u
        ),
    }


# ---------------------------------------------------------------------------
# family


@dataclass
class OrbitFamily:
    """
    Discretized Lyapunov family with spline interpolants in the energy.

    ``members`` are sorted by energy.  ``I(h)``, ``T(h)`` are cubic splines;
    ``h0(I)`` is the spline of the inverse relation.
    """

    mu: float
    equilibrium: str
    z_eq: np.ndarray
    members: list
    continuation_path: list = field(default_factory=list)

    def __post_init__(self):
        self.members = sorted(self.members, key=lambda o: o.energy)
        self._build()

    def _build(self):
        h = self.energies
        I = self.actions
        if len(h) >= 2 and not np.all(np.diff(I) > 0):
            raise FamilyFoldError("action is not strictly increasing in energy along the family")
        if len(h) >= 2:
            self._I_of_h = CubicSpline(h, I)
            self._T_of_h = CubicSpline(h, self.periods)
            self._h_of_I = CubicSpline(I, h)

    @property
    def energies(self) -> np.ndarray:
        return np.array([o.energy for o in self.members])

    @property
    def actions(self) -> np.ndarray:
        return np.array([o.action for o in self.members])

    @property
    def periods(self) -> np.ndarray:
        return np.array([o.period for o in self.members])

    @property
    def h_range(self) -> tuple[float, float]:
        return float(self.members[0].energy), float(self.members[-1].energy)

    @property
    def grid_spacing(self) -> float:
        return float(np.median(np.diff(self.energies)))

    def action_of_energy(self, h: float) -> float:
        return float(self._I_of_h(h))

    def energy_of_action(self, I: float) -> float:
        return float(self._h_of_I(I))

    def period_of_energy(self, h: float) -> float:
        return float(self._T_of_h(h))

    def omega_of_energy(self, h: float) -> float:
        return TWO_PI / self.period_of_energy(h)

    def omega_of_action(self, I: float) -> float:
        return self.omega_of_energy(self.energy_of_action(I))

    def d2h_dI2(self, h: float, step: Optional[float] = None) -> float:
        """
        ``d2h0/dI2 = d omega/dI = omega * d omega/dh`` by a centered finite
        difference of ``omega(h)`` with step ``step`` (default one grid
        spacing).
        """
        s = self.grid_spacing if step is None else float(step)
        lo, hi = self.h_range
        a, b = max(lo, h - s), min(hi, h + s)
        dw = (self.omega_of_energy(b) - self.omega_of_energy(a)) / (b - a)
        return self.omega_of_energy(h) * dw

    def nearest_member(self, h: float) -> LyapunovOrbit:
        k = int(np.argmin(np.abs(self.energies - h)))
        return self.members[k]

    def orbit_at_energy(self, h: float, **kw) -> LyapunovOrbit:
        """Corrected orbit at energy ``h`` seeded by the nearest member."""
        lo, hi = self.h_range
        pad = 0.05 * (hi - lo)
        if not (lo - pad <= h <= hi + pad):
            raise ValueError(f"energy {h} outside family range [{lo}, {hi}]")
        return correct_orbit(self.nearest_member(h), self.mu, energy=h, **kw)

    def frequency_consistency(self) -> np.ndarray:
        """
        ``|2pi/T - dh/dI| / omega`` at interior members, with ``dh/dI`` from
        a three-point non-uniform finite difference of the samples.
        """
        h = self.energies
        I = self.actions
        out = []
        for k in range(1, len(h) - 1):
            d0, d1 = I[k] - I[k - 1], I[k + 1] - I[k]
            dhdI = (
                -d1 / (d0 * (d0 + d1)) * h[k - 1]
                + (d1 - d0) / (d0 * d1) * h[k]
                + d0 / (d1 * (d0 + d1)) * h[k + 1]
            )
            w = self.members[k].omega
            out.append(abs(w - dhdI) / w)
        return np.array(out)


def family_to_dict(family: "OrbitFamily") -> dict:
    return {
        "mu": float(family.mu),
        "equilibrium": family.equilibrium,
        "z_eq": [float(x) for x in family.z_eq],
        "members": [orbit_to_dict(o) for o in family.members],
        "continuation_path": [float(h) for h in family.continuation_path],
    }


def family_from_dict(d: dict) -> "OrbitFamily":
    mu = float(d["mu"])
    return OrbitFamily(
        mu=mu,
        equilibrium=d["equilibrium"],
        z_eq=np.array(d["z_eq"], dtype=float),
        members=[orbit_from_dict(m, mu) for m in d["members"]],
        continuation_path=list(d.get("continuation_path", [])),
    )


def _chebyshev_grid(lo: float, hi: float, n: int) -> np.ndarray:
    k = np.arange(n)
    x = -np.cos(np.pi * k / (n - 1))
    return 0.5 * (lo + hi) + 0.5 * (hi - lo) * x


def continue_family(
    z_eq,
    params,
    h_range: tuple[float, float],
    n_members: int = 41,
    *,
    equilibrium: str = "L1",
    seed_amplitude: float = 1e-3,
    ds: float = 2e-3,
    max_steps: int = 2000,
) -> OrbitFamily:
    """
    Continue the Lyapunov family from the linear seed across ``h_range``.

    Pseudo-arclength continuation in ``(q1, p2, T/2)`` traces the branch past
    ``h_range[1]``; members are then corrected at fixed energy on a Chebyshev
    grid of ``n_members`` energies (denser near the ends of the range).

    Raises
    ------
    FamilyFoldError
        If the energy stops increasing along the branch before leaving the
        range, or the action is not monotone in the energy.
    """
    mu = _mu(params)
    h_lo, h_hi = float(h_range[0]), float(h_range[1])
    h_eq = eval_hamiltonian(z_eq, mu)
    if not h_eq < h_lo < h_hi:
        raise ValueError("energy range must lie above the equilibrium energy and be increasing")
    if n_members < 3:
        raise ValueError("need at least three family members")
    g = seed_orbit_from_linearization(z_eq, mu, seed_amplitude)
    q1, p2, th, _, _ = _newton_fixed_q1(g.z[2], g.z[1], 0.5 * g.period, mu, DEFAULT_RTOL, DEFAULT_ATOL, 25, 1e-13)
    x = np.array([q1, p2, th])
    path = [(eval_hamiltonian([0, p2, q1, 0], mu), x.copy())]
    # tangent: null vector of the 2x3 residual Jacobian, oriented outward
    _, DF = _half_period_residual(q1, p2, th, mu, DEFAULT_RTOL, DEFAULT_ATOL)
    tan = np.linalg.svd(DF)[2][-1]
    sgn = _away_sign(float(z_eq[2]), mu)
    if tan[0] * sgn < 0:
        tan = -tan
    steps = 0
    while path[-1][0] < h_hi:
        steps += 1
        if steps > max_steps:
            raise FamilyFoldError("continuation did not reach the end of the energy range")
        y = x + ds * tan
        for _ in range(25):
            F, DF = _half_period_residual(y[0], y[1], y[2], mu, DEFAULT_RTOL, DEFAULT_ATOL)
            R = np.append(F, (y - x) @ tan - ds)
            if np.max(np.abs(R)) < 1e-12:
                break
            y = y + np.linalg.solve(np.vstack([DF, tan]), -R)
        else:
            raise FamilyFoldError("pseudo-arclength corrector failed")
        new_tan = np.linalg.svd(DF)[2][-1]
        if new_tan @ tan < 0:
            new_tan = -new_tan
        h_new = eval_hamiltonian([0, y[1], y[0], 0], mu)
        if h_new <= path[-1][0]:
            raise FamilyFoldError(f"energy fold near h = {h_new}")
        x, tan = y, new_tan
        path.append((h_new, x.copy()))
    hs = np.array([p[0] for p in path])
    members = []
    for h in _chebyshev_grid(h_lo, h_hi, n_members):
        k = int(np.argmin(np.abs(hs - h)))
        xk = path[k][1]
        q1, p2, th, it, corr, jac = _newton_fixed_h(xk[0], xk[1], xk[2], h, mu, DEFAULT_RTOL, DEFAULT_ATOL, 25, 1e-13)
        members.append(build_orbit(q1, p2, th, mu, jac, it, corr))
    return OrbitFamily(mu=mu, equilibrium=equilibrium, z_eq=np.asarray(z_eq, dtype=float), members=members, continuation_path=[p[0] for p in path])


def default_energy_range(z_eq, params) -> tuple[float, float]:
    h = eval_hamiltonian(z_eq, params)
    return h + 1e-4, h + 5e-3
