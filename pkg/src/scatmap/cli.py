"""
Command-line driver: ``scatmap <command> [--config PATH] [--out DIR] [--input PATH ...]``.

Commands and the artifacts they read and write (``<out>/<kind>.json`` plus a
``<kind>.csv`` series and a ``<kind>_summary.txt``)::

    equilibria                          -> equilibria
    family                              -> family
    manifolds   --input family          -> manifolds
    channel     --input family manifolds -> channel
    melnikov    --input family channel   -> melnikov
    validate    --input family channel melnikov -> validation

Exit codes: 0 success, 2 parse or precondition failure (including a missing,
stale or mismatched input artifact), 3 numerical failure (including a check
whose verdict is negative).

CSV columns:

    equilibria.csv  name, q1, q2, energy, grad_norm, lam, omega, lam_poly, omega_poly, verdict
    family.csv      equilibrium, energy, action, period, rho_u, rho_s, closure, energy_drift, multiplier_product_error
    manifolds.csv   branch, theta, c1, c2, time
    channel.csv     index, theta_minus, theta_plus, phase_shift, angle, c1, c2
    melnikov.csv    quantity, value
    validation.csv  eps, delta_I, delta_theta, err_I, err_theta, bookkeeping_error
"""

from __future__ import annotations

import argparse
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .config import ConfigError, RunConfig, load_config
from .dynamics import (
    CollisionError,
    EquilibriumError,
    IntegrationError,
    PerturbationSpec,
    characteristic_polynomial_roots,
    classify_equilibrium,
    eval_hamiltonian,
    find_collinear_equilibria,
    flow,
    hamiltonian_gradient,
)
from .io import ArtifactError, read_artifact, write_artifact, write_csv
from .manifolds import (
    ManifoldConvergenceError,
    NoIntersectionError,
    Region,
    SectionCut,
    channel_point_from_dict,
    channel_point_to_dict,
    find_channel,
    globalize_manifold,
    interior_section,
    min_distance_to_orbit,
    moon_section,
    phase_shift_along_orbit,
)
from .melnikov import FrequencyError, NonDecayingIntegrandError, melnikov
from .periodic_orbits import (
    CorrectionError,
    FamilyFoldError,
    closure_residual,
    continue_family,
    energy_drift,
    family_from_dict,
    family_to_dict,
    orbit_from_dict,
    orbit_to_dict,
)
from .validation import ScalingError, TransitDestroyedError, deviation_slope, gronwall_check, scaling_study

EXIT_OK, EXIT_PRECONDITION, EXIT_NUMERICAL = 0, 2, 3

NUMERICAL_ERRORS = (
    CollisionError,
    CorrectionError,
    EquilibriumError,
    FamilyFoldError,
    FrequencyError,
    IntegrationError,
    ManifoldConvergenceError,
    NoIntersectionError,
    NonDecayingIntegrandError,
    ScalingError,
    TransitDestroyedError,
    np.linalg.LinAlgError,
)


class PreconditionError(ValueError):
    """Inputs are inconsistent with the configuration or each other."""


class CheckFailed(RuntimeError):
    """A computed verdict is negative; artifacts are still written."""


# ---------------------------------------------------------------------------
# shared helpers


def _fmt(x) -> str:
    return repr(float(x))


def _write_summary(out: Path, kind: str, lines: list) -> None:
    from .io import atomic_write

    atomic_write(out / f"{kind}_summary.txt", "\n".join(lines) + "\n")


def _need(inputs: dict, kind: str) -> dict:
    if kind not in inputs:
        raise ArtifactError(f"missing input artifact of kind {kind!r} (pass it with --input)")
    return inputs[kind]


def _check_chain(doc: dict, inputs: dict, kinds) -> None:
    """Every upstream hash recorded in ``doc`` must match the supplied artifact."""
    for k in kinds:
        want = doc["inputs"].get(k)
        if want is not None and want != inputs[k]["hash"]:
            raise ArtifactError(f"{doc['kind']} artifact was built from a different {k} artifact (stale hash)")


def _check_mu(cfg: RunConfig, doc: dict) -> None:
    mu = doc["payload"]["config"]["system"]["mu"]
    if float(mu) != cfg.system.mu:
        raise PreconditionError(f"{doc['kind']} artifact has mu = {mu}, config has {cfg.system.mu}")


def _families(doc: dict) -> dict:
    return {k: family_from_dict(v) for k, v in doc["payload"]["families"].items()}


def _section(cfg: RunConfig):
    m, mu = cfg.manifold, cfg.system.mu
    if m.section == "interior":
        return interior_section(mu, m.crossing)
    return moon_section(mu, q2_sign=1 if m.section == "moon" else -1, crossing=m.crossing)


def _region(cfg: RunConfig) -> Region:
    r = cfg.manifold.region
    return Region(q1=(-r, r), q2=(-r, r))


def perturbation_from_config(cfg: RunConfig, t0: float) -> PerturbationSpec:
    """Perturbation with its window placed ``window_offset`` after ``t0``; ``epsilon = 1``."""
    p = cfg.perturbation
    if p.kind == "zero":
        return PerturbationSpec()
    window = None
    if p.windowed:
        window = (t0 + p.window_offset, t0 + p.window_offset + p.window_duration)
    d = np.asarray(p.direction, dtype=float)
    return PerturbationSpec(
        kind=p.kind,
        epsilon=1.0,
        direction=tuple(d / np.linalg.norm(d)),
        magnitude=p.magnitude,
        window=window,
        ramp=p.ramp,
        kappa=p.kappa,
    )


# ---------------------------------------------------------------------------
# commands


def cmd_equilibria(cfg: RunConfig, out: Path, inputs: dict) -> int:
    mu = cfg.system.mu
    eqs = find_collinear_equilibria(mu)
    rows, report, ok = [], {}, True
    lines = [f"scatmap {__version__} equilibria, mu = {_fmt(mu)}"]
    for name in ("L1", "L2", "L3"):
        z = eqs[name]
        g = float(np.linalg.norm(hamiltonian_gradient(z, mu)))
        roots = characteristic_polynomial_roots(z, mu)
        lam_poly = float(max(r.real for r in roots))
        om_poly = float(max(r.imag for r in roots))
        try:
            sp = classify_equilibrium(z, mu)
            lam, om, verdict = sp.rate, sp.frequency, "saddle-center"
        except EquilibriumError:
            lam, om, verdict = math.nan, math.nan, "not saddle-center"
        good = verdict == "saddle-center" and g < 1e-12
        ok &= good
        report[name] = {
            "z": z,
            "energy": eval_hamiltonian(z, mu),
            "grad_norm": g,
            "lam": lam,
            "omega": om,
            "lam_poly": lam_poly,
            "omega_poly": om_poly,
            "verdict": verdict,
        }
        rows.append([name, z[2], z[3], eval_hamiltonian(z, mu), g, lam, om, lam_poly, om_poly, verdict])
        lines.append(
            f"{name}: q1 = {_fmt(z[2])}, H0 = {_fmt(eval_hamiltonian(z, mu))}, |grad H0| = {g:.3e}, "
            f"lambda = {_fmt(lam)}, omega = {_fmt(om)}: saddle-center condition {'holds' if good else 'FAILS'}"
        )
    payload = {"config": cfg.to_dict(), "equilibria": report, "saddle_center": ok}
    h = write_artifact(out / "equilibria.json", "equilibria", payload)
    write_csv(
        out / "equilibria.csv",
        ["name", "q1", "q2", "energy", "grad_norm", "lam", "omega", "lam_poly", "omega_poly", "verdict"],
        rows,
    )
    lines.append(f"artifact hash {h}")
    _write_summary(out, "equilibria", lines)
    if not ok:
        raise CheckFailed("saddle-center condition fails at a collinear point")
    return EXIT_OK


def build_families(cfg: RunConfig) -> dict:
    """The families the configured channel needs, keyed by equilibrium name."""
    mu = cfg.system.mu
    eqs = find_collinear_equilibria(mu)
    f = cfg.family
    n = f.n_members
    if cfg.channel.kind == "homoclinic":
        name = cfg.system.equilibrium
        h_eq = eval_hamiltonian(eqs[name], mu)
        rng = (h_eq + f.offset_min, h_eq + f.offset_max)
        return {name: continue_family(eqs[name], mu, rng, n, equilibrium=name)}
    h1 = eval_hamiltonian(eqs["L1"], mu)
    h2 = eval_hamiltonian(eqs["L2"], mu)
    h_chan = h2 + cfg.channel.heteroclinic_offset
    top = max(h2 + f.offset_max, h_chan + f.offset_min)
    r1 = (h1 + f.offset_min, max(h_chan + cfg.channel.heteroclinic_offset, h1 + f.offset_max))
    r2 = (h2 + f.offset_min, top)
    return {
        "L1": continue_family(eqs["L1"], mu, r1, n, equilibrium="L1"),
        "L2": continue_family(eqs["L2"], mu, r2, n, equilibrium="L2"),
    }


def cmd_family(cfg: RunConfig, out: Path, inputs: dict) -> int:
    fams = build_families(cfg)
    rows, lines, worst = [], [f"scatmap {__version__} Lyapunov families, mu = {_fmt(cfg.system.mu)}"], {}
    for name, fam in fams.items():
        clo = [closure_residual(o) for o in fam.members]
        dri = [energy_drift(o) for o in fam.members]
        mpe = [abs(o.rho_u * o.rho_s - 1.0) for o in fam.members]
        fc = fam.frequency_consistency()
        for o, c, d, m in zip(fam.members, clo, dri, mpe):
            rows.append([name, o.energy, o.action, o.period, o.rho_u, o.rho_s, c, d, m])
        worst[name] = {
            "closure": max(clo),
            "energy_drift": max(dri),
            "multiplier_product_error": max(mpe),
            "frequency_consistency": float(np.max(fc)) if len(fc) else 0.0,
        }
        lo, hi = fam.h_range
        lines += [
            f"{name}: {len(fam.members)} orbits over H0 in [{_fmt(lo)}, {_fmt(hi)}]",
            f"{name}: max closure residual {max(clo):.3e}, max energy drift {max(dri):.3e}, "
            f"max |rho_u rho_s - 1| {max(mpe):.3e}",
            f"{name}: action-frequency relation dh/dI = omega, max relative error {worst[name]['frequency_consistency']:.3e}",
        ]
    payload = {
        "config": cfg.to_dict(),
        "families": {k: family_to_dict(v) for k, v in fams.items()},
        "primary": "L1" if cfg.channel.kind == "heteroclinic" else cfg.system.equilibrium,
        "checks": worst,
    }
    h = write_artifact(out / "family.json", "family", payload)
    write_csv(
        out / "family.csv",
        ["equilibrium", "energy", "action", "period", "rho_u", "rho_s", "closure", "energy_drift", "multiplier_product_error"],
        rows,
    )
    lines.append(f"artifact hash {h}")
    _write_summary(out, "family", lines)
    return EXIT_OK


def channel_orbits(cfg: RunConfig, fams: dict):
    """Unstable-side and stable-side orbits at the channel energy."""
    if cfg.channel.kind == "homoclinic":
        fam = fams[cfg.system.equilibrium]
        lo, hi = fam.h_range
        o = fam.orbit_at_energy(lo + cfg.channel.energy_fraction * (hi - lo))
        return o, o
    eqs = find_collinear_equilibria(cfg.system.mu)
    h = eval_hamiltonian(eqs["L2"], cfg.system.mu) + cfg.channel.heteroclinic_offset
    return fams["L1"].orbit_at_energy(h), fams["L2"].orbit_at_energy(h)


def manifold_cuts(cfg: RunConfig, orbit_u, orbit_s):
    """Unstable cut of ``orbit_u`` and stable cut of ``orbit_s`` on the configured section."""
    m = cfg.manifold
    kw = dict(delta=m.delta, n_rays=m.n_rays, max_gap=m.max_gap, region=_region(cfg))
    sec = _section(cfg)
    return (
        globalize_manifold(orbit_u, "u", sec, sign=m.sign_u, **kw),
        globalize_manifold(orbit_s, "s", sec, sign=m.sign_s, **kw),
    )


def channel_points(cfg: RunConfig, cut_u, cut_s) -> list:
    """Refined transverse intersections of the cuts."""
    seed = tuple(cfg.channel.seed) if cfg.channel.seed else None
    return find_channel(cut_u, cut_s, angle_min=cfg.channel.angle_min, seed=seed, region=_region(cfg))


def cmd_manifolds(cfg: RunConfig, out: Path, inputs: dict) -> int:
    fdoc = _need(inputs, "family")
    _check_mu(cfg, fdoc)
    fams = _families(fdoc)
    ou, os_ = channel_orbits(cfg, fams)
    cu, cs = manifold_cuts(cfg, ou, os_)
    rows = []
    for cut in (cu, cs):
        for th, c, t in zip(cut.thetas, cut.curve, cut.times):
            rows.append([cut.branch, th, c[0], c[1], t])
    payload = {
        "config": cfg.to_dict(),
        "energy": ou.energy,
        "orbit_u": orbit_to_dict(ou),
        "orbit_s": None if os_ is ou else orbit_to_dict(os_),
        "cuts": {"u": cu.to_dict(), "s": cs.to_dict()},
        "checks": {
            "energy_error": max(cu.max_energy_error(), cs.max_energy_error()),
            "section_error": max(cu.max_section_error(), cs.max_section_error()),
        },
    }
    h = write_artifact(out / "manifolds.json", "manifolds", payload, {"family": fdoc["hash"]})
    write_csv(out / "manifolds.csv", ["branch", "theta", "c1", "c2", "time"], rows)
    _write_summary(
        out,
        "manifolds",
        [
            f"scatmap {__version__} manifold cuts at H0 = {_fmt(ou.energy)}",
            f"unstable cut: {len(cu.thetas)} rays, {len(cu.lost)} lost; stable cut: {len(cs.thetas)} rays, {len(cs.lost)} lost",
            f"max energy error {payload['checks']['energy_error']:.3e}, max section error {payload['checks']['section_error']:.3e}",
            f"artifact hash {h}",
        ],
    )
    return EXIT_OK


def _restore_cuts(doc: dict):
    p = doc["payload"]
    mu = float(p["config"]["system"]["mu"])
    ou = orbit_from_dict(p["orbit_u"], mu)
    os_ = ou if p["orbit_s"] is None else orbit_from_dict(p["orbit_s"], mu)
    return SectionCut.from_dict(p["cuts"]["u"], ou), SectionCut.from_dict(p["cuts"]["s"], os_)


def convergence_after(cp, n_periods: float = 4.0) -> dict:
    """
    Closest sampled approach to the target orbits within ``n_periods``
    backward (unstable side) and forward (stable side) of the channel point.
    """
    du = min_distance_to_orbit(cp.z0, cp.orbit_u, "u", n_periods)[0]
    ds = min_distance_to_orbit(cp.z0, cp.orbit_s, "s", n_periods)[0]
    return {"unstable_side": float(du), "stable_side": float(ds)}


def cmd_channel(cfg: RunConfig, out: Path, inputs: dict) -> int:
    fdoc, mdoc = _need(inputs, "family"), _need(inputs, "manifolds")
    _check_mu(cfg, fdoc)
    _check_chain(mdoc, inputs, ["family"])
    cu, cs = _restore_cuts(mdoc)
    pts = channel_points(cfg, cu, cs)
    k = cfg.channel.index
    if not 0 <= k < len(pts):
        raise PreconditionError(f"channel index {k} out of range ({len(pts)} points found)")
    cp = pts[k]
    # with two frequencies theta+ - theta- drifts along the orbit: no invariant
    shifts = [] if cp.heteroclinic else phase_shift_along_orbit(cp, 10)
    conv = convergence_after(cp)
    checks = {
        "phase_shift_std": None if cp.heteroclinic else float(np.std(shifts)),
        # I(z0+) - I(z0-) to first order: energy mismatch over the frequency
        "action_mismatch": float(
            abs(eval_hamiltonian(cp.z0, cp.orbit_u.mu) - cp.orbit_s.energy) / cp.orbit_s.omega
            + abs(cp.orbit_u.energy - cp.orbit_s.energy) / cp.orbit_s.omega
        ),
        "angle": float(cp.angle),
        "convergence": conv,
    }
    rows = []
    for i, c in enumerate(pts):
        q = c.section.project(c.z0)
        rows.append([i, c.theta_minus, c.theta_plus, c.phase_shift, c.angle, q[0], q[1]])
    payload = {
        "config": cfg.to_dict(),
        "points": [channel_point_to_dict(c) for c in pts],
        "selected": k,
        "phase_shifts": shifts,
        "checks": checks,
    }
    h = write_artifact(out / "channel.json", "channel", payload, {"family": fdoc["hash"], "manifolds": mdoc["hash"]})
    write_csv(out / "channel.csv", ["index", "theta_minus", "theta_plus", "phase_shift", "angle", "c1", "c2"], rows)
    kind = "heteroclinic" if cp.heteroclinic else "homoclinic"
    lines = [
        f"scatmap {__version__} {kind} channel at H0 = {_fmt(cp.energy)}: {len(pts)} transverse points, selected #{k}",
        f"crossing angle of the cuts (transversality) {_fmt(cp.angle)} rad",
        f"distance to the orbits within 4 periods: unstable side {conv['unstable_side']:.3e}, stable side {conv['stable_side']:.3e}",
    ]
    if cp.heteroclinic:
        lines.insert(2, f"asymptotic phases theta- = {_fmt(cp.theta_minus)}, theta+ = {_fmt(cp.theta_plus)}")
    else:
        lines.insert(
            2,
            f"unperturbed scattering map phase shift theta+ - theta- = {_fmt(cp.phase_shift)}, "
            f"std over 10 representatives {checks['phase_shift_std']:.3e}",
        )
    lines.append(f"unperturbed scattering map preserves the action: |I+ - I-| <= {checks['action_mismatch']:.3e}")
    lines.append(f"artifact hash {h}")
    _write_summary(out, "channel", lines)
    return EXIT_OK


def _restore_channel(cfg: RunConfig, doc: dict):
    p = doc["payload"]
    return channel_point_from_dict(p["points"][p["selected"]], cfg.system.mu)


def cmd_melnikov(cfg: RunConfig, out: Path, inputs: dict) -> int:
    fdoc, cdoc = _need(inputs, "family"), _need(inputs, "channel")
    _check_mu(cfg, fdoc)
    _check_chain(cdoc, inputs, ["family"])
    cp = _restore_channel(cfg, cdoc)
    spec = perturbation_from_config(cfg, cp.t0)
    tol = {"tol_tail": cfg.melnikov.tol_tail, "min_periods": cfg.melnikov.min_periods}
    res = melnikov(cp, spec, angle=not cp.heteroclinic, **tol)
    d = res.to_dict()
    if cp.heteroclinic:
        # no single angle: the two ends live on orbits of different frequency
        d["S_theta"] = None
    payload = {"config": cfg.to_dict(), "spec": spec.to_dict(), "tolerances": tol, "result": d, "tails_ok": res.tails_ok()}
    h = write_artifact(out / "melnikov.json", "melnikov", payload, {"family": fdoc["hash"], "channel": cdoc["hash"]})
    rows = [[k, v] for k, v in d.items() if isinstance(v, float)]
    rows += [[f"tail[{k}]", v] for k, v in d["tails"].items()]
    write_csv(out / "melnikov.csv", ["quantity", "value"], rows)
    lines = [
        f"scatmap {__version__} first-order scattering map corrections, perturbation {spec.kind}",
        f"action correction S_I = {_fmt(res.S_I)} (change in I is eps S_I + O(eps^2))",
    ]
    if not cp.heteroclinic:
        lines.append(f"angle correction S_theta = {_fmt(res.S_theta)} (change in theta is eps S_theta + O(eps^2))")
    lines += [
        "tail estimates " + ", ".join(f"{k} {v:.2e}" for k, v in sorted(d["tails"].items())),
        f"tails below {tol['tol_tail']:.1e}: {'yes' if res.tails_ok() else 'NO'}",
        f"artifact hash {h}",
    ]
    _write_summary(out, "melnikov", lines)
    if not res.tails_ok():
        raise CheckFailed("tail estimates exceed tol_tail")
    return EXIT_OK


def cmd_validate(cfg: RunConfig, out: Path, inputs: dict) -> int:
    fdoc, cdoc, mdoc = _need(inputs, "family"), _need(inputs, "channel"), _need(inputs, "melnikov")
    _check_mu(cfg, fdoc)
    _check_chain(cdoc, inputs, ["family"])
    _check_chain(mdoc, inputs, ["family", "channel"])
    cp = _restore_channel(cfg, cdoc)
    if cp.heteroclinic:
        raise PreconditionError("direct validation needs a homoclinic channel")
    spec = perturbation_from_config(cfg, cp.t0)
    if spec.support() is None or spec.kind == "zero":
        raise PreconditionError("direct validation needs a windowed, nonzero perturbation")
    if mdoc["payload"]["spec"] != spec.to_dict():
        raise PreconditionError("melnikov artifact was computed for a different perturbation")
    fam = _families(fdoc)[fdoc["payload"]["primary"]]
    r = mdoc["payload"]["result"]
    rep = scaling_study(cp, spec, cfg.validation.eps_grid, fam, r["S_I"], r["S_theta"])
    # start where the thrust is at full strength so the horizon sees it
    t_a = spec.window[0]
    z_a = flow(cp.z0, t_a - cp.t0, cp.orbit_u.mu)
    gw = gronwall_check(z_a, t_a, spec, cfg.validation.gronwall_eps, cp.orbit_u.mu, rho0=cfg.validation.rho0)
    e0 = max(float(min(cfg.validation.gronwall_eps)), 1e-6)
    lin = deviation_slope(z_a, t_a, t_a + 0.5, spec, [8 * e0, 4 * e0, 2 * e0, e0], cp.orbit_u.mu)
    book = float(np.max(rep.bookkeeping))
    verdicts = {
        "remainder_slope_I": bool(1.7 <= rep.slope_I <= 2.3),
        "remainder_slope_theta": bool(1.7 <= rep.slope_theta <= 2.3),
        "first_order_slope": bool(0.95 <= rep.slope_first_order <= 1.05),
        "energy_bookkeeping": bool(book < 1e-10),
        "gronwall_bound": gw.passed,
        "deviation_linear": bool(0.9 <= lin <= 1.1),
    }
    payload = {
        "config": cfg.to_dict(),
        "spec": spec.to_dict(),
        "scaling": rep.to_dict(),
        "gronwall": gw.to_dict(),
        "deviation_slope": lin,
        "verdicts": verdicts,
    }
    inp = {"family": fdoc["hash"], "channel": cdoc["hash"], "melnikov": mdoc["hash"]}
    h = write_artifact(out / "validation.json", "validation", payload, inp)
    rows = [
        [e, a, b, c, d, k]
        for e, a, b, c, d, k in zip(rep.eps, rep.delta_I, rep.delta_theta, rep.err_I, rep.err_theta, rep.bookkeeping)
    ]
    write_csv(out / "validation.csv", ["eps", "delta_I", "delta_theta", "err_I", "err_theta", "bookkeeping_error"], rows)
    lines = [
        f"scatmap {__version__} direct validation of the first-order scattering map, eps grid {[float(e) for e in rep.eps]}",
        f"remainder |dI - eps S_I| log-log slope {rep.slope_I:.4f} CI [{rep.ci_I[0]:.3f}, {rep.ci_I[1]:.3f}] (expected 2)",
        f"remainder |dtheta - eps S_theta| log-log slope {rep.slope_theta:.4f} CI [{rep.ci_theta[0]:.3f}, {rep.ci_theta[1]:.3f}] (expected 2)",
        f"first-order |dI| log-log slope {rep.slope_first_order:.4f} (expected 1)",
        f"energy rate identity H0(t1) - H0(t0) = eps int X1 H0 dt, max error {book:.3e}",
        "Gronwall bound K eps^rho0 over k ln(1/eps): "
        + ", ".join(f"eps {e:.0e} dev {d:.2e} < {b:.2e}" for e, d, b in zip(gw.eps, gw.deviations, gw.bounds)),
        f"deviation at fixed time vs eps, log-log slope {lin:.4f} (expected 1)",
    ]
    lines += [f"check {k}: {'PASS' if v else 'FAIL'}" for k, v in verdicts.items()]
    lines.append(f"artifact hash {h}")
    _write_summary(out, "validation", lines)
    if not all(verdicts.values()):
        raise CheckFailed("validation checks failed: " + ", ".join(k for k, v in verdicts.items() if not v))
    return EXIT_OK


COMMANDS = {
    "equilibria": cmd_equilibria,
    "family": cmd_family,
    "manifolds": cmd_manifolds,
    "channel": cmd_channel,
    "melnikov": cmd_melnikov,
    "validate": cmd_validate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="scatmap", description="Scattering-map pipeline for the planar restricted three-body problem.")
    ap.add_argument("--version", action="version", version=f"scatmap {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, default=None, help="INI run configuration (defaults if omitted)")
        p.add_argument("--out", type=Path, default=Path("."), help="output directory")
        p.add_argument("--input", type=Path, nargs="*", default=[], help="upstream artifact files")
    return ap


def run(argv=None) -> int:
    """Parse arguments, run one command and map failures to exit codes."""
    try:
        args = build_parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_PRECONDITION
    try:
        cfg = load_config(args.config) if args.config else RunConfig()
        inputs = {}
        for path in args.input:
            doc = read_artifact(path)
            if doc["kind"] in inputs:
                raise ArtifactError(f"two input artifacts of kind {doc['kind']!r}")
            inputs[doc["kind"]] = doc
        return COMMANDS[args.command](cfg, args.out, inputs)
    except (ConfigError, ArtifactError, PreconditionError, OSError) as exc:
        print(f"scatmap {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION
    except CheckFailed as exc:
        print(f"scatmap {args.command}: check failed: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except NUMERICAL_ERRORS as exc:
        print(f"scatmap {args.command}: numerical failure ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"scatmap {args.command}: precondition failed: {exc}", file=sys.stderr)
        return EXIT_PRECONDITION


def main(argv=None) -> None:
    sys.exit(run(argv))


if __name__ == "__main__":
    main()
