"""Command-line front end.

Builds systems from flags or a JSON config, runs simulations and
verification checks, and writes CSV/JSON/SVG artifacts plus a run
manifest into the output directory. Every check prints one verdict line;
the exit code is 0 when all verdicts are PASS, 1 on any FAIL, and 2 on
usage errors.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import math
import os
import re
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    Section,
    bracket_matrix,
    circulation_period,
    find_fixed_point,
    integral_jacobian_rank,
    measure_frequencies,
    monodromy,
    reversibility_deviations,
    survey_uniqueness,
    verify_kronecker,
)
from .dsl import (
    eval_expr,
    format_hamiltonian_file,
    free_variables,
    hamiltonian_vector_field,
    parse_hamiltonian_file,
)
from .errors import DslError, InvalidValue, NumericalBlowup, ToruslabError
from .integrators import IntegratorConfig, integrate, integrate_batch
from .phase import MixedPoint, ModularDomain
from .svgplot import PlotStyle, plot_svg, trajectory_series
from .systems import (
    CONTROL,
    FAMILIES,
    SystemParams,
    build_control_system,
    build_system,
    canonical_torus,
    delta_tori,
    isolation_domain,
    nearby_torus,
    torus_point,
)

_OMEGA_TOKENS = {
    "sqrt2": math.sqrt(2.0),
    "sqrt3": math.sqrt(3.0),
    "golden": (1.0 + math.sqrt(5.0)) / 2.0,
}

_PI_RE = re.compile(r"^([+-]?)pi(?:/(\d+))?$")


def _parse_omega(value):
    if not isinstance(value, str):
        return tuple(float(v) for v in value)
    parts = []
    for tok in value.split(","):
        tok = tok.strip()
        if tok in _OMEGA_TOKENS:
            parts.append(_OMEGA_TOKENS[tok])
        else:
            parts.append(float(tok))
    return tuple(parts)


def _parse_angle(tok: str) -> float:
    tok = tok.strip()
    m = _PI_RE.match(tok)
    if m:
        sign = -1.0 if m.group(1) == "-" else 1.0
        den = int(m.group(2)) if m.group(2) else 1
        return sign * math.pi / den
    return float(tok)


def _parse_angles(value):
    if not isinstance(value, str):
        return tuple(float(v) for v in value)
    return tuple(_parse_angle(t) for t in value.split(","))


def _parse_floats(value):
    if not isinstance(value, str):
        return tuple(float(v) for v in value)
    return tuple(float(t) for t in value.split(","))


class _Run:
    """Output directory plus a hash ledger of everything written."""

    def __init__(self, out: Path):
        self.out = out
        self.outputs: dict[str, str] = {}

    def write(self, name: str, text: str) -> None:
        (self.out / name).write_text(text)
        self.outputs[name] = hashlib.sha256(text.encode()).hexdigest()


def _doc(claim, parameters, verdict, metrics, seed=None) -> str:
    return json.dumps(
        {"claim": claim, "parameters": parameters, "verdict": verdict,
         "metrics": metrics, "seed": seed},
        sort_keys=True, default=float, indent=2) + "\n"


def _need(cfg, key):
    if cfg.get(key) is None:
        raise InvalidValue(f"--{key.replace('_', '-')} is required here")
    return cfg[key]


def _system_from(cfg):
    fam = _need(cfg, "system")
    omega = cfg.get("omega")
    if fam == CONTROL:
        w = omega[0] if omega else 1.0
        return build_control_system(omega=w, nu=cfg.get("nu", 0.3))
    n = cfg.get("n", 1)
    if omega is None:
        omega = (1.0,) * n
    params = SystemParams(fam, n=n, m=cfg.get("m", 0),
                          l=cfg.get("l"), omega=tuple(omega))
    return build_system(params)


def _initial_point(sys, cfg):
    if cfg.get("point") is not None:
        return MixedPoint.of(sys.layout, np.array(cfg["point"], dtype=float))
    spec = canonical_torus(sys)
    angles = cfg.get("angles") or (0.0,) * len(spec.free_slots)
    return torus_point(spec, angles)


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_systems(cfg, run):
    rows = [
        ("ham-unique", "Hamiltonian with a unique bounded torus; "
                       "slots u_i phi_i x y p_j q_j"),
        ("ham-compact", "sine-compactified Hamiltonian; same slots, "
                        "all angular"),
        ("rev-unique", "reversible with a unique bounded torus; "
                       "slots phi_i v_k y q_j"),
        ("rev-compact", "sine-compactified reversible; same slots, "
                        "all angular"),
        ("control", "integrable comparison fixture (flags --omega, --nu)"),
    ]
    for name, text in rows:
        print(f"{name:<12} {text}")
    return {}


def _cmd_simulate(cfg, run):
    sys_ = _system_from(cfg)
    t = cfg["t"]
    store = cfg.get("store_every")
    if store is None:
        store = max(1, int(abs(t) / cfg["h"]) // 2000)
    ic = IntegratorConfig(method=cfg["method"], h=cfg["h"],
                          store_every=store)
    p0 = _initial_point(sys_, cfg)
    escaped = False
    escape_time = None
    try:
        traj = integrate(sys_, p0, t, ic)
    except NumericalBlowup as e:
        traj = e.trajectory
        escaped = True
        escape_time = e.time
    run.write("trajectory.csv", traj.to_csv())
    run.write("trajectory.svg",
              plot_svg(trajectory_series(traj),
                       PlotStyle(title=f"{sys_.family} trajectory")))
    metrics = {"t_final": float(traj.times[-1]), "n_steps": traj.n_steps,
               "escaped": escaped, "escape_time": escape_time}
    run.write("report.json",
              _doc("trajectory computed", _params(cfg), "completed",
                   metrics))
    tail = (f"escaped at t={escape_time:.6g}" if escaped
            else f"reached t={traj.times[-1]:g}")
    print(f"simulate: {tail}, {traj.n_steps} steps")
    return {"simulate": "PASS"}


def _delta_label(sys_, spec):
    bits = []
    for slot, value in spec.pinned:
        lab = sys_.layout.labels[slot]
        bits.append(f"{lab}={'pi' if value != 0.0 else '0'}")
    return "delta[" + ",".join(bits) + "]"


def _cmd_verify_torus(cfg, run):
    sys_ = _system_from(cfg)
    specs = [("canonical", canonical_torus(sys_))]
    # the full delta sweep costs 2^pinned runs, so it is opt-in
    if sys_.is_compact and cfg.get("deltas"):
        for spec in delta_tori(sys_):
            if all(v == 0.0 for _, v in spec.pinned):
                continue  # same torus as the canonical one
            specs.append((_delta_label(sys_, spec), spec))
    verdicts = {}
    docs = []
    for label, spec in specs:
        rep = verify_kronecker(sys_, spec, horizon=cfg["t"],
                               tol=cfg["tol"], seed=cfg["seed"],
                               config=IntegratorConfig(h=cfg["h"]))
        verdicts[f"torus[{label}]"] = "PASS" if rep.passed else "FAIL"
        docs.append(json.loads(rep.to_json()))
    run.write("report.json",
              json.dumps(docs, sort_keys=True, indent=2) + "\n")
    return verdicts


def _cmd_verify_invariants(cfg, run):
    sys_ = _system_from(cfg)
    rng = np.random.default_rng(cfg["seed"])
    pts = cfg["scale"] * rng.uniform(-1.0, 1.0, (cfg["points"], sys_.dim))
    ic = IntegratorConfig(method=cfg["method"], h=cfg["h"])
    res = integrate_batch(sys_, pts, cfg["t"], ic, layout=sys_.layout,
                          store_every=100)
    vals = sys_.integrals(res.stored_states)
    drift = np.max(np.abs(vals - vals[0]), axis=0)
    names = sys_.integral_names
    i_h = names.index("H")
    h_drift = float(drift[:, i_h].max())
    others = [i for i in range(len(names)) if i != i_h]
    o_drift = float(drift[:, others].max()) if others else 0.0
    ok = (not res.escaped.any() and h_drift <= cfg["tol_h"]
          and o_drift <= cfg["tol_i"])
    metrics = {"energy_drift": h_drift, "other_drift": o_drift,
               "escaped": int(res.escaped.sum())}
    run.write("report.json",
              _doc("first integrals are conserved", _params(cfg),
                   "pass" if ok else "fail", metrics,
                   cfg["seed"]))
    print(f"invariants: energy drift {h_drift:.3e}, "
          f"others {o_drift:.3e}")
    return {"invariants": "PASS" if ok else "FAIL"}


def _cmd_verify_brackets(cfg, run):
    sys_ = _system_from(cfg)
    rng = np.random.default_rng(cfg["seed"])
    states = rng.uniform(-1.5, 1.5, (cfg["points"], sys_.dim))
    B = bracket_matrix(sys_, states, scheme=cfg["scheme"])
    worst = float(np.max(np.abs(B)))
    ok = worst <= cfg["tol"]
    run.write("report.json",
              _doc("integrals are pairwise in involution", _params(cfg),
                   "pass" if ok else "fail",
                   {"max_abs_bracket": worst}, cfg["seed"]))
    print(f"brackets: max |{{I_i, I_j}}| = {worst:.3e} "
          f"over {cfg['points']} points")
    return {"brackets": "PASS" if ok else "FAIL"}


def _cmd_verify_reversibility(cfg, run):
    sys_ = _system_from(cfg)
    rng = np.random.default_rng(cfg["seed"])
    pts = cfg["scale"] * rng.uniform(-1.0, 1.0, (cfg["points"], sys_.dim))
    devs = reversibility_deviations(sys_, pts, cfg["t"])
    worst = float(devs.max())
    ok = worst <= cfg["tol"]
    run.write("report.json",
              _doc("involution conjugates the flow to its reverse",
                   _params(cfg), "pass" if ok else "fail",
                   {"max_deviation": worst}, cfg["seed"]))
    print(f"reversibility: max deviation {worst:.3e} "
          f"over {cfg['points']} points, t={cfg['t']:g}")
    return {"reversibility": "PASS" if ok else "FAIL"}


def _cmd_verify_rank(cfg, run):
    sys_ = _system_from(cfg)
    rng = np.random.default_rng(cfg["seed"])
    expected = sys_.params.n + sys_.params.m + 1
    ranks = []
    for _ in range(cfg["points"]):
        p = MixedPoint.of(sys_.layout,
                          0.5 * rng.uniform(-1.0, 1.0, sys_.dim))
        ranks.append(integral_jacobian_rank(sys_, p))
    torus_rank = integral_jacobian_rank(
        sys_, torus_point(canonical_torus(sys_),
                          (0.3,) * sys_.params.n))
    ok = all(r == expected for r in ranks) and torus_rank <= sys_.params.n
    metrics = {"generic_rank": max(ranks), "expected": expected,
               "torus_rank": torus_rank}
    run.write("report.json",
              _doc("integrals are independent off the torus and "
                   "degenerate on it", _params(cfg),
                   "pass" if ok else "fail", metrics,
                   cfg["seed"]))
    print(f"rank: generic {max(ranks)}/{expected}, "
          f"on-torus {torus_rank} (<= {sys_.params.n})")
    return {"rank": "PASS" if ok else "FAIL"}


def _cmd_monodromy(cfg, run):
    sys_ = _system_from(cfg)
    res = monodromy(sys_)
    mults = res.multipliers
    if sys_.family == CONTROL:
        w = sys_.params.omega[0]
        angle = 2.0 * math.pi * cfg.get("nu", 0.3) / w
        predicted = np.array([1.0, 1.0, np.exp(1j * angle),
                              np.exp(-1j * angle)])
        claim = "control multipliers rotate by the secondary frequency"
    else:
        predicted = np.ones(sys_.dim, dtype=complex)
        claim = "monodromy is the identity"
    # greedy match each multiplier to the closest predicted value
    remaining = list(predicted)
    worst = 0.0
    for lam in mults:
        gaps = [abs(lam - p) for p in remaining]
        k = int(np.argmin(gaps))
        worst = max(worst, gaps[k])
        remaining.pop(k)
    ok = worst <= cfg["tol"] and float(res.residuals.max()) <= 1e-8
    metrics = {"multipliers": [[z.real, z.imag] for z in mults],
               "max_match_gap": worst,
               "max_residual": float(res.residuals.max()),
               "period": res.period}
    run.write("report.json",
              _doc(claim, _params(cfg),
                   "pass" if ok else "fail", metrics))
    shown = ", ".join(f"{z.real:+.6f}{z.imag:+.6f}i" for z in mults)
    print(f"monodromy: multipliers [{shown}]")
    return {"monodromy": "PASS" if ok else "FAIL"}


def _cmd_fixedpoint(cfg, run):
    sys_ = _system_from(cfg)
    phi_slot = sys_.slots.phi.start
    section = Section(slot=phi_slot, value=0.0)
    if cfg.get("guess") is not None:
        guess = MixedPoint.of(sys_.layout,
                              np.array(cfg["guess"], dtype=float))
    else:
        guess = MixedPoint.of(sys_.layout, np.zeros(sys_.dim))
    res = find_fixed_point(sys_, section, guess, energy=cfg["energy"])
    run.write("report.json", res.to_json())
    where = ""
    if res.point is not None:
        coords = ", ".join(f"{lab}={res.point[lab]:.6g}"
                           for lab in sys_.layout.labels)
        where = f" at ({coords})"
    print(f"fixedpoint: {res.status}{where}, "
          f"residual {res.residual:.3e}"
          + (", singular linearization" if res.singular else ""))
    return {"fixedpoint": "PASS" if res.status == "found" else "FAIL"}


def _cmd_freq(cfg, run):
    sys_ = _system_from(cfg)
    spec = nearby_torus(sys_, _need(cfg, "offset"))
    p0 = torus_point(spec, (0.0,) * len(spec.free_slots))
    ic = IntegratorConfig(h=cfg["h"], store_every=cfg["store_every"])
    traj = integrate(sys_, p0, cfg["t"], ic)
    meas = measure_frequencies(traj, slots=spec.circulating)
    predicted = np.array(spec.predicted_frequency)
    gaps = np.abs(meas.values - predicted)
    ok = bool(np.max(gaps) <= cfg["tol"])
    labels = [sys_.layout.labels[s] for s in spec.circulating]
    series = []
    for k, slot in enumerate(spec.circulating):
        lab = labels[k]
        col = np.unwrap(traj.states[:, slot])
        series.append((lab, np.stack([traj.times, col], axis=1)))
        series.append((f"{lab} predicted",
                       np.stack([traj.times,
                                 col[0] + predicted[k] * traj.times],
                                axis=1)))
    run.write("frequencies.svg",
              plot_svg(series, PlotStyle(title="circulation frequencies",
                                         y_label="unwrapped angle")))
    metrics = {"measured": dict(zip(labels, map(float, meas.values))),
               "predicted": dict(zip(labels, map(float, predicted))),
               "zeta": spec.zeta, "max_gap": float(np.max(gaps))}
    run.write("report.json",
              _doc("nearby-torus frequencies match the closed form",
                   _params(cfg), "pass" if ok else "fail",
                   metrics))
    pairs = ", ".join(f"{lab}: {v:.6f} (predicted {p:.6f})"
                      for lab, v, p in zip(labels, meas.values, predicted))
    print(f"freq: {pairs}")
    return {"frequencies": "PASS" if ok else "FAIL"}


def _cmd_survey(cfg, run):
    sys_ = _system_from(cfg)
    phi = sys_.slots.phi
    if cfg.get("box") is not None:
        half = float(cfg["box"])
        intervals = tuple(None if phi.start <= s < phi.stop
                          else (-half, half) for s in range(sys_.dim))
        domain = ModularDomain(intervals=intervals)
    elif sys_.is_compact:
        domain = isolation_domain(sys_)
    else:
        intervals = tuple(None if phi.start <= s < phi.stop
                          else (-1.0, 1.0) for s in range(sys_.dim))
        domain = ModularDomain(intervals=intervals)
    jobs = cfg.get("jobs") or os.cpu_count() or 1
    rep = survey_uniqueness(sys_, domain, samples=cfg["samples"],
                            seed=cfg["seed"], horizon=cfg["horizon"],
                            jobs=jobs)
    run.write("survey.csv", rep.to_csv())
    run.write("report.json", rep.to_json())
    ok = rep.n_candidates == 0
    print(f"survey: {rep.n_candidates} candidates from "
          f"{cfg['samples']} samples "
          f"({int(rep.escaped.sum())} escaped, "
          f"{int(rep.skipped.sum())} skipped)")
    return {"survey": "PASS" if ok else "FAIL"}


def _cmd_dsl(cfg, run):
    path = Path(_need(cfg, "file"))
    text = path.read_text()
    verdicts = {}
    try:
        energy, pairing = parse_hamiltonian_file(text)
    except DslError as e:
        print(f"dsl: parse failed at position {e.position}: {e}")
        run.write("report.json",
                  _doc("hamiltonian text is well formed",
                       {"file": str(path)}, "fail",
                       {"error": str(e), "position": e.position}))
        return {"dsl-parse": "FAIL"}
    verdicts["dsl-parse"] = "PASS"

    printed = format_hamiltonian_file(energy, pairing)
    reparsed, _ = parse_hamiltonian_file(printed)
    twice = format_hamiltonian_file(reparsed, pairing)
    # cyclic angles appear in the pairing but not in the energy text
    names = sorted(set(free_variables(energy)) | set(pairing.names))
    rng = np.random.default_rng(0)
    samples = rng.uniform(-1.0, 1.0, (256, len(names)))
    dev = 0.0
    for row in samples:
        b = dict(zip(names, row))
        dev = max(dev, abs(eval_expr(energy, b) - eval_expr(reparsed, b)))
    round_ok = twice == printed and dev <= 1e-12
    verdicts["dsl-roundtrip"] = "PASS" if round_ok else "FAIL"

    derived = hamiltonian_vector_field(energy, pairing)
    step = 1e-6
    grad_dev = 0.0
    for row in samples[:64]:
        b = dict(zip(names, row))
        for pos, mom in pairing.pairs:
            for rate_name, wrt, sign in ((pos, mom, 1.0), (mom, pos, -1.0)):
                up = dict(b, **{wrt: b[wrt] + step})
                dn = dict(b, **{wrt: b[wrt] - step})
                fd = sign * (eval_expr(energy, up)
                             - eval_expr(energy, dn)) / (2.0 * step)
                got = eval_expr(derived.rate_exprs[rate_name], b)
                grad_dev = max(grad_dev, abs(got - fd))
    grad_ok = grad_dev <= 1e-6
    verdicts["dsl-gradients"] = "PASS" if grad_ok else "FAIL"

    metrics = {"roundtrip_dev": dev, "gradient_dev": grad_dev,
               "variables": names}
    run.write("report.json",
              _doc("hamiltonian text parses, round-trips, and "
                   "differentiates correctly", {"file": str(path)},
                   "pass" if round_ok and grad_ok else "fail",
                   metrics, 0))
    print(f"dsl: roundtrip dev {dev:.3e}, gradient dev {grad_dev:.3e}")
    return verdicts


def _cmd_oracle(cfg, run):
    zeta = _need(cfg, "zeta")
    period = circulation_period(zeta)
    closed = 2.0 * math.pi / math.sqrt(zeta * (zeta + 1.0))
    gap = abs(period - closed)
    ok = gap <= cfg["tol"]
    run.write("report.json",
              _doc("quadrature period matches the closed form",
                   {"zeta": zeta}, "pass" if ok else "fail",
                   {"quadrature": period, "closed_form": closed,
                    "gap": gap}))
    print(f"oracle period: quadrature {period:.12f}, "
          f"closed form {closed:.12f}")
    return {"period-oracle": "PASS" if ok else "FAIL"}


# ---------------------------------------------------------------------------
# argument plumbing

_COMMON_SYSTEM = {
    "system": (None, str),
    "n": (1, int),
    "m": (0, int),
    "l": (None, int),
    "omega": (None, _parse_omega),
    "nu": (0.3, float),
    "seed": (0, int),
}

_SPECS = {
    ("systems", "list"): {},
    ("simulate",): {
        **_COMMON_SYSTEM,
        "t": (10.0, float), "method": ("rk4", str), "h": (1e-2, float),
        "point": (None, _parse_floats), "angles": (None, _parse_angles),
        "store_every": (None, int),
    },
    ("verify", "torus"): {
        **_COMMON_SYSTEM, "t": (100.0, float), "tol": (1e-8, float),
        # on the torus every stage derivative is exact, so the step only
        # paces the sampling grid; 0.05 keeps the sweep cheap
        "h": (0.05, float), "deltas": (None, int),
    },
    ("verify", "invariants"): {
        **_COMMON_SYSTEM,
        "t": (1000.0, float), "h": (1e-2, float),
        "method": ("midpoint", str), "points": (3, int),
        "scale": (1e-3, float), "tol_h": (1e-8, float),
        "tol_i": (1e-6, float),
    },
    ("verify", "brackets"): {
        **_COMMON_SYSTEM, "points": (1000, int), "tol": (1e-8, float),
        "scheme": ("exact", str),
    },
    ("verify", "reversibility"): {
        **_COMMON_SYSTEM, "points": (100, int), "t": (5.0, float),
        "scale": (0.05, float), "tol": (1e-6, float),
    },
    ("verify", "rank"): {
        **_COMMON_SYSTEM, "points": (100, int),
    },
    ("monodromy",): {
        **_COMMON_SYSTEM, "tol": (1e-6, float),
    },
    ("fixedpoint",): {
        **_COMMON_SYSTEM, "energy": (0.0, float),
        "guess": (None, _parse_floats),
    },
    ("freq",): {
        **_COMMON_SYSTEM, "offset": (None, _parse_angles),
        "t": (800.0, float), "h": (1e-2, float),
        "store_every": (10, int), "tol": (1e-4, float),
    },
    ("survey",): {
        **_COMMON_SYSTEM, "samples": (10000, int), "box": (None, float),
        "horizon": (20.0, float), "jobs": (None, int),
    },
    ("dsl", "check"): {"file": (None, str)},
    ("oracle", "period"): {"zeta": (None, float), "tol": (1e-8, float)},
}

_HANDLERS = {
    ("systems", "list"): _cmd_systems,
    ("simulate",): _cmd_simulate,
    ("verify", "torus"): _cmd_verify_torus,
    ("verify", "invariants"): _cmd_verify_invariants,
    ("verify", "brackets"): _cmd_verify_brackets,
    ("verify", "reversibility"): _cmd_verify_reversibility,
    ("verify", "rank"): _cmd_verify_rank,
    ("monodromy",): _cmd_monodromy,
    ("fixedpoint",): _cmd_fixedpoint,
    ("freq",): _cmd_freq,
    ("survey",): _cmd_survey,
    ("dsl", "check"): _cmd_dsl,
    ("oracle", "period"): _cmd_oracle,
}

_FLAG_HELP = {
    "system": dict(choices=tuple(FAMILIES) + (CONTROL,),
                   help="family to build"),
    "omega": dict(metavar="W1,W2,...",
                  help="frequencies; tokens sqrt2, sqrt3, golden allowed"),
    "offset": dict(metavar="A1,A2,...",
                   help="action offsets; pi fractions like pi/2 allowed"),
    "angles": dict(metavar="A1,A2,...",
                   help="initial torus angles (pi fractions allowed)"),
    "point": dict(metavar="X1,X2,...", help="full initial state"),
    "guess": dict(metavar="X1,X2,...", help="full starting guess"),
    "file": dict(metavar="PATH", help="hamiltonian text file"),
    "deltas": dict(action="store_const", const=1,
                   help="also verify every sign-flipped torus"),
}


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="toruslab",
        description="simulate and verify systems with a unique or "
                    "isolated invariant torus")
    parser.add_argument("--version", action="version",
                        version=f"toruslab {__version__}")
    parser.add_argument("--replay", metavar="MANIFEST",
                        help="re-run a recorded manifest and compare")
    sub = parser.add_subparsers(dest="cmd")

    def add(name, keys, actions=None):
        sp = sub.add_parser(name)
        if actions:
            sp.add_argument("action", choices=actions)
        flags = {}
        for key in keys:
            flags.update(_SPECS[key])
        for flag in flags:
            extra = dict(_FLAG_HELP.get(flag, {}))
            sp.add_argument(f"--{flag.replace('_', '-')}",
                            default=None, **extra)
        sp.add_argument("--out", default=None, metavar="DIR",
                        help="output directory (default: current)")
        sp.add_argument("--config", default=None, metavar="JSON",
                        help="JSON file of flag defaults")
        return sp

    checks = ["torus", "invariants", "brackets", "reversibility", "rank"]
    add("systems", [("systems", "list")], actions=["list"])
    add("simulate", [("simulate",)])
    add("verify", [("verify", c) for c in checks], actions=checks)
    add("monodromy", [("monodromy",)])
    add("fixedpoint", [("fixedpoint",)])
    add("freq", [("freq",)])
    add("survey", [("survey",)])
    add("dsl", [("dsl", "check")], actions=["check"])
    add("oracle", [("oracle", "period")], actions=["period"])
    return parser


def _key_of(args):
    if getattr(args, "action", None) is not None:
        return (args.cmd, args.action)
    return (args.cmd,)


def _resolve(args, key):
    spec = _SPECS[key]
    file_cfg = {}
    if args.config:
        file_cfg = json.loads(Path(args.config).read_text())
    cfg = {}
    for name, (default, conv) in spec.items():
        value = getattr(args, name, None)
        if value is None:
            value = file_cfg.get(name, file_cfg.get(
                name.replace("_", "-"), default))
        if value is not None and conv is not None:
            value = conv(value)
        cfg[name] = value
    return cfg


def _params(cfg):
    return {k: v for k, v in cfg.items() if v is not None}


def _argv_from(key, cfg):
    argv = list(key)
    for name in sorted(cfg):
        value = cfg[name]
        if value is None:
            continue
        flag = "--" + name.replace("_", "-")
        if isinstance(value, (tuple, list)):
            argv += [flag, ",".join(repr(float(v)) for v in value)]
        else:
            argv += [flag, str(value)]
    return argv


def _write_manifest(run, key, cfg, verdicts, t0):
    doc = {
        "tool": "toruslab",
        "version": __version__,
        "argv": _argv_from(key, cfg),
        "config": _params(cfg),
        "seed": cfg.get("seed"),
        "duration_s": round(time.perf_counter() - t0, 6),
        "verdicts": verdicts,
        "outputs": run.outputs,
    }
    (run.out / "manifest.json").write_text(
        json.dumps(doc, sort_keys=True, indent=2, default=float) + "\n")


def _replay(path: str) -> int:
    doc = json.loads(Path(path).read_text())
    with tempfile.TemporaryDirectory() as td:
        code = main(list(doc["argv"]) + ["--out", td])
        fresh = json.loads((Path(td) / "manifest.json").read_text())
    same_verdicts = fresh["verdicts"] == doc["verdicts"]
    same_outputs = fresh["outputs"] == doc["outputs"]
    if same_verdicts and same_outputs:
        print(f"replay: reproduced {len(doc['outputs'])} outputs and "
              f"{len(doc['verdicts'])} verdicts")
        return 0
    for name, verdict in doc["verdicts"].items():
        got = fresh["verdicts"].get(name, "missing")
        if got != verdict:
            print(f"replay: verdict {name} was {verdict}, got {got}",
                  file=sys.stderr)
    for name, digest in doc["outputs"].items():
        got = fresh["outputs"].get(name, "missing")
        if got != digest:
            print(f"replay: output {name} differs", file=sys.stderr)
    return 1


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return 0 if e.code in (0, None) else int(e.code)
    if args.replay:
        return _replay(args.replay)
    if not args.cmd:
        parser.print_usage(sys.stderr)
        return 2
    key = _key_of(args)
    t0 = time.perf_counter()
    try:
        cfg = _resolve(args, key)
        out = Path(args.out) if args.out else Path(".")
        out.mkdir(parents=True, exist_ok=True)
        run = _Run(out)
        verdicts = _HANDLERS[key](cfg, run)
    except (ToruslabError, OSError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    _write_manifest(run, key, cfg, verdicts, t0)
    for name, verdict in verdicts.items():
        print(f"{name}: {verdict}")
    return 0 if all(v == "PASS" for v in verdicts.values()) else 1


if __name__ == "__main__":
    raise SystemExit(main())
