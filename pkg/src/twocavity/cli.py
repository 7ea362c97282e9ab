"""Command-line runner: one subcommand per experiment, CSV output plus a JSON manifest.

Parameter precedence, lowest first: built-in defaults, ``--preset``, ``--config``
file (flat ``key = value`` lines), explicit flags.  Output goes to ``--out`` or,
failing that, ``$TWOCAVITY_OUT`` or ``./results``.
"""

from __future__ import annotations

import argparse
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .dynamics import DarkStateError, EvolutionConfig, NumericalInstabilityError, early_time_model
from .entanglement import entropy_series, post_detection_run
from .iohelpers import stable_hash, write_csv, write_json
from .model import SystemParams, build_model
from .observables import (ConsistencyError, coupled_densities, early_densities,
                          independent_baseline, phi_sweep)
from .trajectories import (build_histograms, default_config, run_ensemble,
                           sample_independent_pairs)

OUT_ENV = "TWOCAVITY_OUT"

PARAM_KEYS = {"g": "g_mag", "phi": "phi", "delta": "delta", "kappa": "kappa", "deltaT": "delta_T"}
EVOLUTION_KEYS = ("tmax", "dt", "stride")
EXTRA_KEYS = {
    "densities": (),
    "baseline": (),
    "phi-sweep": ("t_fixed", "n_phi", "phi_max", "model"),
    "early-time": (),
    "trajectories": ("n", "seed", "workers"),
    "histograms": ("n", "seed", "workers", "bin_width"),
    "entropy": ("convention",),
    "post-detection": ("start", "state"),
}

DEFAULTS = {
    "g": 0.25, "phi": 0.0, "delta": 0.5, "kappa": 1.0, "deltaT": 0.1,
    "tmax": 20.0, "dt": 1e-3, "stride": 10,
    "t_fixed": 0.4, "n_phi": 33, "phi_max": float(np.pi / 4), "model": "full",
    "n": 20000, "seed": 7, "workers": 1, "bin_width": 0.5,
    "convention": "unnormalized", "start": "left-atom", "state": "unconditional",
}

# named parameter sets for the standard scenarios
PRESETS = {
    "weak": ("densities", {"g": 0.25, "delta": 0.5, "deltaT": 0.1, "tmax": 20.0}),
    "weaker": ("densities", {"g": 0.1, "delta": 0.5, "deltaT": 0.1, "tmax": 20.0}),
    "independent-weaker": ("baseline", {"g": 0.1, "delta": 0.5, "deltaT": 0.1, "tmax": 20.0}),
    "click-histograms": ("histograms", {"g": 0.25, "delta": 0.5, "n": 20000, "seed": 7,
                                        "bin_width": 0.5}),
    "phase-eighth": ("densities", {"g": 0.25, "delta": 0.5, "phi": float(np.pi / 8)}),
    "phase-quarter": ("densities", {"g": 0.25, "delta": 0.5, "phi": float(np.pi / 4)}),
    "early-phases": ("early-time", {"g": 0.25, "delta": 0.5, "tmax": 1.0, "stride": 1}),
    "phase-scan": ("phi-sweep", {"g": 0.25, "delta": 0.5, "t_fixed": 0.4}),
    "entropy-strong": ("entropy", {"g": 5.0, "delta": 0.5, "tmax": 10.0, "stride": 1}),
    "entropy-weak": ("entropy", {"g": 0.25, "delta": 0.5, "tmax": 20.0}),
    "single-strong": ("post-detection", {"g": 2.0, "delta": 0.5, "tmax": 10.0, "stride": 1}),
    "single-weak": ("post-detection", {"g": 0.2, "delta": 0.1, "tmax": 20.0}),
}

_FLOATS = {"g", "phi", "delta", "kappa", "deltaT", "tmax", "dt", "t_fixed", "phi_max", "bin_width"}
_INTS = {"stride", "n_phi", "n", "seed", "workers"}


class UsageError(Exception):
    pass


def _coerce(key: str, value):
    if key == "tmax" and value == "auto":
        return value
    try:
        if key in _FLOATS:
            return float(value)
        if key in _INTS:
            return int(value)
    except ValueError as exc:
        raise UsageError(f"{key}: cannot parse {value!r}") from exc
    return str(value)


def read_config(path) -> dict:
    """Flat ``key = value`` file; ``#`` starts a comment."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected key = value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out


def _allowed(experiment: str) -> set:
    return set(PARAM_KEYS) | set(EVOLUTION_KEYS) | set(EXTRA_KEYS[experiment])


def resolve(experiment: str, args: argparse.Namespace) -> dict:
    allowed = _allowed(experiment)
    settings = {k: DEFAULTS[k] for k in allowed}
    if experiment in ("trajectories", "histograms"):
        settings["tmax"] = "auto"       # time by which every photon is detected
    if args.preset:
        target, values = PRESETS[args.preset]
        if target != experiment:
            raise UsageError(f"preset {args.preset!r} belongs to '{target}', not '{experiment}'")
        settings.update(values)
    if args.config:
        cfg = read_config(args.config)
        unknown = sorted(set(cfg) - allowed)
        if unknown:
            raise UsageError(f"unknown config keys for {experiment}: {', '.join(unknown)}")
        settings.update(cfg)
    for k in allowed:
        v = getattr(args, k, None)
        if v is not None:
            settings[k] = v
    return {k: _coerce(k, v) for k, v in sorted(settings.items())}


def _params(s: dict) -> SystemParams:
    try:
        return SystemParams(**{PARAM_KEYS[k]: s[k] for k in PARAM_KEYS})
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _evolution(s: dict) -> EvolutionConfig:
    try:
        return EvolutionConfig(dt=s["dt"], t_max=s["tmax"], output_stride=s["stride"])
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def _run(experiment: str, s: dict, out: Path, stamp: str) -> list[Path]:
    p = _params(s)
    comment = f"manifest-sha256: {stamp}"
    files = []

    def path(name):
        f = out / name
        files.append(f)
        return f

    if experiment == "densities":
        dens = coupled_densities(p, _evolution(s))
        dens.to_csv(path("densities.csv"), comment)
    elif experiment == "baseline":
        cfg = _evolution(s)
        base = independent_baseline(p, cfg)
        dens = coupled_densities(p, cfg)
        write_csv(path("baseline.csv"), ["t", "p2", "p11", "baseline"],
                  [[t, a, b, c] for t, a, b, c in zip(dens.times, dens.p2, dens.p11, base.density)],
                  comment)
    elif experiment == "phi-sweep":
        if s["model"] not in ("full", "early", "taylor"):
            raise UsageError(f"--model must be full, early or taylor, not {s['model']!r}")
        if s["n_phi"] < 2:
            raise UsageError("--n-phi must be at least 2")
        if s["t_fixed"] <= 0:
            raise UsageError("--t-fixed must be positive")
        phis = np.linspace(0.0, s["phi_max"], s["n_phi"])
        phi_sweep(p, phis, s["t_fixed"], model=s["model"], dt=s["dt"]).to_csv(
            path("phi_sweep.csv"), comment)
    elif experiment == "early-time":
        cfg = _evolution(s)
        sol = early_time_model(p, cfg)
        sol.to_csv(path("early_amplitudes.csv"), comment)
        t, p2, p11 = early_densities(p, cfg)
        full = coupled_densities(p, cfg)
        write_csv(path("early_densities.csv"), ["t", "p2_early", "p11_early", "p2", "p11"],
                  [list(r) for r in zip(t, p2, p11, full.p2, full.p11)], comment)
    elif experiment in ("trajectories", "histograms"):
        if s["n"] < 1:
            raise UsageError("--n must be at least 1")
        if s["workers"] < 1:
            raise UsageError("--workers must be at least 1")
        if s["tmax"] == "auto":
            cfg = default_config(build_model(p), dt=s["dt"])
        else:
            cfg = _evolution(s)
        ens = run_ensemble(p, s["n"], s["seed"], cfg, workers=s["workers"])
        if experiment == "trajectories":
            ens.records_to_csv(path("records.csv"), comment)
            write_json(path("stats.json"), ens.summary())
            print(f"fraction_same={ens.fraction_same:.4f} fraction_diff={ens.fraction_diff:.4f} "
                  f"incomplete={ens.n_incomplete}")
        else:
            if s["bin_width"] <= 0:
                raise UsageError("--bin-width must be positive")
            pairs = sample_independent_pairs(p, s["n"], s["seed"], cfg)
            hist = build_histograms(ens.records, s["bin_width"], pairs)
            hist.to_csv(lambda q: path(f"hist_{q}.csv"), comment)
    elif experiment == "entropy":
        if s["convention"] not in ("unnormalized", "normalized"):
            raise UsageError("--convention must be unnormalized or normalized")
        entropy_series(p, _evolution(s), convention=s["convention"]).to_csv(
            path("entropy.csv"), comment)
    elif experiment == "post-detection":
        if s["state"] not in ("unconditional", "normalized"):
            raise UsageError("--state must be unconditional or normalized")
        start = _parse_start(s["start"])
        post_detection_run(p, _evolution(s), start=start, state_convention=s["state"]).to_csv(
            path("post_detection.csv"), comment)
    return files


def _parse_start(text: str):
    if text in ("left-atom", "argmax-click"):
        return text
    try:
        t, det = text.split(":")
        if det not in ("a", "b"):
            raise ValueError
        return float(t), det
    except ValueError as exc:
        raise UsageError(f"--start must be left-atom, argmax-click or TIME:DETECTOR, not {text!r}") from exc


def _add_common(sp: argparse.ArgumentParser, experiment: str):
    g = sp.add_argument_group("system parameters (units of kappa)")
    g.add_argument("--g", type=float, help="coupling magnitude |g|")
    g.add_argument("--phi", type=float, help="coupling phase")
    g.add_argument("--delta", type=float, help="atom-cavity detuning (either sign)")
    g.add_argument("--kappa", type=float, help="cavity decay rate")
    g.add_argument("--deltaT", type=float, help="detection window")
    e = sp.add_argument_group("integration")
    e.add_argument("--tmax", type=float, help="horizon" + (
        " (default: until survival < 1e-6)" if experiment in ("trajectories", "histograms") else ""))
    e.add_argument("--dt", type=float, help="RK4 step")
    e.add_argument("--stride", type=int, help="output every STRIDE steps")
    sp.add_argument("--preset", choices=sorted(k for k, (x, _) in PRESETS.items() if x == experiment),
                    help="named parameter set")
    sp.add_argument("--config", help="flat key = value file")
    sp.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./results)")
    extra = EXTRA_KEYS[experiment]
    if "t_fixed" in extra:
        sp.add_argument("--t-fixed", dest="t_fixed", type=float, help="evaluation time")
        sp.add_argument("--n-phi", dest="n_phi", type=int, help="number of phase points")
        sp.add_argument("--phi-max", dest="phi_max", type=float, help="largest phase")
        sp.add_argument("--model", help="full, early or taylor")
    if "n" in extra:
        sp.add_argument("--n", type=int, help="number of trajectories")
        sp.add_argument("--seed", type=int, help="master seed")
        sp.add_argument("--workers", type=int, help="worker processes")
    if "bin_width" in extra:
        sp.add_argument("--bin-width", dest="bin_width", type=float, help="histogram bin width")
    if "convention" in extra:
        sp.add_argument("--convention", help="unnormalized or normalized no-jump state")
    if "start" in extra:
        sp.add_argument("--start", help="left-atom, argmax-click or TIME:DETECTOR")
        sp.add_argument("--state", help="unconditional or normalized")


HELP = {
    "densities": "equal-time joint detection densities of the coupled system",
    "baseline": "coupled densities next to two independent emitters",
    "phi-sweep": "densities at a fixed time versus coupling phase",
    "early-time": "nine-state early-time model against the full model",
    "trajectories": "Monte Carlo detection records and same/different fractions",
    "histograms": "histograms of click times and waiting times",
    "entropy": "left/right entropy of the two-excitation no-jump state",
    "post-detection": "concurrence and negativities with one excitation left",
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="twocavity", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in HELP.items():
        _add_common(sub.add_parser(name, help=text, description=text), name)
    v = sub.add_parser("validate", help="run the acceptance battery")
    v.add_argument("--only", action="append", help="run only this criterion (repeatable)")
    v.add_argument("--workers", type=int, default=1)
    sub.add_parser("presets", help="list named parameter sets")
    return parser


def run_experiment(experiment: str, args: argparse.Namespace) -> dict:
    """Resolve settings, write CSVs and the manifest; return the manifest."""
    s = resolve(experiment, args)
    out = Path(args.out or os.environ.get(OUT_ENV) or "results")
    manifest = {"experiment": experiment, "settings": s, "version": __version__}
    stamp = stable_hash(manifest)
    t0 = time.perf_counter()
    files = _run(experiment, s, out, stamp)
    manifest.update({"manifest_sha256": stamp, "wall_time_s": round(time.perf_counter() - t0, 3),
                     "outputs": [f.name for f in files]})
    write_json(out / f"{experiment}.manifest.json", manifest)
    return manifest


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "presets":
        for name, (exp, values) in PRESETS.items():
            flags = " ".join(f"--{k.replace('_', '-')} {v:g}" if isinstance(v, float)
                             else f"--{k.replace('_', '-')} {v}" for k, v in values.items())
            print(f"{name:20s} {exp} {flags}")
        return 0
    if args.command == "validate":
        from .validate import CRITERIA, run_suite
        unknown = [n for n in args.only or [] if n not in CRITERIA]
        if unknown:
            parser.error(f"unknown criterion: {', '.join(unknown)}")
        results = run_suite(args.only, stream=sys.stdout, workers=args.workers)
        failed = [r.name for r in results if not r.passed]
        print(f"{len(results) - len(failed)}/{len(results)} criteria passed")
        return 1 if failed else 0
    try:
        manifest = run_experiment(args.command, args)
    except UsageError as exc:
        parser.error(str(exc))
    except (NumericalInstabilityError, ConsistencyError, DarkStateError) as exc:
        print(f"twocavity: numerical abort: {exc}", file=sys.stderr)
        return 3
    print(f"wrote {', '.join(manifest['outputs'])} (manifest {manifest['manifest_sha256'][:12]})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
