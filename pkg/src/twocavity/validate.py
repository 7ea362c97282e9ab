"""Acceptance battery: each check returns measured values and a pass/fail verdict."""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import simpson

from .dynamics import (DensityMatrix, EvolutionConfig, StateVector, early_time_model,
                       evolve_master_equation, evolve_nojump, full_model_early_components,
                       jump_rates, trace_distance)
from .entanglement import (Bipartition, entropy_series, post_detection_run, reduced_density)
from .model import SystemParams, build_model
from .observables import (amplitude_form_error, coupled_densities, count_local_maxima,
                          phi_sweep)
from .trajectories import run_ensemble

WEAK = SystemParams(g_mag=0.25, delta=0.5, phi=0.0)
WEAKER = WEAK.replace(g_mag=0.1)
STRONG_ENTROPY = WEAK.replace(g_mag=5.0)
STRONG_SINGLE = SystemParams(g_mag=2.0, delta=0.5)
WEAK_SINGLE = SystemParams(g_mag=0.2, delta=0.1)


@dataclass
class CriterionResult:
    name: str
    passed: bool
    measured: dict = field(default_factory=dict)
    runtime: float = 0.0

    def line(self) -> str:
        vals = ", ".join(f"{k}={_fmt(v)}" for k, v in self.measured.items())
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name} ({self.runtime:.1f}s): {vals}"


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.6g}"
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_fmt(x) for x in v) + "]"
    return str(v)


def same_detector_fraction(n: int = 20000, seed: int = 7, workers: int = 1):
    ens = run_ensemble(WEAK, n, seed, workers=workers)
    ok = 0.60 <= ens.fraction_same <= 0.64 and 0.36 <= ens.fraction_diff <= 0.40
    return ok, {"fraction_same": ens.fraction_same, "fraction_diff": ens.fraction_diff,
                "n_incomplete": ens.n_incomplete}


def density_shapes():
    cfg = EvolutionConfig(dt=1e-3, t_max=20.0, output_stride=10)
    a = coupled_densities(WEAK, cfg)
    b = coupled_densities(WEAKER, cfg)
    n11, n2 = count_local_maxima(a.p11), count_local_maxima(a.p2)
    m = {"maxima_p11": n11, "maxima_p2": n2,
         "max_p2": a.p2.max(), "max_p11": a.p11.max(),
         "weaker_max_p11": b.p11.max(), "weaker_max_p2": b.p2.max()}
    ok = (n11 == 1 and n2 == 2 and a.p2.max() > a.p11.max()
          and b.p11.max() < a.p11.max() and b.p2.max() > a.p2.max())
    return ok, m


def phase_sweep():
    phis = np.array([0, 1, 2, 3, 4]) * np.pi / 16
    sw = phi_sweep(WEAK, phis, t_fixed=0.4)
    decreasing = bool(np.all(np.diff(sw.p11) < 0))
    variation = float((sw.p2.max() - sw.p2.min()) / sw.p2.mean())
    return decreasing and variation < 0.05, {"p11": list(sw.p11), "p11_decreasing": decreasing,
                                             "p2_rel_variation": variation}


def entropy_maxima():
    cfg = EvolutionConfig(dt=1e-3, t_max=20.0, output_stride=10)
    weak = entropy_series(WEAK, cfg)
    strong = entropy_series(STRONG_ENTROPY, cfg)
    early = strong.times < 5.0
    peaks = count_local_maxima(strong.entropy[early], smooth=1)
    wmax, smax = float(weak.entropy.max()), float(strong.entropy.max())
    weak_norm = entropy_series(WEAK, cfg, convention="normalized").entropy.max()
    ok = abs(wmax - 0.4) <= 0.05 and smax < wmax and peaks >= 3
    return ok, {"weak_max": wmax, "strong_max": smax, "strong_maxima_before_5": peaks,
                "weak_max_normalized_state": float(weak_norm)}


def negativity_bound():
    cfg = EvolutionConfig(dt=1e-3, t_max=20.0, output_stride=10)
    maxima, pointwise = {}, True
    for label, p in (("strong", STRONG_SINGLE), ("weak", WEAK_SINGLE)):
        s = post_detection_run(p, cfg)
        maxima[label] = float(s.negativity_LR.max())
        pointwise &= bool(np.all(s.negativity_atoms <= s.negativity_LR + 1e-12))
        pointwise &= bool(np.all(s.negativity_atoms <= s.concurrence + 1e-12))
    best = max(maxima.values())
    ok = abs(best - 0.46) <= 0.05 and pointwise
    return ok, {"max_N_LR": best, "strong_max_N_LR": maxima["strong"],
                "weak_max_N_LR": maxima["weak"], "pointwise_bounds": pointwise}


def oracle_equivalence(n: int = 10000, seed: int = 11, times=(1.0, 3.0, 6.0),
                       cascade: float = 1.0, workers: int = 1):
    """Trajectory average versus the master equation.  ``cascade`` corrupts only the
    trajectory generator, so ``cascade=-1`` is the mutation check."""
    model = build_model(WEAK)
    ens = run_ensemble(WEAK, n, seed, sample_times=times, cascade=cascade, workers=workers)
    rho0 = DensityMatrix.pure(StateVector(model.space, model.initial_state()))
    sol = evolve_master_equation(WEAK, rho0, EvolutionConfig(dt=1e-3, t_max=max(times),
                                                             output_stride=100))
    dists = [trace_distance(sol.at(t), ens.mean_states[t]) for t in times]
    return max(dists) <= 0.02, {"trace_distances": dists}


def norm_bookkeeping(T: float = 20.0, dt: float = 1e-3):
    worst = 0.0
    for g in (0.1, 0.25, 1.0):
        for phi in (0.0, np.pi / 8, np.pi / 4):
            p = WEAK.replace(g_mag=g, phi=phi)
            m = build_model(p)
            sol = evolve_nojump(m.H_nh, StateVector(m.space, m.initial_state()),
                                EvolutionConfig(dt=dt, t_max=T, output_stride=1))
            rates = np.array([sum(jump_rates(s, m.J_a, m.J_b)) for s in sol.states])
            total = sol.survival[-1] + simpson(rates, x=sol.times)
            worst = max(worst, abs(total - 1.0))
    return worst <= 1e-6, {"max_deviation": worst}


def closed_form_concurrence():
    cfg = EvolutionConfig(dt=1e-3, t_max=20.0, output_stride=10)
    worst = 0.0
    for p in (STRONG_SINGLE, WEAK_SINGLE):
        s = post_detection_run(p, cfg)
        worst = max(worst, float(np.max(np.abs(s.concurrence - s.concurrence_closed_form))))
    return worst <= 1e-10, {"max_abs_difference": worst}


def operator_amplitude_agreement():
    worst = 0.0
    for p in (WEAK, WEAKER, WEAK.replace(phi=np.pi / 4), STRONG_ENTROPY):
        m = build_model(p)
        sol = evolve_nojump(m.H_nh, StateVector(m.space, m.initial_state()),
                            EvolutionConfig(dt=1e-3, t_max=20.0, output_stride=10))
        worst = max(worst, amplitude_form_error(sol, p))
    return worst <= 1e-10, {"max_abs_difference": worst}


def early_time_factorization(t_end: float = 0.3, dt: float = 1e-3):
    cfg = EvolutionConfig(dt=dt, t_max=t_end, output_stride=10)
    early = early_time_model(WEAK, cfg)
    m = build_model(WEAK)
    full = evolve_nojump(m.H_nh, StateVector(m.space, m.initial_state()), cfg)
    early_purity_dev = float(np.max(np.abs(early.left_purity() - 1.0)))
    full_purity = []
    for st in full.states:
        rho_L = reduced_density(st.normalized(), Bipartition.LR).data
        full_purity.append(np.trace(rho_L @ rho_L).real)
    d_full = full_model_early_components(full)
    later = full.times > 0
    rel = np.abs(early.d[later] - d_full[later]) / np.abs(d_full[later])
    worst = rel.max(axis=0)
    ok = early_purity_dev < 1e-12 and min(full_purity) >= 0.99 and worst.max() <= 0.02
    return ok, {"early_purity_deviation": early_purity_dev, "min_full_purity": min(full_purity),
                "max_relative_d_error": float(worst.max()), "worst_d": f"d{int(worst.argmax()) + 1}",
                "state_vector_relative_error": float(np.max(
                    np.linalg.norm(early.d[later] - d_full[later], axis=1)
                    / np.linalg.norm(d_full[later], axis=1)))}


CRITERIA = {
    "same-detector-fraction": same_detector_fraction,
    "density-shapes": density_shapes,
    "phase-sweep": phase_sweep,
    "entropy-maxima": entropy_maxima,
    "negativity-bound": negativity_bound,
    "oracle-equivalence": oracle_equivalence,
    "norm-bookkeeping": norm_bookkeeping,
    "closed-form-concurrence": closed_form_concurrence,
    "operator-amplitude-agreement": operator_amplitude_agreement,
    "early-time-factorization": early_time_factorization,
}


def run_criterion(name: str, **kwargs) -> CriterionResult:
    t0 = time.perf_counter()
    ok, measured = CRITERIA[name](**kwargs)
    return CriterionResult(name, bool(ok), measured, time.perf_counter() - t0)


def run_suite(names=None, stream=None, workers: int = 1) -> list[CriterionResult]:
    """Run the battery, printing one line per criterion as it finishes."""
    results = []
    for name in names or CRITERIA:
        kwargs = {"workers": workers} if name in ("same-detector-fraction", "oracle-equivalence") else {}
        res = run_criterion(name, **kwargs)
        results.append(res)
        if stream is not None:
            print(res.line(), file=stream, flush=True)
    return results
