"""Equal-time joint detection densities, the independent-cavity baseline and phase sweeps."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dynamics import (EvolutionConfig, NoJumpSolution, StateVector, early_time_model,
                       evolve_nojump, rk4_propagator)
from .iohelpers import write_csv
from .model import BasisState, SystemParams, build_model, build_single_cavity, build_jump_operators

# labels c1..c19 of the two-excitation kets used by the closed-form densities
C_KETS = ("e00,e00", "e10,g00", "e01,g00", "e00,g10", "e00,g01",
          "g10,e00", "g01,e00", "g00,e10", "g00,e01", "g20,g00",
          "g02,g00", "g00,g20", "g00,g02", "g11,g00", "g10,g10",
          "g10,g01", "g01,g10", "g01,g01", "g00,g11")

AMPLITUDE_TOL = 1e-10


class ConsistencyError(RuntimeError):
    """Operator and closed-form amplitude evaluations disagree."""


@dataclass(frozen=True, eq=False)
class DetectionDensities:
    """Equal-time densities, already multiplied by the window ``delta_T``."""

    times: np.ndarray
    p2: np.ndarray      # both clicks at the same detector (aa, equal to bb by symmetry)
    p11: np.ndarray     # one click at each detector
    baseline: np.ndarray | None = None

    def to_csv(self, path, comment: str | None = None):
        header = ["t", "p2", "p11", "baseline"]
        base = self.baseline if self.baseline is not None else [float("nan")] * len(self.times)
        rows = [[t, a, b, c] for t, a, b, c in zip(self.times, self.p2, self.p11, base)]
        write_csv(path, header, rows, comment=comment)


def c_amplitudes(solution: NoJumpSolution) -> np.ndarray:
    """``(n_times, 19)`` array of c1..c19."""
    idx = [solution.space.index[BasisState.parse(k)] for k in C_KETS]
    return solution.amps[:, idx]


def _both_routes(solution: NoJumpSolution, params: SystemParams):
    space = solution.space
    if space.max_excitations != 2:
        raise ValueError("equal-time densities need the two-excitation space")
    J_a, J_b = build_jump_operators(params, space)
    A = solution.amps.T
    p2_op = np.sum(np.abs(J_a @ (J_a @ A)) ** 2, axis=0)
    p11_op = np.sum(np.abs(J_a @ (J_b @ A)) ** 2, axis=0)

    c = c_amplitudes(solution)
    k2, r2 = params.kappa ** 2, np.sqrt(2.0)
    p2_amp = k2 * np.abs(r2 * c[:, 9] + r2 * c[:, 11] + 2 * c[:, 14]) ** 2
    p11_amp = k2 * np.abs(c[:, 13] + c[:, 15] + c[:, 16] + c[:, 18]) ** 2
    return p2_op, p11_op, p2_amp, p11_amp


def amplitude_form_error(solution: NoJumpSolution, params: SystemParams) -> float:
    """Largest gap between the operator and c-amplitude routes (densities without delta_T)."""
    p2_op, p11_op, p2_amp, p11_amp = _both_routes(solution, params)
    return float(max(np.max(np.abs(p2_op - p2_amp)), np.max(np.abs(p11_op - p11_amp))))


def equal_time_densities(solution: NoJumpSolution, params: SystemParams,
                         tol: float = AMPLITUDE_TOL) -> DetectionDensities:
    """Both double-click densities, from the J operators, cross-checked against c1..c19."""
    p2_op, p11_op, p2_amp, p11_amp = _both_routes(solution, params)
    err = max(np.max(np.abs(p2_op - p2_amp)), np.max(np.abs(p11_op - p11_amp)))
    if err > tol:
        raise ConsistencyError(f"operator and amplitude densities differ by {err:.3e}")
    dT = params.delta_T
    return DetectionDensities(solution.times, p2_op * dT, p11_op * dT)


def coupled_densities(params: SystemParams, config: EvolutionConfig) -> DetectionDensities:
    model = build_model(params)
    sol = evolve_nojump(model.H_nh, StateVector(model.space, model.initial_state()), config)
    return equal_time_densities(sol, params)


@dataclass(frozen=True, eq=False)
class Baseline:
    times: np.ndarray
    emission: np.ndarray        # single-system photon emission density q(t)
    survival: np.ndarray
    density: np.ndarray         # q(t)**2 * delta_T


def single_cavity_nojump(params: SystemParams, config: EvolutionConfig):
    """No-jump amplitudes of one isolated atom-cavity system starting excited."""
    H_nh, L1, L2 = build_single_cavity(params)
    P = rk4_propagator(-1j * H_nh, config.dt)
    psi = np.array([1.0, 0.0, 0.0], dtype=complex)
    times, amps = [0.0], [psi.copy()]
    for k in range(1, config.n_steps + 1):
        psi = P @ psi
        if k % config.output_stride == 0 or k == config.n_steps:
            times.append(k * config.dt)
            amps.append(psi.copy())
    return np.array(times), np.array(amps), (L1, L2)


def independent_baseline(params: SystemParams, config: EvolutionConfig) -> Baseline:
    """Equal-time double-click density of two independent, uncoupled emitters."""
    times, amps, (L1, L2) = single_cavity_nojump(params, config)
    q = np.abs(amps @ L1[0]) ** 2 + np.abs(amps @ L2[0]) ** 2
    survival = np.sum(np.abs(amps) ** 2, axis=1)
    return Baseline(times, q, survival, q ** 2 * params.delta_T)


@dataclass(frozen=True, eq=False)
class PhiSweep:
    phis: np.ndarray
    p2: np.ndarray
    p11: np.ndarray
    t_fixed: float
    model: str

    def to_csv(self, path, comment: str | None = None):
        write_csv(path, ["phi", "p2", "p11"],
                  [[f, a, b] for f, a, b in zip(self.phis, self.p2, self.p11)], comment=comment)


def early_densities(params: SystemParams, config: EvolutionConfig):
    """Closed-form densities of the nine-state model: ``4k^2|d6|^2`` and ``k^2|d7+d8|^2``."""
    sol = early_time_model(params, config)
    k2, dT = params.kappa ** 2, params.delta_T
    p2 = 4 * k2 * np.abs(sol.d[:, 5]) ** 2 * dT
    p11 = k2 * np.abs(sol.d[:, 6] + sol.d[:, 7]) ** 2 * dT
    return sol.times, p2, p11


def phi_sweep(params: SystemParams, phis, t_fixed: float, model: str = "full",
              dt: float = 1e-3) -> PhiSweep:
    """Densities at one time versus the coupling phase.

    ``model`` is ``"full"`` (26-state no-jump state), ``"early"`` (nine-state
    restriction) or ``"taylor"`` (second-order expansion of the nine-state model).
    """
    if model not in ("full", "early", "taylor"):
        raise ValueError(f"unknown model {model!r}")
    if t_fixed <= 0:
        raise ValueError("t_fixed must be positive")
    config = EvolutionConfig(dt=dt, t_max=t_fixed, output_stride=max(1, int(round(t_fixed / dt))))
    p2s, p11s = [], []
    k2, dT = params.kappa ** 2, params.delta_T
    for phi in phis:
        p = params.replace(phi=float(phi))
        if model == "full":
            dens = coupled_densities(p, config)
            p2s.append(dens.p2[-1])
            p11s.append(dens.p11[-1])
        elif model == "early":
            _, p2, p11 = early_densities(p, config)
            p2s.append(p2[-1])
            p11s.append(p11[-1])
        else:
            c2 = early_time_model(p, config).taylor(2)
            p2s.append(4 * k2 * abs(c2[5] * t_fixed ** 2) ** 2 * dT)
            p11s.append(k2 * abs((c2[6] + c2[7]) * t_fixed ** 2) ** 2 * dT)
    return PhiSweep(np.asarray(phis, dtype=float), np.array(p2s), np.array(p11s), t_fixed, model)


def count_local_maxima(y, smooth: int = 5, floor: float = 0.1) -> int:
    """Strict interior local maxima after a centred moving average.

    Peaks lower than ``floor`` times the global maximum are tail ripple and are not
    counted; the window edges never count.
    """
    return len(local_maxima(y, smooth=smooth, floor=floor))


def local_maxima(y, smooth: int = 5, floor: float = 0.1) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if smooth > 1:
        kernel = np.ones(smooth) / smooth
        ys = np.convolve(y, kernel, mode="valid")
        offset = smooth // 2
    else:
        ys, offset = y, 0
    top = ys.max() if ys.size else 0.0
    inner = np.arange(1, len(ys) - 1)
    is_max = (ys[inner] > ys[inner - 1]) & (ys[inner] > ys[inner + 1]) & (ys[inner] >= floor * top)
    return inner[is_max] + offset


def normalized_correlation(x, y) -> float:
    x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
    return float(np.dot(x, y) / (np.linalg.norm(x) * np.linalg.norm(y)))
