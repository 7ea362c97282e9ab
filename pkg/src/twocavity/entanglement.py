"""Partial traces and entanglement measures for the left/right and atom-atom cuts.

Two-qubit atomic states use the Kronecker ordering ``|atom_L atom_R>`` with index
``2*atom_L + atom_R``, i.e. ``[gg, ge, eg, ee]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .dynamics import (DensityMatrix, EvolutionConfig, StateVector, apply_jump,
                       evolve_nojump, jump_rates, rk4_propagator)
from .iohelpers import write_csv
from .model import HilbertSpace, SystemParams, build_model

EIG_CUTOFF = 1e-12
PHYSICAL_TOL = 1e-9

_SIGMA_Y = np.array([[0, -1j], [1j, 0]])
_YY = np.kron(_SIGMA_Y, _SIGMA_Y)


class Bipartition(str, Enum):
    LR = "LR"            # (atom_L, a1, a2) | (atom_R, a3, a4)
    ATOMS = "atoms"      # atom_L | atom_R, all four modes traced out


class NonPhysicalStateError(ValueError):
    pass


def _local_indices(space: HilbertSpace):
    locs = space.local_states()
    pos = {s: i for i, s in enumerate(locs)}
    left = np.array([pos[s.left] for s in space.states])
    right = np.array([pos[s.right] for s in space.states])
    return locs, left, right


def _atom_photon_indices(space: HilbertSpace):
    photons = sorted({(s.n1, s.n2, s.n3, s.n4) for s in space.states})
    pos = {p: i for i, p in enumerate(photons)}
    atom = np.array([2 * s.atom_L + s.atom_R for s in space.states])
    phot = np.array([pos[(s.n1, s.n2, s.n3, s.n4)] for s in space.states])
    return atom, phot, len(photons)


def _as_matrix(state) -> tuple[HilbertSpace, np.ndarray]:
    if isinstance(state, StateVector):
        if not state.is_normalized:
            raise ValueError(f"state must be normalized (norm^2 = {state.norm2:.12g})")
        return state.space, np.outer(state.amps, state.amps.conj())
    if isinstance(state, DensityMatrix):
        if state.space is None:
            raise ValueError("expected a density matrix on the global space")
        if abs(state.trace - 1) > 1e-8:
            raise ValueError(f"density matrix must have unit trace (trace = {state.trace:.12g})")
        return state.space, state.data
    raise TypeError(f"unsupported state type {type(state).__name__}")


def bipartite_tensor(space: HilbertSpace, rho: np.ndarray) -> np.ndarray:
    """Embed a global density matrix as ``R[iL, iR, jL, jR]`` over the local factors."""
    locs, left, right = _local_indices(space)
    d = len(locs)
    R = np.zeros((d, d, d, d), dtype=complex)
    R[left[:, None], right[:, None], left[None, :], right[None, :]] = rho
    return R


def reduced_density(state, cut: Bipartition | str) -> DensityMatrix:
    """Marginal of the left system (LR cut) or of the two atoms (atoms cut)."""
    cut = Bipartition(cut)
    space, rho = _as_matrix(state)
    if cut is Bipartition.LR:
        R = bipartite_tensor(space, rho)
        return DensityMatrix(None, np.einsum("ijkj->ik", R))
    atom, phot, n_phot = _atom_photon_indices(space)
    T = np.zeros((4, n_phot, 4, n_phot), dtype=complex)
    T[atom[:, None], phot[:, None], atom[None, :], phot[None, :]] = rho
    return DensityMatrix(None, np.einsum("ijkj->ik", T))


def reduced_right(state) -> DensityMatrix:
    space, rho = _as_matrix(state)
    R = bipartite_tensor(space, rho)
    return DensityMatrix(None, np.einsum("ijil->jl", R))


def _spectrum(rho: np.ndarray) -> np.ndarray:
    w = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    if w.min() < -PHYSICAL_TOL:
        raise NonPhysicalStateError(f"eigenvalue {w.min():.3e} below -{PHYSICAL_TOL}")
    return w


def von_neumann_entropy(rho: DensityMatrix | np.ndarray) -> float:
    """Base-2 entropy in ebits; eigenvalues under 1e-12 contribute nothing."""
    data = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
    w = _spectrum(data)
    w = w[w > EIG_CUTOFF]
    return float(0.0 - (w * np.log2(w)).sum())


def concurrence(rho_atoms: DensityMatrix | np.ndarray) -> float:
    """Wootters concurrence of a two-qubit state."""
    r = rho_atoms.data if isinstance(rho_atoms, DensityMatrix) else np.asarray(rho_atoms)
    if r.shape != (4, 4):
        raise ValueError(f"concurrence needs a 4x4 two-qubit state, got {r.shape}")
    # the square roots of the eigenvalues of rho (YY) rho* (YY) are the singular
    # values of sqrt(rho) YY sqrt(rho)*; this avoids square roots of round-off
    w, V = np.linalg.eigh(0.5 * (r + r.conj().T))
    w = np.where(w > EIG_CUTOFF, w, 0.0)
    root = (V * np.sqrt(w)) @ V.conj().T
    s = np.linalg.svd(root @ _YY @ root.conj(), compute_uv=False)
    return float(max(0.0, s[0] - s[1] - s[2] - s[3]))


def _negativity_from_pt(pt: np.ndarray) -> float:
    w = np.linalg.eigvalsh(0.5 * (pt + pt.conj().T))
    neg = w[w < -EIG_CUTOFF]
    return float(max(0.0, -2.0 * neg.sum()))


def partial_transpose_atoms(r: np.ndarray) -> np.ndarray:
    """Transpose the right atom of a 4x4 ``[gg, ge, eg, ee]`` matrix."""
    return r.reshape(2, 2, 2, 2).transpose(0, 3, 2, 1).reshape(4, 4)


def negativity(rho: DensityMatrix | np.ndarray, cut: Bipartition | str) -> float:
    """``max(0, -2 * sum of negative eigenvalues)`` of the partial transpose.

    The atoms cut takes a 4x4 atomic state (or a global one, reduced first) and
    transposes atom R; the LR cut needs a global state and transposes the right system.
    """
    cut = Bipartition(cut)
    if cut is Bipartition.ATOMS:
        if isinstance(rho, DensityMatrix) and rho.space is not None:
            rho = reduced_density(rho, cut)
        r = rho.data if isinstance(rho, DensityMatrix) else np.asarray(rho)
        if r.shape != (4, 4):
            raise ValueError(f"atomic negativity needs a 4x4 state, got {r.shape}")
        return _negativity_from_pt(partial_transpose_atoms(r))
    if not isinstance(rho, DensityMatrix) or rho.space is None:
        raise ValueError("LR negativity needs a density matrix on the global space")
    R = bipartite_tensor(rho.space, rho.data)
    d = R.shape[0]
    pt = R.transpose(0, 3, 2, 1).reshape(d * d, d * d)
    return _negativity_from_pt(pt)


def unconditional_state(psi_tilde: StateVector) -> DensityMatrix:
    """No-jump branch plus the vacuum weight of every branch that has emitted.

    Exact for a single-excitation start: the second click can only leave the vacuum.
    """
    amps = psi_tilde.amps
    rho = np.outer(amps, amps.conj())
    vac = psi_tilde.space.sector(0).start
    rho[vac, vac] += 1.0 - psi_tilde.norm2
    return DensityMatrix(psi_tilde.space, rho)


def nojump_entropy(psi_tilde: StateVector, convention: str = "unnormalized") -> float:
    """Left/right entropy of a no-jump state.

    ``"normalized"`` is the entropy of the conditional state.  ``"unnormalized"``
    feeds the eigenvalues of ``Tr_R |psi~><psi~|`` (which sum to the survival ``s``)
    straight into ``-sum l log2 l``, i.e. ``s*E_norm - s*log2(s)``.
    """
    s = psi_tilde.norm2
    if s <= EIG_CUTOFF:
        return 0.0
    e = von_neumann_entropy(reduced_density(psi_tilde.normalized(), Bipartition.LR))
    if convention == "normalized":
        return e
    if convention == "unnormalized":
        return float(s * e - s * np.log2(s) + 0.0)
    raise ValueError(f"unknown entropy convention {convention!r}")


@dataclass(frozen=True, eq=False)
class EntanglementSeries:
    times: np.ndarray
    entropy: np.ndarray | None = None
    concurrence: np.ndarray | None = None
    concurrence_closed_form: np.ndarray | None = None
    negativity_atoms: np.ndarray | None = None
    negativity_LR: np.ndarray | None = None
    start: str = ""

    def to_csv(self, path, comment: str | None = None):
        nan = np.full(len(self.times), np.nan)
        cols = [self.entropy, self.concurrence, self.negativity_atoms, self.negativity_LR]
        cols = [nan if c is None else c for c in cols]
        write_csv(path, ["t", "entropy", "concurrence", "negativity_atoms", "negativity_LR"],
                  [[t, *vals] for t, *vals in zip(self.times, *cols)], comment=comment)


def entropy_series(params: SystemParams, config: EvolutionConfig,
                   convention: str = "unnormalized") -> EntanglementSeries:
    """Left/right entropy of the two-excitation no-jump state over time."""
    model = build_model(params)
    sol = evolve_nojump(model.H_nh, StateVector(model.space, model.initial_state()), config)
    E = np.array([nojump_entropy(st, convention) for st in sol.states])
    return EntanglementSeries(sol.times, entropy=E, start="e00,e00")


def first_click_state(params: SystemParams, time: float, detector: str,
                      dt: float = 1e-3) -> StateVector:
    """Normalized single-excitation state right after a click at ``time``."""
    model = build_model(params)
    psi = StateVector(model.space, model.initial_state())
    if time > 0:
        n = int(round(time / dt))
        sol = evolve_nojump(model.H_nh, psi, EvolutionConfig(dt=dt, t_max=n * dt, output_stride=n))
        psi = sol.state(-1)
    J = {"a": model.J_a, "b": model.J_b}[detector]
    return apply_jump(psi, J)


def most_likely_first_click(params: SystemParams, t_max: float = 20.0, dt: float = 1e-3) -> float:
    """Time maximizing the total first-click density ``Pi_a + Pi_b`` of the no-jump state."""
    model = build_model(params)
    sol = evolve_nojump(model.H_nh, StateVector(model.space, model.initial_state()),
                        EvolutionConfig(dt=dt, t_max=t_max, output_stride=1))
    rates = [sum(jump_rates(st, model.J_a, model.J_b)) for st in sol.states]
    return float(sol.times[int(np.argmax(rates))])


def post_detection_run(params: SystemParams, config: EvolutionConfig, start="left-atom",
                       state_convention: str = "unconditional") -> EntanglementSeries:
    """Concurrence and negativities while a single excitation remains.

    ``start`` is ``"left-atom"`` (left atom excited, an unentangled state),
    ``"argmax-click"`` (state after a D_a click at the most likely first-click time),
    a ``(time, detector)`` pair, or an explicit single-excitation StateVector.

    With ``state_convention="unconditional"`` the measured state is the no-jump
    branch plus the vacuum weight already emitted (trace one), so the atomic marginal
    has ground population ``1 - |f1|^2 - |f2|^2``.  ``"normalized"`` measures the
    renormalized conditional state instead.
    """
    model = build_model(params.replace(max_excitations=2))
    space = model.space
    if isinstance(start, StateVector):
        psi0, label = start, "explicit"
    elif start == "left-atom":
        psi0, label = StateVector.basis(space, "e00,g00"), "left-atom"
    elif start == "argmax-click":
        t1 = most_likely_first_click(params, dt=config.dt)
        psi0, label = first_click_state(params, t1, "a", dt=config.dt), f"click a at t={t1:g}"
    else:
        time, det = start
        psi0, label = first_click_state(params, float(time), det, dt=config.dt), f"click {det} at t={time:g}"
    if not psi0.is_normalized:
        raise ValueError("initial single-excitation state must be normalized")
    w = psi0.sector_weights()
    if abs(w[1] - 1.0) > 1e-10:
        raise ValueError("initial state must lie in the single-excitation sector")
    if state_convention not in ("unconditional", "normalized"):
        raise ValueError(f"unknown state convention {state_convention!r}")

    # evolve the six single-excitation amplitudes only
    sec = space.sector(1)
    G = -1j * model.H_nh.dense()[sec, sec]
    P = rk4_propagator(G, config.dt)
    f = psi0.amps[sec].copy()
    i1, i2 = space.index[(1, 0, 0, 0, 0, 0)] - sec.start, space.index[(0, 0, 0, 1, 0, 0)] - sec.start

    times, C, Cc, Na, Nlr = [], [], [], [], []

    def measure(t, f):
        amps = np.zeros(space.dim, dtype=complex)
        amps[sec] = f
        psi = StateVector(space, amps)
        if state_convention == "normalized":
            psi = psi.normalized()
            rho = DensityMatrix.pure(psi)
            g = psi.amps[sec]
        else:
            rho = unconditional_state(psi)
            g = f
        rho_atoms = reduced_density(rho, Bipartition.ATOMS)
        times.append(t)
        C.append(concurrence(rho_atoms))
        Cc.append(2 * abs(g[i1]) * abs(g[i2]))
        Na.append(negativity(rho_atoms, Bipartition.ATOMS))
        Nlr.append(negativity(rho, Bipartition.LR))

    measure(0.0, f)
    for k in range(1, config.n_steps + 1):
        f = P @ f
        if k % config.output_stride == 0 or k == config.n_steps:
            measure(k * config.dt, f)
    return EntanglementSeries(np.array(times), concurrence=np.array(C),
                              concurrence_closed_form=np.array(Cc),
                              negativity_atoms=np.array(Na), negativity_LR=np.array(Nlr),
                              start=label)
