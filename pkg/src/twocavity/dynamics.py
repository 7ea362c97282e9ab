"""No-jump evolution, jumps, the Lindblad oracle and the early-time reduced model."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .iohelpers import write_csv
from .model import (BasisState, HilbertSpace, Model, SparseOperator, SystemParams,
                    build_cascade_correction, build_effective_hamiltonian,
                    build_jump_operators, build_system_hamiltonian, enumerate_basis)

NORM_TOL = 1e-10
DARK_TOL = 1e-14


class NumericalInstabilityError(RuntimeError):
    """Raised when an integrator makes the norm or trace misbehave."""


class DarkStateError(ValueError):
    """Raised when a jump is requested on a state the jump operator annihilates."""


@dataclass(frozen=True, eq=False)
class StateVector:
    space: HilbertSpace
    amps: np.ndarray

    @property
    def norm2(self) -> float:
        return float(np.vdot(self.amps, self.amps).real)

    @property
    def is_normalized(self) -> bool:
        return abs(self.norm2 - 1.0) < NORM_TOL

    def normalized(self) -> "StateVector":
        n2 = self.norm2
        if n2 <= 0:
            raise ValueError("cannot normalize the zero vector")
        return StateVector(self.space, self.amps / np.sqrt(n2))

    def amplitude(self, label) -> complex:
        if isinstance(label, str):
            label = BasisState.parse(label)
        return complex(self.amps[self.space.index[BasisState(*label)]])

    def sector_weights(self) -> np.ndarray:
        p = np.abs(self.amps) ** 2
        return np.array([p[self.space.sector(k)].sum()
                         for k in range(self.space.max_excitations + 1)])

    @classmethod
    def basis(cls, space: HilbertSpace, label) -> "StateVector":
        return cls(space, space.ket(label))


@dataclass(frozen=True)
class EvolutionConfig:
    dt: float = 1e-3
    t_max: float = 20.0
    method: str = "rk4"
    output_stride: int = 10

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if not self.t_max > 0:
            raise ValueError(f"t_max must be positive, got {self.t_max}")
        if self.method != "rk4":
            raise ValueError(f"only fixed-step 'rk4' is supported, got {self.method!r}")
        if self.output_stride < 1:
            raise ValueError("output_stride must be >= 1")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_max / self.dt))


def rk4_propagator(generator: np.ndarray, h: float) -> np.ndarray:
    """Matrix applied by one classical RK4 step of ``y' = generator @ y``.

    For an autonomous linear system the four stages collapse exactly into the
    fourth-order Taylor polynomial of ``exp(h * generator)``.
    """
    A = h * np.asarray(generator)
    eye = np.eye(A.shape[0], dtype=complex)
    A2 = A @ A
    return eye + A + A2 / 2 + A2 @ A / 6 + A2 @ A2 / 24


def _as_dense(op) -> np.ndarray:
    return op.dense() if isinstance(op, SparseOperator) else np.asarray(op, dtype=complex)


@dataclass(frozen=True, eq=False)
class NoJumpSolution:
    space: HilbertSpace
    times: np.ndarray
    amps: np.ndarray          # (n_times, dim), unnormalized
    survival: np.ndarray

    def state(self, i: int) -> StateVector:
        return StateVector(self.space, self.amps[i])

    @property
    def states(self) -> list[StateVector]:
        return [self.state(i) for i in range(len(self.times))]

    def amplitude(self, label) -> np.ndarray:
        if isinstance(label, str):
            label = BasisState.parse(label)
        return self.amps[:, self.space.index[BasisState(*label)]]

    def to_csv(self, path, comment: str | None = None):
        header = ["t"]
        for s in self.space.states:
            header += [f"re[{s}]", f"im[{s}]"]
        header.append("survival")
        rows = []
        for t, a, s in zip(self.times, self.amps, self.survival):
            row = [t]
            for z in a:
                row += [z.real, z.imag]
            row.append(s)
            rows.append(row)
        write_csv(path, header, rows, comment=comment)


def evolve_nojump(H_nh, psi0, config: EvolutionConfig) -> NoJumpSolution:
    """Integrate ``d psi/dt = -i H_nh psi`` with fixed-step RK4."""
    if not isinstance(psi0, StateVector):
        raise TypeError("psi0 must be a StateVector")
    H = _as_dense(H_nh)
    if H.shape[0] != psi0.space.dim:
        raise ValueError(f"H_nh has dimension {H.shape[0]}, state has {psi0.space.dim}")
    if not psi0.is_normalized:
        raise ValueError(f"initial state must be normalized (norm^2 = {psi0.norm2})")
    P = rk4_propagator(-1j * H, config.dt)
    n, stride = config.n_steps, config.output_stride
    psi = psi0.amps.astype(complex).copy()
    norm2 = float(np.vdot(psi, psi).real)
    times, amps, surv = [0.0], [psi.copy()], [norm2]
    for k in range(1, n + 1):
        psi = P @ psi
        new = float(np.vdot(psi, psi).real)
        if new > norm2 + 1e-8:
            raise NumericalInstabilityError(
                f"norm grew from {norm2:.12g} to {new:.12g} at step {k} "
                f"(t={k * config.dt:.6g}); reduce dt={config.dt}")
        norm2 = new
        if k % stride == 0 or k == n:
            times.append(k * config.dt)
            amps.append(psi.copy())
            surv.append(norm2)
    return NoJumpSolution(psi0.space, np.array(times), np.array(amps), np.array(surv))


def jump_rates(psi, J_a, J_b) -> tuple[float, float]:
    """Click rates ``<psi|J^+ J|psi>`` for both detectors (no normalization applied)."""
    amps = psi.amps if isinstance(psi, StateVector) else np.asarray(psi)
    va, vb = J_a @ amps, J_b @ amps
    return float(np.vdot(va, va).real), float(np.vdot(vb, vb).real)


def apply_jump(psi: StateVector, J) -> StateVector:
    """Post-click state ``J psi / ||J psi||``."""
    out = J @ psi.amps
    rate = float(np.vdot(out, out).real)
    if rate <= DARK_TOL:
        raise DarkStateError(f"jump on dark state: <J^+J> = {rate:.3e}")
    return StateVector(psi.space, out / np.sqrt(rate))


@dataclass(frozen=True, eq=False)
class DensityMatrix:
    space: HilbertSpace
    data: np.ndarray

    @classmethod
    def pure(cls, psi: StateVector) -> "DensityMatrix":
        return cls(psi.space, np.outer(psi.amps, psi.amps.conj()))

    @property
    def trace(self) -> complex:
        return complex(np.trace(self.data))

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.data - self.data.conj().T)))

    def min_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh(0.5 * (self.data + self.data.conj().T)).min())

    def expect(self, op) -> complex:
        return complex(np.trace(_as_dense(op) @ self.data))


def trace_distance(rho: DensityMatrix | np.ndarray, sigma: DensityMatrix | np.ndarray) -> float:
    a = rho.data if isinstance(rho, DensityMatrix) else rho
    b = sigma.data if isinstance(sigma, DensityMatrix) else sigma
    d = a - b
    return 0.5 * float(np.abs(np.linalg.eigvalsh(0.5 * (d + d.conj().T))).sum())


@dataclass(frozen=True, eq=False)
class MasterSolution:
    times: np.ndarray
    states: list[DensityMatrix]

    def at(self, t: float) -> DensityMatrix:
        i = int(np.argmin(np.abs(self.times - t)))
        if abs(self.times[i] - t) > 1e-9:
            raise KeyError(f"t={t} is not an output time")
        return self.states[i]


def evolve_master_equation(params: SystemParams, rho0: DensityMatrix,
                           config: EvolutionConfig, cascade: float = 1.0,
                           trace_tol: float = 1e-8, positivity_tol: float = 1e-9) -> MasterSolution:
    """Unconditional dynamics ``-i[H_c, rho] + sum_j (J rho J^+ - {J^+J, rho}/2)``.

    ``H_c`` is the Hermitian system Hamiltonian plus the one-way cascade term; the
    no-jump generator is never used here, so this is an independent check of it.
    """
    space = rho0.space
    H_c = (build_system_hamiltonian(params, space)
           + build_cascade_correction(params, space) * cascade).dense()
    jumps = [J.dense() for J in build_jump_operators(params, space)]
    JdJ = sum(J.conj().T @ J for J in jumps)

    def rhs(r):
        out = -1j * (H_c @ r - r @ H_c) - 0.5 * (JdJ @ r + r @ JdJ)
        for J in jumps:
            out += J @ r @ J.conj().T
        return out

    h = config.dt
    r = rho0.data.astype(complex).copy()
    tr0 = np.trace(r).real
    times, states = [0.0], [DensityMatrix(space, r.copy())]
    n, stride = config.n_steps, config.output_stride
    for k in range(1, n + 1):
        k1 = rhs(r)
        k2 = rhs(r + 0.5 * h * k1)
        k3 = rhs(r + 0.5 * h * k2)
        k4 = rhs(r + h * k3)
        r = r + (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
        if k % stride == 0 or k == n:
            drift = abs(np.trace(r) - tr0)
            if drift > trace_tol:
                raise NumericalInstabilityError(f"trace drifted by {drift:.3e} at t={k * h:.6g}")
            rho = DensityMatrix(space, r.copy())
            if rho.min_eigenvalue() < -positivity_tol:
                raise NumericalInstabilityError(
                    f"density matrix lost positivity at t={k * h:.6g} "
                    f"(min eigenvalue {rho.min_eigenvalue():.3e})")
            times.append(k * h)
            states.append(rho)
    return MasterSolution(np.array(times), states)


# amplitudes d1..d9 of the product subspace reachable without inter-cavity transfer
EARLY_KETS = ("e00,e00", "e00,g10", "e00,g01", "g10,e00", "g01,e00",
              "g10,g10", "g10,g01", "g01,g10", "g01,g01")
# (left, right) position of d1..d9 in the 3x3 product grid over [e00, g10, g01]
_EARLY_GRID = ((0, 0), (0, 1), (0, 2), (1, 0), (2, 0), (1, 1), (1, 2), (2, 1), (2, 2))


@dataclass(frozen=True, eq=False)
class EarlyTimeSolution:
    times: np.ndarray
    d: np.ndarray               # (n_times, 9), column j is d_{j+1}
    eigenvalues: np.ndarray     # lambda_i of the 9x9 generator
    alphas: np.ndarray          # alphas[k, i]: d_{k+1}(t) = sum_i alphas[k, i] exp(lambda_i t)
    generator: np.ndarray

    def modal(self, t) -> np.ndarray:
        """``d(t)`` rebuilt from the eigen-expansion."""
        t = np.atleast_1d(t)
        return np.exp(np.outer(t, self.eigenvalues)) @ self.alphas.T

    def taylor(self, order: int) -> np.ndarray:
        """Coefficient of ``t**order`` in each ``d_k``: ``sum_i alpha_i lambda_i**order / order!``."""
        from math import factorial
        return (self.alphas * self.eigenvalues ** order).sum(axis=1) / factorial(order)

    def left_purity(self) -> np.ndarray:
        """Purity of the normalized left-system marginal at every output time."""
        out = []
        for row in self.d:
            M = np.zeros((3, 3), dtype=complex)
            for amp, (l, r) in zip(row, _EARLY_GRID):
                M[l, r] = amp
            rho_L = M @ M.conj().T
            rho_L /= np.trace(rho_L).real
            out.append(np.trace(rho_L @ rho_L).real)
        return np.array(out)

    def to_csv(self, path, comment: str | None = None):
        header = ["t"] + [f"{p}[d{j + 1}]" for j in range(9) for p in ("re", "im")]
        rows = [[t] + [x for z in row for x in (z.real, z.imag)]
                for t, row in zip(self.times, self.d)]
        write_csv(path, header, rows, comment=comment)


def early_indices(space: HilbertSpace) -> list[int]:
    return [space.index[BasisState.parse(k)] for k in EARLY_KETS]


def early_time_model(params: SystemParams, config: EvolutionConfig) -> EarlyTimeSolution:
    """Restrict the full no-jump generator to the nine product states and integrate."""
    if params.max_excitations != 2:
        raise ValueError("the early-time model needs max_excitations=2")
    space = enumerate_basis(2)
    H = build_effective_hamiltonian(params, space).dense()
    idx = early_indices(space)
    G = -1j * H[np.ix_(idx, idx)]
    d0 = np.zeros(9, dtype=complex)
    d0[0] = 1.0

    P = rk4_propagator(G, config.dt)
    d = d0.copy()
    times, rows = [0.0], [d0.copy()]
    for k in range(1, config.n_steps + 1):
        d = P @ d
        if k % config.output_stride == 0 or k == config.n_steps:
            times.append(k * config.dt)
            rows.append(d.copy())

    lam, V = np.linalg.eig(G)
    coeffs = np.linalg.solve(V, d0)
    alphas = V * coeffs[None, :]
    return EarlyTimeSolution(np.array(times), np.array(rows), lam, alphas, G)


def full_model_early_components(sol: NoJumpSolution) -> np.ndarray:
    """Columns of a full no-jump solution matching d1..d9."""
    return sol.amps[:, early_indices(sol.space)]


def model_nojump(model: Model, config: EvolutionConfig, psi0: StateVector | None = None) -> NoJumpSolution:
    if psi0 is None:
        psi0 = StateVector(model.space, model.initial_state())
    return evolve_nojump(model.H_nh, psi0, config)
