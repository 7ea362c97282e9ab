"""Truncated Hilbert space and operators for two bidirectionally coupled atom-cavity systems.

Layout of one basis ket: ``(atom_L, n1, n2 | atom_R, n3, n4)``.  Modes ``a1`` and
``a2`` live in the left cavity, ``a3`` and ``a4`` in the right one.  ``a1`` leaks
rightwards (into ``a3`` and then detector ``D_a``), ``a4`` leaks leftwards (into
``a2`` and then detector ``D_b``).  The fiber delay is taken to zero.

Units: hbar = 1, times in 1/kappa when kappa = 1.  Everything is written in the
frame rotating at the cavity frequency, so the only bare energy left is the atomic
detuning ``delta = w_eg - w_c`` on the excited level.  The lab-frame Hamiltonian puts
the atomic ground states at ``-w_eg``; that offset and the cavity energy ``w_c * n``
are constant inside each excitation sector and drop out after the frame change.
"""

from __future__ import annotations

import hashlib
import itertools
import json
from dataclasses import asdict, dataclass, field
from typing import Iterable, NamedTuple

import numpy as np
import scipy.sparse as sp

MODES = ("a1", "a2", "a3", "a4")
SIDES = ("L", "R")

# slot of each ladder label inside a BasisState tuple
_SLOT = {"L": 0, "a1": 1, "a2": 2, "R": 3, "a3": 4, "a4": 5}


@dataclass(frozen=True)
class SystemParams:
    """Physical constants of the mirror-symmetric setup, in units of kappa.

    ``g_L = g_mag * exp(i*phi)`` and ``g_R = g_mag * exp(-i*phi)``.  Positive
    ``delta`` puts the atom above the cavity resonance; both signs are allowed.
    """

    g_mag: float = 0.25
    phi: float = 0.0
    kappa: float = 1.0
    delta: float = 0.5
    delta_T: float = 0.1
    max_excitations: int = 2

    def __post_init__(self):
        if not self.kappa > 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.g_mag < 0:
            raise ValueError(f"g_mag must be non-negative, got {self.g_mag}")
        if not self.delta_T > 0:
            raise ValueError(f"delta_T must be positive, got {self.delta_T}")
        if self.max_excitations not in (1, 2):
            raise ValueError(f"max_excitations must be 1 or 2, got {self.max_excitations}")

    @property
    def g_L(self) -> complex:
        return self.g_mag * np.exp(1j * self.phi)

    @property
    def g_R(self) -> complex:
        return self.g_mag * np.exp(-1j * self.phi)

    def replace(self, **changes) -> "SystemParams":
        return SystemParams(**{**asdict(self), **changes})

    def digest(self) -> str:
        """Short stable hash of the parameter values."""
        blob = json.dumps(asdict(self), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


class BasisState(NamedTuple):
    """Occupation numbers of one basis ket; atoms are 0 (g) or 1 (e)."""

    atom_L: int
    n1: int
    n2: int
    atom_R: int
    n3: int
    n4: int

    @property
    def excitations(self) -> int:
        return sum(self)

    @property
    def left(self) -> tuple[int, int, int]:
        return self[0:3]

    @property
    def right(self) -> tuple[int, int, int]:
        return self[3:6]

    def __str__(self):
        a = "ge"
        return f"{a[self.atom_L]}{self.n1}{self.n2},{a[self.atom_R]}{self.n3}{self.n4}"

    @classmethod
    def parse(cls, text: str) -> "BasisState":
        """Parse ``"e00,g10"`` (``|`` is accepted as the separator too)."""
        cleaned = text.replace("|", ",").replace(" ", "")
        left, right = cleaned.split(",")
        atoms = {"g": 0, "e": 1}
        return cls(atoms[left[0]], int(left[1]), int(left[2]),
                   atoms[right[0]], int(right[1]), int(right[2]))


def _sort_key(s: BasisState):
    return (s.excitations,) + tuple(s)


@dataclass(frozen=True)
class HilbertSpace:
    """Every atom/Fock configuration with at most ``max_excitations`` quanta.

    Ordering is lexicographic in (total excitations, atom_L, n1, n2, atom_R, n3, n4)
    with g < e, so sector k occupies a contiguous index range.
    """

    max_excitations: int
    states: tuple[BasisState, ...]
    index: dict = field(repr=False, compare=False)
    sectors: dict = field(repr=False, compare=False)

    @property
    def dim(self) -> int:
        return len(self.states)

    def sector(self, k: int) -> slice:
        return self.sectors[k]

    def ket(self, label) -> np.ndarray:
        """Basis vector for a BasisState or its string form."""
        if isinstance(label, str):
            label = BasisState.parse(label)
        v = np.zeros(self.dim, dtype=complex)
        v[self.index[BasisState(*label)]] = 1.0
        return v

    def excitation_numbers(self) -> np.ndarray:
        return np.array([s.excitations for s in self.states])

    def local_states(self) -> tuple[tuple[int, int, int], ...]:
        """States of one side (atom, na, nb), ordered like the global basis."""
        locs = {s.left for s in self.states} | {s.right for s in self.states}
        return tuple(sorted(locs, key=lambda t: (sum(t),) + t))


def enumerate_basis(max_excitations: int) -> HilbertSpace:
    if max_excitations not in (1, 2):
        raise ValueError(f"max_excitations must be 1 or 2, got {max_excitations}")
    m = max_excitations
    states = []
    for occ in itertools.product((0, 1), range(m + 1), range(m + 1),
                                 (0, 1), range(m + 1), range(m + 1)):
        s = BasisState(*occ)
        if s.excitations <= m:
            states.append(s)
    states.sort(key=_sort_key)
    index = {s: i for i, s in enumerate(states)}
    sectors = {}
    for k in range(m + 1):
        members = [i for i, s in enumerate(states) if s.excitations == k]
        sectors[k] = slice(members[0], members[-1] + 1)
    return HilbertSpace(m, tuple(states), index, sectors)


@dataclass(frozen=True, eq=False)
class SparseOperator:
    """Complex matrix on a HilbertSpace, kept in CSR form."""

    matrix: sp.csr_array

    @classmethod
    def from_triplets(cls, dim: int, entries: Iterable[tuple[int, int, complex]]):
        entries = list(entries)
        if entries:
            rows, cols, vals = zip(*entries)
        else:
            rows, cols, vals = (), (), ()
        m = sp.coo_array((np.asarray(vals, dtype=complex), (rows, cols)), shape=(dim, dim))
        return cls(m.tocsr())

    @classmethod
    def from_dense(cls, array) -> "SparseOperator":
        return cls(sp.csr_array(np.asarray(array, dtype=complex)))

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def entries(self, tol: float = 0.0) -> list[tuple[int, int, complex]]:
        m = self.matrix.tocoo()
        return [(int(r), int(c), complex(v)) for r, c, v in zip(m.row, m.col, m.data)
                if abs(v) > tol]

    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    def element(self, row: int, col: int) -> complex:
        return complex(self.matrix[row, col])

    def dag(self) -> "SparseOperator":
        return SparseOperator(self.matrix.conj().T.tocsr())

    def is_hermitian(self, tol: float = 1e-12) -> bool:
        diff = (self.matrix - self.matrix.conj().T).tocoo()
        return bool(diff.nnz == 0 or np.max(np.abs(diff.data)) < tol)

    def __matmul__(self, other):
        if isinstance(other, SparseOperator):
            return SparseOperator((self.matrix @ other.matrix).tocsr())
        return self.matrix @ np.asarray(other)

    def __add__(self, other: "SparseOperator"):
        return SparseOperator((self.matrix + other.matrix).tocsr())

    def __sub__(self, other: "SparseOperator"):
        return SparseOperator((self.matrix - other.matrix).tocsr())

    def __mul__(self, scalar):
        return SparseOperator((self.matrix * scalar).tocsr())

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1

    def to_json(self) -> str:
        """Triplet list ``[[row, col, re, im], ...]`` sorted by (row, col)."""
        rows = sorted(self.entries())
        payload = {"dim": self.dim,
                   "entries": [[r, c, v.real, v.imag] for r, c, v in rows]}
        return json.dumps(payload)

    @classmethod
    def from_json(cls, text: str) -> "SparseOperator":
        payload = json.loads(text)
        return cls.from_triplets(payload["dim"],
                                 ((r, c, complex(re, im)) for r, c, re, im in payload["entries"]))


def _lowering(space: HilbertSpace, slot: int) -> SparseOperator:
    entries = []
    for s, col in space.index.items():
        n = s[slot]
        if n > 0:
            lowered = list(s)
            lowered[slot] -= 1
            entries.append((space.index[BasisState(*lowered)], col, np.sqrt(n)))
    return SparseOperator.from_triplets(space.dim, entries)


def build_ladder(space: HilbertSpace, mode: str) -> SparseOperator:
    """Bosonic annihilation operator for mode ``a1``..``a4``."""
    if mode not in MODES:
        raise ValueError(f"unknown mode {mode!r}; expected one of {MODES}")
    return _lowering(space, _SLOT[mode])


def build_sigma_minus(space: HilbertSpace, side: str) -> SparseOperator:
    """Atomic lowering operator |g><e| for the left or right atom."""
    if side not in SIDES:
        raise ValueError(f"unknown side {side!r}; expected 'L' or 'R'")
    return _lowering(space, _SLOT[side])


def _check_space(params: SystemParams, space: HilbertSpace):
    if params.max_excitations != space.max_excitations:
        raise ValueError(
            f"params.max_excitations={params.max_excitations} does not match "
            f"space.max_excitations={space.max_excitations}")


def build_system_hamiltonian(params: SystemParams, space: HilbertSpace) -> SparseOperator:
    """Hermitian atom-cavity Hamiltonian in the frame rotating at w_c."""
    _check_space(params, space)
    a1, a2, a3, a4 = (build_ladder(space, m) for m in MODES)
    sL, sR = build_sigma_minus(space, "L"), build_sigma_minus(space, "R")
    gL, gR = params.g_L, params.g_R

    H = params.delta * (sL.dag() @ sL + sR.dag() @ sR)
    # each mode pair sees g on one mode and g* on the counter-propagating one
    for g, a, s in ((gL, a1, sL), (np.conj(gL), a2, sL), (gR, a3, sR), (np.conj(gR), a4, sR)):
        emit = g * (a.dag() @ s)
        H = H + emit + emit.dag()
    return H


def build_jump_operators(params: SystemParams, space: HilbertSpace):
    """Output fields seen by the two detectors: ``J_a = sqrt(k)(a1 + a3)``, ``J_b = sqrt(k)(a2 + a4)``."""
    _check_space(params, space)
    a1, a2, a3, a4 = (build_ladder(space, m) for m in MODES)
    root = np.sqrt(params.kappa)
    return (a1 + a3) * root, (a2 + a4) * root


def build_cascade_correction(params: SystemParams, space: HilbertSpace) -> SparseOperator:
    """Hermitian term that makes the a1->a3 and a4->a2 feeds one-directional."""
    a1, a2, a3, a4 = (build_ladder(space, m) for m in MODES)
    k = params.kappa
    return ((a1.dag() @ a3 - a3.dag() @ a1) + (a4.dag() @ a2 - a2.dag() @ a4)) * (0.5j * k)


def build_effective_hamiltonian(params: SystemParams, space: HilbertSpace,
                                cascade: float = 1.0) -> SparseOperator:
    """Non-Hermitian no-jump generator.

    ``H_s - (i k/2) sum_i a_i^+ a_i - i k (a3^+ a1 + a2^+ a4)``.  ``cascade`` scales
    the Hermitian one-way correction and exists for mutation testing only: 1 is the
    physical model, -1 reverses the feed direction, 0 gives the naive symmetric form.
    """
    H_s = build_system_hamiltonian(params, space)
    a1, a2, a3, a4 = (build_ladder(space, m) for m in MODES)
    k = params.kappa
    number = a1.dag() @ a1 + a2.dag() @ a2 + a3.dag() @ a3 + a4.dag() @ a4
    cross_sym = a3.dag() @ a1 + a1.dag() @ a3 + a2.dag() @ a4 + a4.dag() @ a2
    H = H_s - number * (0.5j * k) - cross_sym * (0.5j * k)
    return H + build_cascade_correction(params, space) * cascade


@dataclass(frozen=True, eq=False)
class Model:
    """All operators for one parameter set, with dense copies for integration."""

    params: SystemParams
    space: HilbertSpace
    H_s: SparseOperator
    H_nh: SparseOperator
    J_a: SparseOperator
    J_b: SparseOperator
    cascade: float = 1.0

    @property
    def jumps(self) -> tuple[SparseOperator, SparseOperator]:
        return self.J_a, self.J_b

    def initial_state(self) -> np.ndarray:
        """Both atoms excited, all modes empty (or the left atom alone if one quantum)."""
        if self.space.max_excitations == 2:
            return self.space.ket("e00,e00")
        return self.space.ket("e00,g00")


def build_model(params: SystemParams, cascade: float = 1.0) -> Model:
    space = enumerate_basis(params.max_excitations)
    J_a, J_b = build_jump_operators(params, space)
    return Model(params, space,
                 build_system_hamiltonian(params, space),
                 build_effective_hamiltonian(params, space, cascade=cascade),
                 J_a, J_b, cascade)


def build_single_cavity(params: SystemParams):
    """One isolated atom-cavity system (left geometry) holding a single quantum.

    Basis ``[e00, g10, g01]``.  Returns ``(H_nh, L1, L2)`` as dense arrays, with the
    two escape channels ``sqrt(k) a1`` and ``sqrt(k) a2`` written as maps from the
    single-excitation states to the vacuum (row vectors).
    """
    g, k = params.g_L, params.kappa
    H = np.array([[params.delta, np.conj(g), g],
                  [g, 0.0, 0.0],
                  [np.conj(g), 0.0, 0.0]], dtype=complex)
    H_nh = H - 0.5j * k * np.diag([0.0, 1.0, 1.0])
    L1 = np.sqrt(k) * np.array([[0.0, 1.0, 0.0]], dtype=complex)
    L2 = np.sqrt(k) * np.array([[0.0, 0.0, 1.0]], dtype=complex)
    return H_nh, L1, L2
