"""Monte Carlo quantum-jump sampling of detection records and their statistics.

Jump times come from the waiting-time law: draw ``r ~ U(0, 1)``, integrate the
unnormalized no-jump state until ``||psi~||^2 <= r``, then bisect inside the last
RK4 step down to ``dt/16``.  The detector is ``a`` with probability
``Pi_a / (Pi_a + Pi_b)``.  Every trajectory owns a generator seeded from
``(master_seed, index)`` and always consumes its uniforms in the same order, so a
record depends only on its seed, never on batching or worker count.
"""

from __future__ import annotations

import concurrent.futures
from dataclasses import dataclass, field

import numpy as np

from .dynamics import (DensityMatrix, EvolutionConfig, MasterSolution, StateVector,
                       rk4_propagator)
from .iohelpers import write_csv
from .model import Model, SystemParams, build_model, build_single_cavity

BISECTIONS = 4          # bracket width dt / 16
SURVIVAL_TOL = 1e-6


def detection_horizon(model: Model, survival_tol: float = SURVIVAL_TOL) -> float:
    """Time by which the slowest no-jump mode has decayed below ``survival_tol``.

    The slowest population decay rate over all excited sectors sets how long a
    trajectory can stay undetected; the result is rounded up to a whole ``1/kappa``.
    """
    H = model.H_nh.dense()
    rates = []
    for k in range(1, model.space.max_excitations + 1):
        s = model.space.sector(k)
        rates.append(np.min(-2 * np.linalg.eigvals(H[s, s]).imag))
    slowest = min(rates)
    if slowest <= 0:
        raise ValueError("a no-jump mode does not decay; no finite horizon detects every photon")
    return float(np.ceil(np.log(1 / survival_tol) / slowest / model.params.kappa) * model.params.kappa)


def default_config(model: Model, dt: float = 1e-3) -> EvolutionConfig:
    return EvolutionConfig(dt=dt, t_max=detection_horizon(model))


def trajectory_seed(master_seed: int, index: int) -> int:
    """Seed for trajectory ``index`` of an ensemble."""
    ss = np.random.SeedSequence([int(master_seed), int(index)])
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass(frozen=True)
class TrajectoryRecord:
    events: tuple[tuple[float, str], ...]
    seed: int
    params_hash: str
    complete: bool = True

    @property
    def times(self) -> tuple[float, ...]:
        return tuple(t for t, _ in self.events)

    @property
    def detectors(self) -> str:
        return "".join(d for _, d in self.events)

    @property
    def same_detector(self) -> bool:
        return len(self.events) == 2 and self.events[0][1] == self.events[1][1]

    @property
    def waiting_time(self) -> float:
        return self.events[1][0] - self.events[0][0]


def _apply(M: np.ndarray, X: np.ndarray) -> np.ndarray:
    # row-wise product with a fixed summation order, independent of batch size
    return np.einsum("ij,nj->ni", M, X)


def _norm2(X: np.ndarray) -> np.ndarray:
    return np.einsum("ni,ni->n", X.real, X.real) + np.einsum("ni,ni->n", X.imag, X.imag)


class _Block:
    """No-jump propagation inside one excitation sector."""

    def __init__(self, G: np.ndarray, dt: float):
        self.dt = dt
        self.P = rk4_propagator(G, dt)
        self.G = [np.linalg.matrix_power(G, p) for p in range(1, 5)]

    def partial(self, X: np.ndarray, h: np.ndarray) -> np.ndarray:
        """One RK4 step of per-row length ``h`` from rows ``X``."""
        h = np.asarray(h)[:, None]
        out = X.copy()
        fac = 1.0
        for p, Gp in enumerate(self.G, start=1):
            fac = fac * p
            out = out + (h ** p / fac) * _apply(Gp, X)
        return out

    def bisect(self, X: np.ndarray, r: np.ndarray):
        """Refine crossings of ``||psi||^2 = r`` inside a step starting at rows ``X``."""
        lo = np.zeros(len(X))
        hi = np.full(len(X), self.dt)
        for _ in range(BISECTIONS):
            mid = 0.5 * (lo + hi)
            below = _norm2(self.partial(X, mid)) <= r
            hi = np.where(below, mid, hi)
            lo = np.where(below, lo, mid)
        mid = 0.5 * (lo + hi)
        return mid, self.partial(X, mid)


class _Engine:
    def __init__(self, model: Model, dt: float, t_max: float):
        self.model = model
        self.space = model.space
        self.dt = dt
        self.t_max = t_max
        H = model.H_nh.dense()
        Ja, Jb = model.J_a.dense(), model.J_b.dense()
        self.blocks, self.jumps = {}, {}
        for k in range(1, self.space.max_excitations + 1):
            s, s0 = self.space.sector(k), self.space.sector(k - 1)
            self.blocks[k] = _Block(-1j * H[s, s], dt)
            self.jumps[k] = (Ja[s0, s], Jb[s0, s])

    def segment(self, k, X, r, horizon, sample_at=None, shared=False):
        """Evolve rows in sector ``k`` until each crosses its threshold.

        Returns elapsed jump times (``inf`` if the horizon came first), the
        unnormalized rows at the jump, and the rows at the requested elapsed sample
        offsets (``sample_at``: (N, S), NaN where not wanted; NaN rows where the jump
        came first).
        """
        if shared:
            return self._segment_shared(k, X, r, horizon, sample_at)
        block, dt = self.blocks[k], self.dt
        N, d = X.shape
        s_jump = np.full(N, np.inf)
        Y = np.zeros((N, d), dtype=complex)
        S = 0 if sample_at is None else sample_at.shape[1]
        samples = np.full((N, S, d), np.nan, dtype=complex)
        active = np.arange(N)
        cur = X.copy()
        step = 0
        while active.size:
            t0 = step * dt
            if S:
                e = sample_at[active] - t0
                hit = (e >= 0) & (e < dt)
                rows, cols = np.nonzero(hit)
                if rows.size:
                    samples[active[rows], cols] = block.partial(cur[rows], e[rows, cols])
            new = _apply(block.P, cur)
            crossed = _norm2(new) <= r[active]
            if crossed.any():
                h, state = block.bisect(cur[crossed], r[active[crossed]])
                s_jump[active[crossed]] = t0 + h
                Y[active[crossed]] = state
            over = ~crossed & (t0 + dt > horizon[active])
            keep = ~crossed & ~over
            active, cur = active[keep], new[keep]
            step += 1
        if S:
            late = sample_at >= s_jump[:, None]
            samples[late] = np.nan
        return s_jump, Y, samples

    def _segment_shared(self, k, X, r, horizon, sample_at):
        # every row starts from the same state: evolve one copy and read crossings off it
        block, dt = self.blocks[k], self.dt
        N, d = X.shape
        x = X[:1].copy()
        grid, norms = [x[0].copy()], [_norm2(x)[0]]
        r_min, h_max = r.min(), horizon.max()
        step = 0
        while norms[-1] > r_min and step * dt < h_max:
            x = _apply(block.P, x)
            grid.append(x[0].copy())
            norms.append(_norm2(x)[0])
            step += 1
        grid, norms = np.array(grid), np.array(norms)
        first = np.searchsorted(-norms, -r, side="left")     # first grid index with norm <= r
        s_jump = np.full(N, np.inf)
        Y = np.zeros((N, d), dtype=complex)
        ok = (first < len(norms)) & (first >= 1)
        ok &= (first - 1) * dt + dt <= horizon
        if ok.any():
            base = first[ok] - 1
            h, state = block.bisect(grid[base], r[ok])
            s_jump[ok] = base * dt + h
            Y[ok] = state
        S = 0 if sample_at is None else sample_at.shape[1]
        samples = np.full((N, S, d), np.nan, dtype=complex)
        if S:
            for j in range(S):
                e = sample_at[:, j]
                want = np.isfinite(e) & (e >= 0) & (e < s_jump)
                if not want.any():
                    continue
                base = np.floor(e[want] / dt + 1e-9).astype(int)
                base = np.minimum(base, len(grid) - 1)
                samples[want, j] = block.partial(grid[base], e[want] - base * dt)
        return s_jump, Y, samples


def _choose_detectors(engine: _Engine, k: int, Y: np.ndarray, u: np.ndarray):
    Ja, Jb = engine.jumps[k]
    va, vb = _apply(Ja, Y), _apply(Jb, Y)
    pa, pb = _norm2(va), _norm2(vb)
    to_a = u < pa / (pa + pb)
    post = np.where(to_a[:, None], va, vb)
    post = post / np.sqrt(np.where(to_a, pa, pb))[:, None]
    return to_a, post


def _simulate(model: Model, seeds, config: EvolutionConfig, psi0: np.ndarray,
              sample_times=None):
    """Run one batch of trajectories; returns records and optional sampled states."""
    engine = _Engine(model, config.dt, config.t_max)
    space = model.space
    weights = [np.sum(np.abs(psi0[space.sector(k)]) ** 2) for k in range(space.max_excitations + 1)]
    k0 = int(np.argmax(weights))
    if abs(weights[k0] - 1.0) > 1e-10:
        raise ValueError("initial state must be normalized and lie in one excitation sector")
    N = len(seeds)
    draws = np.array([np.random.default_rng(s).random(2 * max(k0, 1)) for s in seeds]).reshape(N, -1)
    params_hash = model.params.digest()

    sample_times = np.asarray([] if sample_times is None else sample_times, dtype=float)
    S = sample_times.size
    sampled = np.full((N, S, space.dim), np.nan, dtype=complex)

    X = np.tile(psi0[space.sector(k0)], (N, 1))
    t_now = np.zeros(N)
    alive = np.ones(N, dtype=bool)
    events = [[] for _ in range(N)]
    shared = True
    for jump_no, k in enumerate(range(k0, 0, -1)):
        idx = np.nonzero(alive)[0]
        if idx.size == 0:
            break
        r = draws[idx, 2 * jump_no]
        u = draws[idx, 2 * jump_no + 1]
        horizon = config.t_max - t_now[idx]
        sample_at = (sample_times[None, :] - t_now[idx, None]) if S else None
        s_jump, Y, samp = engine.segment(k, X[idx], r, horizon, sample_at=sample_at, shared=shared)
        if S:
            sec = space.sector(k)
            got = ~np.isnan(samp[:, :, 0])
            full = np.zeros((len(idx), S, space.dim), dtype=complex)
            full[:, :, sec] = np.where(got[:, :, None], samp, 0)
            n = np.sqrt(np.where(got, _norm2(full.reshape(-1, space.dim)).reshape(len(idx), S), 1.0))
            full = full / n[:, :, None]
            sub = sampled[idx]
            sub[got] = full[got]
            sampled[idx] = sub
        jumped = np.isfinite(s_jump)
        alive[idx[~jumped]] = False
        hit = idx[jumped]
        to_a, post = _choose_detectors(engine, k, Y[jumped], u[jumped])
        t_now[hit] += s_jump[jumped]
        for i, a in zip(hit, to_a):
            events[i].append((float(t_now[i]), "a" if a else "b"))
        X = np.zeros((N, post.shape[1]), dtype=complex)
        X[hit] = post
        shared = False

    complete = [len(ev) == k0 for ev in events]
    if S:
        # after the last click the system is in the vacuum
        vac = space.sector(0).start
        for i in range(N):
            if complete[i]:
                after = sample_times >= events[i][-1][0]
                for j in np.nonzero(after)[0]:
                    sampled[i, j] = 0
                    sampled[i, j, vac] = 1.0
    records = [TrajectoryRecord(tuple(ev), int(s), params_hash, c)
               for ev, s, c in zip(events, seeds, complete)]
    return records, (sampled if S else None)


def run_trajectory(params: SystemParams, seed: int, config: EvolutionConfig | None = None,
                   psi0: StateVector | None = None, model: Model | None = None) -> TrajectoryRecord:
    """One detection record; identical for identical seeds."""
    model = model or build_model(params)
    config = config or default_config(model)
    amps = psi0.amps if psi0 is not None else model.initial_state()
    records, _ = _simulate(model, [seed], config, amps)
    return records[0]


@dataclass(frozen=True, eq=False)
class HistogramSet:
    edges: np.ndarray
    counts: dict          # (quantity, class) -> counts, quantity in T1/T2/dT

    def to_csv(self, path_for, comment: str | None = None):
        """Write one CSV per quantity; ``path_for(quantity)`` gives the file path."""
        for q in ("T1", "T2", "dT"):
            rows = [[left, s, d, i] for left, s, d, i in zip(
                self.edges[:-1], self.counts[(q, "same")], self.counts[(q, "diff")],
                self.counts[(q, "indep")])]
            write_csv(path_for(q), ["bin_left", "count_same", "count_diff", "count_indep"],
                      rows, comment=comment)


def build_histograms(records, bin_width: float = 0.5, independent=None,
                     t_max: float | None = None) -> HistogramSet:
    """Frequency histograms of T1, T2 and T2 - T1 split by same/different detector.

    ``independent`` is an (n, 2) array of paired click times from two isolated
    emitters; without it the ``indep`` counts are zero.
    """
    if not bin_width > 0:
        raise ValueError("bin_width must be positive")
    done = [r for r in records if r.complete and len(r.events) == 2]
    t1 = np.array([r.events[0][0] for r in done])
    t2 = np.array([r.events[1][0] for r in done])
    same = np.array([r.same_detector for r in done], dtype=bool)
    ind = np.zeros((0, 2)) if independent is None else np.sort(np.asarray(independent), axis=1)
    top = max([t_max or 0.0, *(t2.tolist() or [0.0]), *(ind[:, 1].tolist() or [0.0])])
    edges = np.arange(0.0, top + bin_width, bin_width)
    if edges[-1] <= top:
        edges = np.append(edges, edges[-1] + bin_width)
    data = {"T1": (t1, ind[:, 0]), "T2": (t2, ind[:, 1]), "dT": (t2 - t1, ind[:, 1] - ind[:, 0])}
    counts = {}
    for q, (x, xi) in data.items():
        counts[(q, "same")] = np.histogram(x[same], edges)[0]
        counts[(q, "diff")] = np.histogram(x[~same], edges)[0]
        counts[(q, "indep")] = np.histogram(xi, edges)[0]
    return HistogramSet(edges, counts)


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    n_trajectories: int
    n_complete: int
    n_incomplete: int
    fraction_same: float
    fraction_diff: float
    master_seed: int
    records: list = field(repr=False)
    mean_states: dict = field(default_factory=dict, repr=False)

    def waiting_times(self, same: bool) -> np.ndarray:
        return np.array([r.waiting_time for r in self.records
                         if r.complete and len(r.events) == 2 and r.same_detector == same])

    def click_times(self, detector: str) -> np.ndarray:
        return np.array([t for r in self.records if r.complete
                         for t, d in r.events if d == detector])

    def records_to_csv(self, path, comment: str | None = None):
        rows = []
        for i, r in enumerate(self.records):
            ev = list(r.events) + [(float("nan"), "")] * (2 - len(r.events))
            rows.append([i, ev[0][0], ev[0][1], ev[1][0], ev[1][1]])
        write_csv(path, ["index", "T1", "det1", "T2", "det2"], rows, comment=comment)

    def summary(self) -> dict:
        ws, wd = self.waiting_times(True), self.waiting_times(False)
        return {"n_trajectories": self.n_trajectories, "n_complete": self.n_complete,
                "n_incomplete": self.n_incomplete, "fraction_same": self.fraction_same,
                "fraction_diff": self.fraction_diff,
                "mean_wait_same": float(ws.mean()) if ws.size else float("nan"),
                "mean_wait_diff": float(wd.mean()) if wd.size else float("nan"),
                "master_seed": self.master_seed}


def _chunk_job(args):
    params, cascade, config, master_seed, start, stop, sample_times = args
    model = build_model(params, cascade=cascade)
    seeds = [trajectory_seed(master_seed, i) for i in range(start, stop)]
    records, sampled = _simulate(model, seeds, config, model.initial_state(), sample_times)
    sums = None
    if sampled is not None:
        sums = np.einsum("nsi,nsj->sij", sampled, sampled.conj())
    return records, sums


def run_ensemble(params: SystemParams, n: int, master_seed: int = 0,
                 config: EvolutionConfig | None = None, workers: int = 1,
                 chunk_size: int = 2500, sample_times=None, cascade: float = 1.0) -> EnsembleStats:
    """``n`` independent trajectories from the two-excitation start.

    Work is split into fixed index chunks, so any ``workers`` value gives identical
    results.  ``sample_times`` additionally averages ``|psi><psi|`` over the ensemble
    at those times (``mean_states``).
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    config = config or default_config(build_model(params, cascade=cascade))
    st = None if sample_times is None else tuple(float(t) for t in sample_times)
    jobs = [(params, cascade, config, master_seed, a, min(a + chunk_size, n), st)
            for a in range(0, n, chunk_size)]
    if workers > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_chunk_job, jobs))
    else:
        results = [_chunk_job(j) for j in jobs]

    records = [r for recs, _ in results for r in recs]
    mean_states = {}
    if st is not None:
        total = sum(s for _, s in results)
        space = build_model(params).space
        mean_states = {t: DensityMatrix(space, total[j] / n) for j, t in enumerate(st)}
    done = [r for r in records if r.complete]
    n_same = sum(r.same_detector for r in done)
    n_done = len(done)
    frac_same = n_same / n_done if n_done else float("nan")
    return EnsembleStats(n, n_done, n - n_done, frac_same,
                         1.0 - frac_same if n_done else float("nan"),
                         master_seed, records, mean_states)


def sample_independent_pairs(params: SystemParams, n: int, master_seed: int = 0,
                             config: EvolutionConfig | None = None) -> np.ndarray:
    """Click times of two isolated single-photon emitters, paired up: shape (n, 2)."""
    H_nh, _, _ = build_single_cavity(params)
    if config is None:
        slowest = np.min(-2 * np.linalg.eigvals(H_nh).imag)
        config = EvolutionConfig(t_max=float(np.ceil(np.log(1 / SURVIVAL_TOL) / slowest)))
    block = _Block(-1j * H_nh, config.dt)
    # distinct stream from the coupled ensemble
    rng = np.random.default_rng(np.random.SeedSequence([int(master_seed), 2**32 - 1]))
    r = rng.random((n, 2)).ravel()
    x = np.array([[1.0, 0.0, 0.0]], dtype=complex)
    grid, norms = [x[0].copy()], [1.0]
    step = 0
    while norms[-1] > r.min() and step * config.dt < config.t_max:
        x = _apply(block.P, x)
        grid.append(x[0].copy())
        norms.append(_norm2(x)[0])
        step += 1
    grid, norms = np.array(grid), np.array(norms)
    first = np.searchsorted(-norms, -r, side="left")
    t = np.full(r.size, np.nan)
    ok = (first >= 1) & (first < len(norms))
    h, _ = block.bisect(grid[first[ok] - 1], r[ok])
    t[ok] = (first[ok] - 1) * config.dt + h
    return t.reshape(n, 2)


def click_density_from_master(solution: MasterSolution, model: Model, detector: str = "a") -> np.ndarray:
    """Unconditional click rate ``Tr(J rho J^+)`` at each output time of an oracle run."""
    J = {"a": model.J_a, "b": model.J_b}[detector].dense()
    return np.array([np.trace(J @ rho.data @ J.conj().T).real for rho in solution.states])
