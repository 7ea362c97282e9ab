import numpy as np
import pytest

from twocavity.dynamics import DensityMatrix, EvolutionConfig, StateVector, evolve_master_equation
from twocavity.iohelpers import read_csv
from twocavity.model import SystemParams, build_model
from twocavity.trajectories import (build_histograms, click_density_from_master,
                                    detection_horizon, run_ensemble, run_trajectory,
                                    sample_independent_pairs, trajectory_seed)

WEAK = SystemParams(g_mag=0.25, delta=0.5)
N = 5000


@pytest.fixture(scope="module")
def ens():
    return run_ensemble(WEAK, N, master_seed=7)


def test_seed_derivation_is_stable():
    assert trajectory_seed(7, 3) == trajectory_seed(7, 3)
    assert trajectory_seed(7, 3) != trajectory_seed(7, 4)
    assert trajectory_seed(7, 3) != trajectory_seed(8, 3)


def test_ensemble_members_match_single_runs(ens):
    model = build_model(WEAK)
    for i in (0, 1, 2499, 2500, N - 1):
        single = run_trajectory(WEAK, trajectory_seed(7, i), model=model)
        assert single.events == ens.records[i].events


def test_same_seed_same_record():
    a = run_trajectory(WEAK, 123)
    b = run_trajectory(WEAK, 123)
    assert a == b and a.params_hash == WEAK.digest()


def test_worker_count_does_not_change_results(ens):
    par = run_ensemble(WEAK, 3000, master_seed=7, workers=2, chunk_size=1000)
    assert [r.events for r in par.records] == [r.events for r in ens.records[:3000]]


def test_uncoupled_single_photon_clicks_once_at_b():
    p = SystemParams(g_mag=0.0)
    model = build_model(p)
    psi0 = StateVector.basis(model.space, "g01,g00")
    cfg = EvolutionConfig(t_max=40.0)
    for seed in range(5):
        rec = run_trajectory(p, seed, cfg, psi0=psi0, model=model)
        assert rec.complete and rec.detectors == "b"


def test_records_are_complete_pairs(ens):
    assert ens.n_incomplete == 0 and ens.n_complete == N
    for r in ens.records:
        assert len(r.events) == 2
        assert 0 < r.events[0][0] < r.events[1][0]
        assert set(r.detectors) <= {"a", "b"}
    assert ens.fraction_same + ens.fraction_diff == pytest.approx(1.0)


def test_horizon_covers_slowest_mode():
    model = build_model(WEAK)
    T = detection_horizon(model)
    assert T >= 40.0 and T == int(T)


def test_histogram_mass(ens):
    h = build_histograms(ens.records, bin_width=0.5)
    for q in ("T1", "T2", "dT"):
        assert h.counts[(q, "same")].sum() + h.counts[(q, "diff")].sum() == ens.n_complete
    assert np.allclose(np.diff(h.edges), 0.5)
    with pytest.raises(ValueError):
        build_histograms(ens.records, bin_width=0)


def test_same_detector_pairs_arrive_closer(ens):
    assert ens.waiting_times(True).mean() < ens.waiting_times(False).mean()


def test_different_detector_delay_has_a_dip(ens):
    h = build_histograms(ens.records, bin_width=0.5)
    diff = h.counts[("dT", "diff")]
    # rises from zero delay, dips around two cavity lifetimes, then recovers
    window = diff[2:9]
    dip = 2 + int(np.argmin(window))
    assert diff[:dip].max() > diff[dip] and diff[dip:dip + 10].max() > diff[dip]
    assert 1.0 <= h.edges[dip] <= 4.0


def test_detector_exchange_symmetry(ens):
    na, nb = ens.click_times("a").size, ens.click_times("b").size
    assert abs(na - nb) < 3 * np.sqrt(na + nb)
    counts = {}
    for r in ens.records:
        counts[r.detectors] = counts.get(r.detectors, 0) + 1
    for x, y in (("aa", "bb"), ("ab", "ba")):
        assert abs(counts[x] - counts[y]) < 3 * np.sqrt(counts[x] + counts[y])


def test_fraction_stable_when_doubling(ens):
    big = run_ensemble(WEAK, 2 * N, master_seed=8)
    f1, f2 = ens.fraction_same, big.fraction_same
    sigma = np.sqrt(f1 * (1 - f1) / N + f2 * (1 - f2) / (2 * N))
    assert abs(f1 - f2) < 2 * sigma


def test_click_density_matches_master_equation(ens):
    model = build_model(WEAK)
    rho0 = DensityMatrix.pure(StateVector(model.space, model.initial_state()))
    sol = evolve_master_equation(WEAK, rho0, EvolutionConfig(dt=5e-3, t_max=15.0, output_stride=1))
    width = 0.5
    edges = np.arange(0.0, 15.0 + 1e-9, width)
    for det in ("a", "b"):
        rate = click_density_from_master(sol, model, det)
        cum = np.concatenate([[0.0], np.cumsum((rate[1:] + rate[:-1]) / 2 * np.diff(sol.times))])
        expected = N * np.diff(np.interp(edges, sol.times, cum))
        observed = np.histogram(ens.click_times(det), edges)[0]
        assert np.all(np.abs(observed - expected) <= 3 * np.sqrt(expected) + 1)


def test_independent_pairs():
    pairs = sample_independent_pairs(WEAK, 2000, master_seed=3)
    assert pairs.shape == (2000, 2) and np.all(np.isfinite(pairs)) and np.all(pairs > 0)
    again = sample_independent_pairs(WEAK, 2000, master_seed=3)
    assert np.array_equal(pairs, again)
    h = build_histograms([], independent=pairs)
    assert h.counts[("T1", "indep")].sum() == 2000
    assert np.all(h.edges[:-1][h.counts[("dT", "indep")] > 0] >= 0)


def test_csv_outputs(ens, tmp_path):
    ens.records_to_csv(tmp_path / "rec.csv", comment="c")
    header, rows = read_csv(tmp_path / "rec.csv")
    assert header == ["index", "T1", "det1", "T2", "det2"] and len(rows) == N
    h = build_histograms(ens.records)
    h.to_csv(lambda q: tmp_path / f"h_{q}.csv")
    for q in ("T1", "T2", "dT"):
        header, rows = read_csv(tmp_path / f"h_{q}.csv")
        assert header == ["bin_left", "count_same", "count_diff", "count_indep"]
        assert len(rows) == len(h.edges) - 1


def test_summary(ens):
    s = ens.summary()
    assert s["n_trajectories"] == N and s["master_seed"] == 7
    assert s["mean_wait_same"] < s["mean_wait_diff"]


def test_rejects_empty_ensemble():
    with pytest.raises(ValueError):
        run_ensemble(WEAK, 0)
