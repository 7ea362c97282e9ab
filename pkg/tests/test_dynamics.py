import numpy as np
import pytest
from scipy.integrate import simpson
from scipy.linalg import expm

from twocavity.dynamics import (DarkStateError, DensityMatrix, EvolutionConfig,
                                NumericalInstabilityError, StateVector, apply_jump,
                                early_time_model, evolve_master_equation, evolve_nojump,
                                full_model_early_components, jump_rates, rk4_propagator)
from twocavity.iohelpers import read_csv
from twocavity.model import SystemParams, build_model, enumerate_basis


def basis(model, label):
    return StateVector.basis(model.space, label)


def test_rk4_propagator_matches_stage_form():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(5, 5)) + 1j * rng.normal(size=(5, 5))
    y = rng.normal(size=5) + 0j
    h = 0.07
    k1 = A @ y
    k2 = A @ (y + h / 2 * k1)
    k3 = A @ (y + h / 2 * k2)
    k4 = A @ (y + h * k3)
    classic = y + h / 6 * (k1 + 2 * k2 + 2 * k3 + k4)
    assert np.allclose(rk4_propagator(A, h) @ y, classic, atol=1e-13)


def test_rabi_oscillation_without_loss():
    m = build_model(SystemParams(g_mag=0.4, phi=0.0, delta=0.0))
    cfg = EvolutionConfig(dt=1e-3, t_max=10.0, output_stride=50)
    sol = evolve_nojump(m.H_s, basis(m, "e00,g00"), cfg)
    expected = np.cos(np.sqrt(2) * 0.4 * sol.times)
    assert np.allclose(np.abs(sol.amplitude("e00,g00")), np.abs(expected), atol=1e-9)
    assert np.allclose(sol.survival, 1.0, atol=1e-8)


def test_cascaded_photon_survival():
    m = build_model(SystemParams(g_mag=0.0))
    sol = evolve_nojump(m.H_nh, basis(m, "g10,g00"), EvolutionConfig(dt=1e-3, t_max=8.0))
    t = sol.times
    assert np.allclose(sol.survival, np.exp(-t) * (1 + t ** 2), atol=1e-10)


def test_survival_monotone_and_starts_at_one():
    m = build_model(SystemParams(g_mag=0.7, phi=0.3))
    sol = evolve_nojump(m.H_nh, StateVector(m.space, m.initial_state()), EvolutionConfig(t_max=5))
    assert sol.survival[0] == pytest.approx(1.0)
    assert np.all(np.diff(sol.survival) <= 1e-15)


def test_unstable_step_aborts():
    m = build_model(SystemParams(g_mag=0.25))
    with pytest.raises(NumericalInstabilityError):
        evolve_nojump(m.H_nh, StateVector(m.space, m.initial_state()),
                      EvolutionConfig(dt=3.5, t_max=35.0))


def test_rejects_unnormalized_or_mismatched_start():
    m = build_model(SystemParams())
    with pytest.raises(ValueError):
        evolve_nojump(m.H_nh, StateVector(m.space, 2 * m.initial_state()), EvolutionConfig())
    other = enumerate_basis(1)
    with pytest.raises(ValueError):
        evolve_nojump(m.H_nh, StateVector.basis(other, "e00,g00"), EvolutionConfig())


def test_rk4_fourth_order():
    p = SystemParams(g_mag=1.0, phi=0.3)
    m = build_model(p)
    psi0 = StateVector(m.space, m.initial_state())
    T = 2.0
    exact = expm(-1j * m.H_nh.dense() * T) @ psi0.amps
    errs = []
    for dt in (0.04, 0.02):
        sol = evolve_nojump(m.H_nh, psi0, EvolutionConfig(dt=dt, t_max=T, output_stride=1000))
        errs.append(np.linalg.norm(sol.amps[-1] - exact))
    assert errs[0] / errs[1] == pytest.approx(16, rel=0.2)


@pytest.mark.parametrize("g,phi", [(0.25, 0.0), (1.0, np.pi / 4)])
def test_norm_bookkeeping(g, phi):
    m = build_model(SystemParams(g_mag=g, phi=phi))
    sol = evolve_nojump(m.H_nh, StateVector(m.space, m.initial_state()),
                        EvolutionConfig(dt=1e-3, t_max=20.0, output_stride=1))
    rates = [sum(jump_rates(s, m.J_a, m.J_b)) for s in sol.states]
    assert sol.survival[-1] + simpson(rates, x=sol.times) == pytest.approx(1.0, abs=1e-6)


def test_jump_rates_examples():
    p = SystemParams(kappa=1.5)
    m = build_model(p)
    assert jump_rates(basis(m, "g10,g00"), m.J_a, m.J_b) == pytest.approx((1.5, 0.0))
    assert jump_rates(basis(m, "g10,g10"), m.J_a, m.J_b)[0] == pytest.approx(3.0)
    assert jump_rates(basis(m, "g00,g00"), m.J_a, m.J_b) == (0.0, 0.0)


def test_apply_jump_examples():
    m = build_model(SystemParams())
    out = apply_jump(basis(m, "g20,g00"), m.J_a)
    assert out.norm2 == pytest.approx(1.0)
    assert abs(out.amplitude("g10,g00")) == pytest.approx(1.0)

    dark = (m.space.ket("g10,g00") - m.space.ket("g00,g10")) / np.sqrt(2)
    with pytest.raises(DarkStateError):
        apply_jump(StateVector(m.space, dark), m.J_a)

    rng = np.random.default_rng(4)
    amps = np.zeros(m.space.dim, dtype=complex)
    sec = m.space.sector(1)
    amps[sec] = rng.normal(size=6) + 1j * rng.normal(size=6)
    psi = StateVector(m.space, amps).normalized()
    once = apply_jump(psi, m.J_a)
    assert once.sector_weights()[0] == pytest.approx(1.0)
    # the vacuum is dark for every further click
    with pytest.raises(DarkStateError):
        apply_jump(once, m.J_b)


def test_jump_lowers_sector_by_one():
    m = build_model(SystemParams())
    out = apply_jump(basis(m, "g10,e00"), m.J_a)
    assert out.sector_weights()[1] == pytest.approx(1.0)


def test_master_equation_vacuum_is_stationary():
    p = SystemParams()
    m = build_model(p)
    rho0 = DensityMatrix.pure(basis(m, "g00,g00"))
    sol = evolve_master_equation(p, rho0, EvolutionConfig(dt=0.01, t_max=2.0))
    assert all(np.allclose(r.data, rho0.data) for r in sol.states)


def test_master_equation_trace_and_positivity():
    p = SystemParams(g_mag=0.5, phi=0.2)
    m = build_model(p)
    rho0 = DensityMatrix.pure(StateVector(m.space, m.initial_state()))
    sol = evolve_master_equation(p, rho0, EvolutionConfig(dt=0.005, t_max=5.0))
    for r in sol.states:
        assert abs(r.trace - 1) < 1e-8
        assert r.hermiticity_error() < 1e-10
        assert r.min_eigenvalue() > -1e-9


def test_master_equation_no_click_branch_matches_nojump():
    # the conditional part of rho that never clicked is |psi~><psi~|; check via the
    # sector-2 block, which only the no-jump evolution can populate
    p = SystemParams(g_mag=0.6, phi=0.4)
    m = build_model(p)
    psi0 = StateVector(m.space, m.initial_state())
    cfg = EvolutionConfig(dt=0.002, t_max=3.0, output_stride=100)
    me = evolve_master_equation(p, DensityMatrix.pure(psi0), cfg)
    nj = evolve_nojump(m.H_nh, psi0, cfg)
    sec = m.space.sector(2)
    for r, a in zip(me.states, nj.amps):
        assert np.allclose(r.data[sec, sec], np.outer(a[sec], a[sec].conj()), atol=1e-9)


def test_early_model_initial_and_factorization():
    p = SystemParams()
    sol = early_time_model(p, EvolutionConfig(dt=1e-3, t_max=1.0))
    assert sol.d[0, 0] == 1 and np.all(sol.d[0, 1:] == 0)
    assert np.allclose(sol.left_purity(), 1.0, atol=1e-12)


def test_early_model_taylor_and_modal():
    sol = early_time_model(SystemParams(phi=0.3), EvolutionConfig(dt=1e-3, t_max=1.0))
    c1 = sol.taylor(1)
    assert np.allclose(c1[5:8], 0, atol=1e-12)
    assert np.allclose(sol.modal(sol.times), sol.d, atol=1e-9)
    # the second-order coefficient predicts the small-t amplitude
    t = sol.times[2]
    assert np.allclose(sol.d[2, 5:8], sol.taylor(2)[5:8] * t ** 2, rtol=0.02)


def test_early_model_tracks_full_model_state():
    p = SystemParams()
    m = build_model(p)
    cfg = EvolutionConfig(dt=1e-3, t_max=0.3)
    early = early_time_model(p, cfg)
    full = evolve_nojump(m.H_nh, StateVector(m.space, m.initial_state()), cfg)
    d_full = full_model_early_components(full)
    rel = np.linalg.norm(early.d - d_full, axis=1) / np.linalg.norm(d_full, axis=1)
    assert rel.max() < 1e-3


def test_nojump_csv(tmp_path):
    m = build_model(SystemParams())
    sol = evolve_nojump(m.H_nh, StateVector(m.space, m.initial_state()),
                        EvolutionConfig(t_max=0.1))
    sol.to_csv(tmp_path / "s.csv", comment="x")
    header, rows = read_csv(tmp_path / "s.csv")
    assert header[0] == "t" and header[-1] == "survival"
    assert len(header) == 2 + 2 * m.space.dim and len(rows) == len(sol.times)


def test_config_validation():
    for kw in (dict(dt=0), dict(t_max=-1), dict(method="euler"), dict(output_stride=0)):
        with pytest.raises(ValueError):
            EvolutionConfig(**kw)
