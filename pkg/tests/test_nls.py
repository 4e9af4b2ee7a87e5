import numpy as np
import pytest

from roughquad.errors import NoContraction, StepRejected
from roughquad.classical_flow import solve_flow
from roughquad.hamiltonians import NoiseHamiltonian, QuadraticHamiltonian
from roughquad.kernel import hk_kernel
from roughquad.nls import (NlsConfig, h1_track, looks_continuous, mass_residual,
                           nonlinear_phase, solve_nls)
from roughquad.paths import TimeGrid, make_brownian, mollify, zero_path
from roughquad.propagator import GaussianState, apply_kernel

GRID = TimeGrid(0.5, 0.5, 201)
BETA = make_brownian(4, GRID, scale=0.5)
FREE = QuadraticHamiltonian.free(1)
KQ = NoiseHamiltonian.position(1)


def state(Lbox=8.0, m=1024, X=(0.0, 0.0)):
    return GaussianState.coherent(list(X)).on_grid(Lbox, m)


def test_config_validation_and_subcritical():
    with pytest.raises(ValueError):
        NlsConfig(lam=1.0, sigma=0.0)
    with pytest.raises(ValueError):
        NlsConfig(lam=1.0, method="rk4")
    cfg = NlsConfig(lam=1.0, sigma=1.0)
    assert cfg.subcritical(1) and not cfg.subcritical(2)
    assert cfg.subcritical(3, h1=True) and not NlsConfig(1.0, sigma=2.5).subcritical(3, h1=True)


def test_pure_phase_ode():
    g = TimeGrid(0.5, 0.5, 11)
    psi = state(6.0, 256, (0.3, 0.2))
    cfg = NlsConfig(lam=0.7, sigma=1.5, dt=0.1)
    traj = solve_nls(QuadraticHamiltonian(1), NoiseHamiltonian.zero(1), zero_path(g), cfg, psi,
                     0.0, 0.6)
    exact = psi.values * np.exp(-1j * 0.7 * np.abs(psi.values) ** 3 * 0.6)
    assert np.max(np.abs(traj.states[-1].values - exact)) <= 1e-8
    assert traj.times[-1] == pytest.approx(0.6)


def test_nonlinear_phase_real_sigma():
    psi = state(6.0, 128)
    out = nonlinear_phase(psi, 2.0, 0.5, 0.1)
    np.testing.assert_allclose(np.abs(out.values), np.abs(psi.values))
    zero = psi.like(np.zeros(128))
    assert np.all(nonlinear_phase(zero, 1.0, 0.3, 1.0).values == 0)


def test_linear_limit_matches_single_kernel():
    psi = state(X=(0.5, 0.0))
    cfg = NlsConfig(lam=0.0, dt=0.1)
    traj = solve_nls(QuadraticHamiltonian.harmonic(1), KQ, BETA, cfg, psi, 0.3, 0.4)
    direct = apply_kernel(hk_kernel(solve_flow(QuadraticHamiltonian.harmonic(1), KQ, BETA, 0.7, 0.3)),
                          psi)
    assert traj.states[-1].distance(direct) <= 1e-6
    assert mass_residual(traj) <= 1e-6


@pytest.mark.parametrize("lam", [1.0, -1.0])
def test_splitstep_mass_conservation(lam):
    cfg = NlsConfig(lam=lam, dt=0.05)
    traj = solve_nls(QuadraticHamiltonian.harmonic(1), KQ, BETA, cfg, state(X=(0.3, 0.4)), 0.3, 0.5)
    assert mass_residual(traj) <= 1e-6


def test_splitstep_duhamel_agree():
    psi = state()
    split = solve_nls(FREE, KQ, BETA, NlsConfig(lam=1.0, dt=0.05), psi, 0.3, 0.05)
    duh = solve_nls(FREE, KQ, BETA, NlsConfig(lam=1.0, dt=0.005, method="duhamel"), psi, 0.3, 0.05)
    assert split.states[-1].distance(duh.states[-1]) <= 1e-4
    assert mass_residual(duh) <= 1e-5


def test_duhamel_needs_room_for_reference_time():
    g = TimeGrid(0.1, 0.1, 21)
    with pytest.raises(ValueError):
        solve_nls(FREE, KQ, make_brownian(1, g), NlsConfig(lam=1.0, method="duhamel"), state(),
                  0.0, 0.2)


def test_duhamel_no_contraction():
    cfg = NlsConfig(lam=200.0, dt=0.05, method="duhamel", max_iter=10)
    with pytest.raises(NoContraction):
        solve_nls(FREE, KQ, BETA, cfg, state(), 0.3, 0.2)


def test_step_rejected():
    cfg = NlsConfig(lam=1.0, dt=0.05, mass_tol=1e-18)
    with pytest.raises(StepRejected):
        solve_nls(QuadraticHamiltonian.harmonic(1), KQ, BETA, cfg, state(), 0.3, 0.2)


def test_h1_track_free_gaussian_moments():
    g = TimeGrid(0.5, 0.5, 11)
    cfg = NlsConfig(lam=0.0, dt=0.1)
    traj = solve_nls(FREE, NoiseHamiltonian.zero(1), zero_path(g), cfg, state(12.0, 1024),
                     0.0, 0.5)
    t = np.array(traj.times)
    np.testing.assert_allclose(h1_track(traj, [1.0], [0.0]), np.sqrt((1 + t ** 2) / 2), atol=1e-4)
    np.testing.assert_allclose(h1_track(traj, [1.0], [1.0]), np.sqrt(t ** 2 / 2), atol=1e-4)
    assert np.all(h1_track(traj, [0.0], [0.0]) == 0)


def test_gross_pitaevskii_h1_bounded_and_continuous():
    cfg = NlsConfig(lam=1.0, sigma=1.0, dt=0.05)
    traj = solve_nls(QuadraticHamiltonian.harmonic(1), KQ, BETA, cfg, state(X=(0.5, 0.0)), 0.3, 0.6)
    seq = h1_track(traj, [1.0], [1.0])
    assert np.all(np.isfinite(seq)) and seq.max() < 10 * seq[0] + 1
    assert looks_continuous(seq)
    assert not looks_continuous([0, 1, 2, 3, 100, 101])


def test_nonlinear_flow_continuous_in_driver():
    g = TimeGrid(0.5, 0.5, 1025)
    b = make_brownian(8, g, scale=0.5)
    H = QuadraticHamiltonian.harmonic(1)
    cfg = NlsConfig(lam=1.0, dt=0.05)
    psi = state(X=(0.3, 0.0))
    ends, gaps = [], []
    prev = None
    for k in range(4, 9):
        bk = mollify(b, 2.0 ** -k)
        ends.append(solve_nls(H, KQ, bk, cfg, psi, 0.3, 0.4).states[-1])
        if prev is not None:
            gaps.append(np.max(np.abs(bk.values - prev.values)))
        prev = bk
    dists = [a.distance(c) for a, c in zip(ends, ends[1:])]
    ratios = np.array(dists) / np.array(gaps)
    assert ratios.max() < 10 * np.median(ratios)


def test_trajectory_csv(tmp_path):
    g = TimeGrid(0.5, 0.5, 11)
    traj = solve_nls(QuadraticHamiltonian(1), NoiseHamiltonian.zero(1), zero_path(g),
                     NlsConfig(lam=1.0, dt=0.25), state(6.0, 128), 0.0, 0.5)
    f = tmp_path / "t.csv"
    traj.to_csv(f, header_comment="h")
    lines = f.read_text().splitlines()
    assert lines[:2] == ["# h", "t,mass,h1norm"] and len(lines) == 5
