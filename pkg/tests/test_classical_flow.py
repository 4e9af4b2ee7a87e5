import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm

from oracles import cellwise_flow, rk4_mollified_1d
from roughquad.errors import Caustic, NoContraction, SymplecticityLost
from roughquad.classical_flow import (AffineSymplecticMap, action, b_block_scaling,
                                      boundary_momentum, chapman_residual, history_distance,
                                      lipschitz_probe, phi_noise, solve_flow)
from roughquad.hamiltonians import NoiseHamiltonian, QuadraticHamiltonian
from roughquad.linalg import symplectic_J, symplectic_residual
from roughquad.paths import TimeGrid, make_brownian, mollify, zero_path

# RK4 integration of the mollified system (eps = 1e-5, step 1e-6) for the
# Brownian sample make_brownian(11, TimeGrid(0.5, 0.5, 257)), harmonic H,
# K = q^2/2, from s = 0.3 to t = 0.4; columns are the images of e1 and e2.
RK4_FLOW = np.array([[1.0078156916462893, 0.09879007395706232],
                     [0.09993686896872565, 1.0020411262170505]]).T
# Same sample, affine H and K, trajectory from y = -0.4 to x = 0.7: action value.
RK4_ACTION = 7.100889045163918
H_AFF = dict(G=1.3, E=0.8, L=0.2, a=0.3, b=-0.2, h0=0.15)
K_AFF = dict(G=0.7, V=[0.4, -0.25])


def test_phi_noise_examples():
    K = NoiseHamiltonian.position(1)
    np.testing.assert_array_equal(phi_noise(K, 0.0), np.eye(2))
    np.testing.assert_array_equal(phi_noise(K, 0.37), [[1.0, 0.0], [-0.37, 1.0]])


def test_phi_noise_rotation_eigen_oracle():
    K = NoiseHamiltonian.angular_momentum(3, axis=2, strength=1.0)
    delta = 0.83
    N = symplectic_J(3) @ K.S
    w, V = np.linalg.eig(delta * N)
    oracle = (V @ np.diag(np.exp(w)) @ np.linalg.inv(V)).real
    P = phi_noise(K, delta)
    np.testing.assert_allclose(P, oracle, atol=1e-12)
    np.testing.assert_allclose(P.T @ P, np.eye(6), atol=1e-12)
    assert symplectic_residual(P) < 1e-12


def test_identity_when_times_coincide(zero01, harmonic1, kq1):
    f = solve_flow(harmonic1, kq1, zero01, 0.4, 0.4)
    np.testing.assert_array_equal(f.F, np.eye(2))
    np.testing.assert_array_equal(f.v, np.zeros(2))


@pytest.mark.parametrize("delta", [0.1, 0.3, 1.0, 2.5])
def test_harmonic_rotation(delta):
    g = TimeGrid(0.0, 3.0, 61)
    f = solve_flow(QuadraticHamiltonian.harmonic(1), NoiseHamiltonian.position(1),
                   zero_path(g), delta, 0.0)
    c, s = np.cos(delta), np.sin(delta)
    np.testing.assert_allclose(f.F, [[c, s], [-s, c]], atol=1e-12)
    assert f.A[0, 0] == pytest.approx(c, abs=1e-12) and f.B[0, 0] == pytest.approx(s, abs=1e-12)


def test_backward_flow_inverts(brownian01, harmonic1, kq1):
    fwd = solve_flow(harmonic1, kq1, brownian01, 0.7, 0.2)
    bwd = solve_flow(harmonic1, kq1, brownian01, 0.2, 0.7)
    comp = bwd.compose(fwd)
    np.testing.assert_allclose(comp.F, np.eye(2), atol=1e-11)


def test_rk4_mollified_oracle_frozen(brownian01, harmonic1, kq1):
    f = solve_flow(harmonic1, kq1, brownian01, 0.4, 0.3)
    np.testing.assert_allclose(f.F, RK4_FLOW, atol=1e-6)


def test_rk4_mollified_oracle_live(brownian01, harmonic1, kq1):
    cols = [rk4_mollified_1d((1, 0, 1, 0, 0, 0), (1, 0, 0, 0, 0), brownian01, 1e-5, 0.4, 0.3, z)[:2]
            for z in ([1.0, 0.0], [0.0, 1.0])]
    np.testing.assert_allclose(np.array(cols).T, RK4_FLOW, atol=1e-12)


def test_cellwise_exponential_oracle_affine(brownian01):
    H = QuadraticHamiltonian(1, **H_AFF)
    K = NoiseHamiltonian(1, **K_AFF)
    nodes = brownian01.grid.nodes
    s, t = nodes[40], nodes[160]
    F, v = cellwise_flow(H, K, brownian01, t, s)
    f = solve_flow(H, K, brownian01, t, s)
    np.testing.assert_allclose(f.F, F, atol=1e-12)
    np.testing.assert_allclose(f.v, v, atol=1e-12)


def test_cellwise_oracle_d2_rotation():
    g = TimeGrid(0.5, 0.5, 65)
    b = make_brownian(5, g)
    H = QuadraticHamiltonian.harmonic(2, omega=1.3)
    K = NoiseHamiltonian(2, G=np.diag([0.5, 1.0]), L=np.array([[0, -0.4], [0.4, 0]]),
                         V=[0.1, 0.0, -0.2, 0.3])
    F, v = cellwise_flow(H, K, b, g.nodes[48], g.nodes[8])
    f = solve_flow(H, K, b, g.nodes[48], g.nodes[8])
    np.testing.assert_allclose(f.F, F, atol=1e-11)
    np.testing.assert_allclose(f.v, v, atol=1e-11)


def test_chapman_residuals(brownian01, zero01, harmonic1, kq1):
    assert chapman_residual(harmonic1, kq1, zero01, 0.5, 0.5, 0.5) == 0.0
    assert chapman_residual(harmonic1, kq1, zero01, 0.9, 0.4, 0.1) <= 1e-9
    assert chapman_residual(harmonic1, kq1, brownian01, 0.9, 0.4, 0.1) <= 10 * 1e-12


def test_lipschitz_probe(brownian01, harmonic1, kq1):
    assert lipschitz_probe(harmonic1, kq1, brownian01, brownian01, 0.6, 0.1, [1.0, 0.5]) == (0.0, 0.0)
    sm = mollify(brownian01, 0.05)
    gap, _ = lipschitz_probe(harmonic1, kq1, brownian01, sm, 0.6, 0.1, [0.0, 0.0])
    assert gap == 0.0
    ratios = []
    for k in range(4, 13):
        g1, g2 = lipschitz_probe(harmonic1, kq1, brownian01, mollify(brownian01, 2.0 ** -k),
                                 0.6, 0.1, [1.0, -0.5])
        ratios.append(g1 / g2)
    assert max(ratios) < 10 * np.median(ratios)


def test_boundary_momentum(free1, harmonic1, zero01, brownian01, kq1):
    kf = NoiseHamiltonian.zero(1)
    f = solve_flow(free1, kf, zero01, 0.8, 0.3)
    assert boundary_momentum(f, [1.0], [0.2])[0] == pytest.approx(0.8 / 0.5, abs=1e-12)
    f = solve_flow(harmonic1, kf, zero01, 0.8, 0.3)
    d = 0.5
    assert boundary_momentum(f, [1.0], [0.2])[0] == pytest.approx(
        (1.0 - 0.2 * np.cos(d)) / np.sin(d), abs=1e-12)
    H = QuadraticHamiltonian(1, **H_AFF)
    K = NoiseHamiltonian(1, **K_AFF)
    f = solve_flow(H, K, brownian01, 0.8, 0.3)
    p = boundary_momentum(f, [0.9], [-1.1])
    assert abs(f(np.concatenate([[-1.1], p]))[0] - 0.9) <= 1e-9


def test_boundary_momentum_caustic(zero01):
    g = TimeGrid(0.0, 4.0, 81)
    f = solve_flow(QuadraticHamiltonian.harmonic(1), NoiseHamiltonian.zero(1), zero_path(g),
                   np.pi, 0.0)
    with pytest.raises(Caustic):
        boundary_momentum(f, [0.0], [0.0])


def test_action_closed_forms(free1, harmonic1, zero01):
    K = NoiseHamiltonian.zero(1)
    x, y = 0.9, -0.3
    f = solve_flow(free1, K, zero01, 0.7, 0.2)
    assert action(free1, K, zero01, f, 0.7, 0.2, [x], [y]) == pytest.approx(
        (x - y) ** 2 / (2 * 0.5), abs=1e-12)
    f = solve_flow(harmonic1, K, zero01, 0.7, 0.2)
    d = 0.5
    assert action(harmonic1, K, zero01, f, 0.7, 0.2, [x], [y]) == pytest.approx(
        ((x * x + y * y) * np.cos(d) - 2 * x * y) / (2 * np.sin(d)), abs=1e-12)


def test_action_mollified_oracle(brownian01):
    H = QuadraticHamiltonian(1, **H_AFF)
    K = NoiseHamiltonian(1, **K_AFF)
    f = solve_flow(H, K, brownian01, 0.4, 0.3)
    assert action(H, K, brownian01, f, 0.4, 0.3, [0.7], [-0.4]) == pytest.approx(RK4_ACTION,
                                                                                 abs=1e-5)


def test_action_mollified_oracle_live(brownian01):
    H = QuadraticHamiltonian(1, **H_AFF)
    K = NoiseHamiltonian(1, **K_AFF)
    f = solve_flow(H, K, brownian01, 0.4, 0.3)
    p = boundary_momentum(f, [0.7], [-0.4])[0]
    q, _, S = rk4_mollified_1d((1.3, 0.2, 0.8, 0.3, -0.2, 0.15), (0.7, 0, 0, 0.4, -0.25),
                               brownian01, 1e-5, 0.4, 0.3, [-0.4, p])
    assert q == pytest.approx(0.7, abs=1e-8)
    assert S == pytest.approx(RK4_ACTION, abs=1e-9)


def test_no_contraction_on_long_rough_horizon(grid01, harmonic1, kq1):
    b = make_brownian(11, grid01, scale=400.0)
    with pytest.raises((NoContraction, SymplecticityLost)):
        solve_flow(harmonic1, kq1, b, 1.0, 0.0)


def test_ill_conditioned_driver_is_refused(grid01, harmonic1, kq1):
    b = make_brownian(11, grid01, scale=100.0)
    with pytest.raises(SymplecticityLost):
        solve_flow(harmonic1, kq1, b, 1.0, 0.0)


def test_times_outside_grid(grid01, harmonic1, kq1, brownian01):
    with pytest.raises(ValueError):
        solve_flow(harmonic1, kq1, brownian01, 1.5, 0.0)


def test_history_and_at_node(brownian01, harmonic1, kq1):
    f = solve_flow(harmonic1, kq1, brownian01, 0.6, 0.1)
    h = f.history
    assert h.times[0] == 0.1 and h.times[-1] == 0.6
    k = len(h.times) // 2
    sub = f.at_node(k)
    direct = solve_flow(harmonic1, kq1, brownian01, h.times[k], 0.1)
    np.testing.assert_allclose(sub.F, direct.F, atol=1e-12)
    assert history_distance(f, f) == 0.0


def test_to_json_fields(brownian01, harmonic1, kq1):
    doc = solve_flow(harmonic1, kq1, brownian01, 0.6, 0.1).to_json()
    assert set(doc) == {"t", "s", "F", "v", "residuals"}
    assert len(doc["F"]) == 4


def test_short_time_expansion(grid01):
    # F = I + (beta_t - beta_s) J S_K + (t - s) J S_H + r with r second order
    g = TimeGrid(0.5, 0.5, 4097)
    b = make_brownian(3, g)
    H = QuadraticHamiltonian.harmonic(1)
    K = NoiseHamiltonian.position(1)
    J = symplectic_J(1)
    s = 0.25
    rem, scale = [], []
    for k in range(2, 8):
        h = 2.0 ** -k
        f = solve_flow(H, K, b, s + h, s)
        inc = b(s + h) - b(s)
        mask = (g.nodes >= s) & (g.nodes <= s + h)
        osc = np.max(np.abs(b.values[mask] - b(s)))
        lin = np.eye(2) + inc * J @ K.S + h * J @ H.S(s)
        rem.append(np.max(np.abs(f.F - lin)))
        scale.append(h ** 2 + osc ** 2 + h * osc)
    ratios = np.array(rem) / np.array(scale)
    assert ratios.max() < 2.0


def test_b_block_scaling_smooth_noise(grid01):
    g = TimeGrid(0.5, 0.5, 8193)
    b = make_brownian(1, g)
    H = QuadraticHamiltonian.harmonic(1)
    _, rem, slope = b_block_scaling(H, NoiseHamiltonian.position(1), b,
                                    np.linspace(0.1, 0.6, 6), 0.1, levels=5)
    assert slope >= 1.8


def test_exponential_bound():
    K = NoiseHamiltonian(2, G=np.diag([0.3, -0.6]), L=np.array([[0.0, 0.5], [-0.2, 0.0]]))
    gam = np.linalg.norm(symplectic_J(2) @ K.S, 2)
    for delta in np.linspace(-3, 3, 13):
        assert np.linalg.norm(phi_noise(K, delta), 2) <= np.exp(gam * abs(delta)) * (1 + 1e-12)


def test_compose_matches_affine_action():
    rng = np.random.default_rng(0)
    A = AffineSymplecticMap(expm(symplectic_J(1) @ np.diag([1.0, 2.0])), rng.normal(size=2), 1, 0)
    B = AffineSymplecticMap(expm(symplectic_J(1) @ np.eye(2)), rng.normal(size=2), 2, 1)
    z = rng.normal(size=2)
    np.testing.assert_allclose(B.compose(A)(z), B(A(z)), atol=1e-14)


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10 ** 6), d=st.integers(1, 3), span=st.floats(0.05, 0.5))
def test_random_flows_symplectic(seed, d, span):
    g = TimeGrid(0.5, 0.5, 129)
    b = make_brownian(seed, g)
    rng = np.random.default_rng(seed)
    G = rng.normal(size=(d, d))
    K = NoiseHamiltonian(d, G=G + G.T, V=rng.normal(size=2 * d))
    H = QuadraticHamiltonian.harmonic(d)
    f = solve_flow(H, K, b, 0.1 + span, 0.1, project=False)
    assert symplectic_residual(f.F) <= 1e-9
