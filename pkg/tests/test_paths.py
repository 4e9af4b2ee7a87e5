import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughquad.errors import CovarianceNotPD
from roughquad.paths import (DriverPath, TimeGrid, brownian_bridge_refine, fbm_covariance,
                             holder_norm, make_brownian, make_fbm, mollify, read_path_csv,
                             write_path_csv, zero_path)


def test_grid_basic():
    g = TimeGrid(1.0, 2.0, 5)
    assert g.h == 1.0
    assert g.start == -1.0 and g.end == 3.0
    np.testing.assert_array_equal(g.nodes, [-1, 0, 1, 2, 3])
    with pytest.raises(ValueError):
        TimeGrid(0, 0, 5)
    with pytest.raises(ValueError):
        TimeGrid(0, 1, 1)


def test_path_values_read_only(grid01):
    b = make_brownian(0, grid01)
    with pytest.raises(ValueError):
        b.values[0] = 1.0
    with pytest.raises(ValueError):
        DriverPath(grid01, np.full(grid01.n, np.nan))


def test_brownian_single_step():
    g = TimeGrid(0.5, 0.5, 2)
    b = make_brownian(1, g)
    assert b.values[0] == 0.0
    assert b.values[1] != 0.0
    assert b.mu == 0.45


def test_brownian_zero_scale(grid01):
    assert np.all(make_brownian(3, grid01, scale=0.0).values == 0)


def test_brownian_reproducible(grid01):
    a = make_brownian(5, grid01)
    b = make_brownian(5, grid01)
    assert a.values.tobytes() == b.values.tobytes()
    assert make_brownian(6, grid01).values.tobytes() != a.values.tobytes()


def test_brownian_increment_variance():
    g = TimeGrid(0.5, 0.5, 20001)
    inc = np.diff(make_brownian(2, g, scale=3.0).values)
    assert abs(np.var(inc) / (9 * g.h) - 1) < 0.05


def test_holder_stable_under_bridge_refinement():
    g = TimeGrid(0.5, 0.5, 1025)
    b = make_brownian(42, g)
    fine = brownian_bridge_refine(b, 4242)
    np.testing.assert_array_equal(fine.values[::2], b.values)
    h1, h2 = holder_norm(b, 0.45), holder_norm(fine, 0.45)
    assert np.isfinite(h1) and np.isfinite(h2)
    assert abs(h2 / h1 - 1) < 0.25


def test_holder_above_half_grows_under_refinement():
    # Brownian paths are not 0.6-Hölder: the discrete norm keeps growing with n.
    g = TimeGrid(0.5, 0.5, 257)
    b = make_brownian(42, g)
    for k in range(4):
        b = brownian_bridge_refine(b, 100 + k)
    assert b.grid.n == 4097
    coarse = DriverPath(g, b.values[::16])
    assert holder_norm(b, 0.6) > 1.3 * holder_norm(coarse, 0.6)


def test_holder_constant_and_identity():
    g = TimeGrid(0.5, 0.5, 101)
    c = DriverPath(g, np.full(g.n, -2.5))
    assert holder_norm(c, 0.5) == 2.5
    ident = DriverPath(g, g.nodes)
    assert holder_norm(ident, 1.0) == pytest.approx(2.0, abs=1e-12)
    assert holder_norm(ident, 0.0) == 2.0


def test_fbm_half_is_brownian_covariance():
    t = np.linspace(0.01, 1, 50)
    np.testing.assert_allclose(fbm_covariance(0.5, t), np.minimum.outer(t, t), atol=1e-12)


def test_fbm_single_value_variance():
    g = TimeGrid(0.5, 0.5, 2)
    vals = np.array([make_fbm(0.3, s, g).values[1] for s in range(4000)])
    assert np.all([make_fbm(0.3, 0, g).values[0] == 0])
    assert abs(np.var(vals) - 1.0) < 0.08


def test_fbm_monte_carlo_covariance():
    g = TimeGrid(0.5, 0.5, 9)
    samples = np.array([make_fbm(0.75, 7 + s, g).values for s in range(10000)])
    emp = samples.T @ samples / len(samples)
    exact = fbm_covariance(0.75, g.nodes)
    for i, j in [(1, 1), (2, 5), (4, 4), (3, 8), (8, 8)]:
        assert abs(emp[i, j] / exact[i, j] - 1) < 0.05
    assert make_fbm(0.75, 1, g).mu == pytest.approx(0.70)


def test_fbm_rejects_bad_input(monkeypatch):
    g = TimeGrid(0.5, 0.5, 5)
    with pytest.raises(ValueError):
        make_fbm(1.0, 0, g)
    import roughquad.paths as paths
    monkeypatch.setattr(paths, "fbm_covariance", lambda h, t: -np.eye(len(t)))
    with pytest.raises(CovarianceNotPD):
        make_fbm(0.5, 0, g)


def test_mollify_fixes_affine_and_constants():
    g = TimeGrid(0.5, 0.5, 101)
    lin = DriverPath(g, g.nodes)
    out = mollify(lin, 0.5 * g.h)
    assert out.smooth
    np.testing.assert_allclose(out.values, lin.values, atol=1e-12)
    np.testing.assert_allclose(mollify(lin, 0.2).values, lin.values, atol=1e-12)
    const = DriverPath(g, np.full(g.n, 0.7))
    np.testing.assert_allclose(mollify(const, 0.1).values, 0.7, atol=1e-14)


def _mollify_quadrature(path, eps, t):
    # Independent oracle: direct quadrature of the convolution with the bump.
    from scipy.integrate import quad
    from scipy.interpolate import BSpline
    bump = BSpline.basis_element([-eps, -eps / 3, eps / 3, eps], extrapolate=False)
    a, b = path.grid.start, path.grid.end

    def ext(u):
        if u < a:
            return 2 * path(a) - path(2 * a - u)
        if u > b:
            return 2 * path(b) - path(2 * b - u)
        return path(u)

    # integrate piecewise between every kink of the integrand
    ref = [2 * a - p for p in path.grid.nodes] + [2 * b - p for p in path.grid.nodes]
    cuts = [t - p for p in list(path.grid.nodes) + ref if abs(p - t) < eps]
    cuts = np.unique(np.concatenate([[-eps, -eps / 3, eps / 3, eps], cuts]))
    return sum(quad(lambda u: bump(u) * ext(t - u) * 1.5 / eps, lo, hi, epsabs=1e-15)[0]
               for lo, hi in zip(cuts[:-1], cuts[1:]))


def test_mollify_matches_quadrature():
    g = TimeGrid(0.5, 0.5, 65)
    b = make_brownian(9, g)
    eps = 0.07
    out = mollify(b, eps)
    for k in [0, 3, 17, 32, 60, 64]:
        assert out.values[k] == pytest.approx(_mollify_quadrature(b, eps, g.nodes[k]), abs=1e-10)


def test_mollify_sup_distance_bound():
    g = TimeGrid(0.5, 0.5, 4097)
    b = make_brownian(21, g)
    hn = holder_norm(b, 0.45)
    prev = np.inf
    for k in range(4, 11):
        eps = 2.0 ** -k
        dist = np.max(np.abs(mollify(b, eps).values - b.values))
        assert dist <= hn * eps ** 0.45
        assert dist < prev
        prev = dist


def test_csv_roundtrip(tmp_path, grid01):
    b = make_brownian(1, grid01)
    f = tmp_path / "p.csv"
    write_path_csv(b, f, header_comment="seed=1")
    text = f.read_text().splitlines()
    assert text[0] == "# seed=1" and text[1] == "t,beta"
    back = read_path_csv(f)
    assert back.values.tobytes() == b.values.tobytes()
    assert back.grid.n == grid01.n


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2 ** 31), mu1=st.floats(0.0, 1.0), mu2=st.floats(0.0, 1.0))
def test_holder_monotone_in_mu(seed, mu1, mu2):
    g = TimeGrid(0.5, 0.5, 65)
    b = make_brownian(seed, g)
    lo, hi = sorted([mu1, mu2])
    assert holder_norm(b, lo) <= holder_norm(b, hi) + 1e-12


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2 ** 31))
def test_mollify_distance_monotone(seed):
    g = TimeGrid(0.5, 0.5, 257)
    b = make_brownian(seed, g)
    d = [np.max(np.abs(mollify(b, 2.0 ** -k).values - b.values)) for k in range(3, 8)]
    assert all(x >= y for x, y in zip(d, d[1:]))


def test_zero_path_smooth(grid01):
    z = zero_path(grid01)
    assert z.smooth and z.sup_norm == 0.0
