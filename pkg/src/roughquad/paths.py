"""Sampled driver paths: Brownian and fractional Brownian samples, mollification
and discrete Hölder norms.

Randomness comes from numpy's counter-based ``Philox`` bit generator seeded
with the integer seed, so every path is reproducible bit for bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.interpolate import BSpline

from .errors import CovarianceNotPD


def rng_from_seed(seed: int) -> np.random.Generator:
    """Generator used for every random draw in the library."""
    return np.random.Generator(np.random.Philox(int(seed)))


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid on ``[t0 - T, t0 + T]`` with ``n`` nodes."""

    t0: float
    T: float
    n: int

    def __post_init__(self):
        if not self.T > 0:
            raise ValueError("T must be positive")
        if int(self.n) != self.n or self.n < 2:
            raise ValueError("n must be an integer >= 2")

    @property
    def h(self) -> float:
        return 2.0 * self.T / (self.n - 1)

    @property
    def start(self) -> float:
        return self.t0 - self.T

    @property
    def end(self) -> float:
        return self.t0 + self.T

    @property
    def nodes(self) -> np.ndarray:
        return np.linspace(self.start, self.end, self.n)

    def contains(self, t: float, slack: float = 1e-12) -> bool:
        return self.start - slack <= t <= self.end + slack


@dataclass(frozen=True)
class DriverPath:
    """Node values of a driver path, evaluated by linear interpolation."""

    grid: TimeGrid
    values: np.ndarray
    mu: float = 0.45
    smooth: bool = False
    _frozen: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.shape != (self.grid.n,):
            raise ValueError(f"expected {self.grid.n} values, got shape {vals.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("path values must be finite")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __call__(self, t):
        return np.interp(t, self.grid.nodes, self.values)

    @property
    def sup_norm(self) -> float:
        return float(np.max(np.abs(self.values)))

    def scaled(self, factor: float) -> "DriverPath":
        return replace(self, values=factor * self.values)


def zero_path(grid: TimeGrid) -> DriverPath:
    return DriverPath(grid, np.zeros(grid.n), mu=1.0, smooth=True)


def make_brownian(seed: int, grid: TimeGrid, scale: float = 1.0) -> DriverPath:
    """Brownian sample started at zero on the left end of the grid."""
    if scale < 0:
        raise ValueError("scale must be non-negative")
    z = rng_from_seed(seed).standard_normal(grid.n - 1)
    incr = scale * np.sqrt(grid.h) * z
    return DriverPath(grid, np.concatenate([[0.0], np.cumsum(incr)]), mu=0.45)


def brownian_bridge_refine(path: DriverPath, seed: int, scale: float = 1.0) -> DriverPath:
    """Insert bridge midpoints, giving the same Brownian sample on ``2n - 1`` nodes."""
    g = path.grid
    fine = TimeGrid(g.t0, g.T, 2 * g.n - 1)
    z = rng_from_seed(seed).standard_normal(g.n - 1)
    mids = 0.5 * (path.values[1:] + path.values[:-1]) + 0.5 * scale * np.sqrt(g.h) * z
    vals = np.empty(fine.n)
    vals[::2] = path.values
    vals[1::2] = mids
    return DriverPath(fine, vals, mu=path.mu)


def fbm_covariance(hurst: float, times) -> np.ndarray:
    """Covariance ``(|t|^2H + |s|^2H - |t - s|^2H) / 2`` on the given times."""
    t = np.asarray(times, dtype=float)
    e = 2.0 * hurst
    return 0.5 * (np.abs(t)[:, None] ** e + np.abs(t)[None, :] ** e
                  - np.abs(t[:, None] - t[None, :]) ** e)


def make_fbm(hurst: float, seed: int, grid: TimeGrid) -> DriverPath:
    """Fractional Brownian sample via Cholesky factorization of its covariance."""
    if not 0.0 < hurst < 1.0:
        raise ValueError("hurst must lie in (0, 1)")
    rel = grid.nodes[1:] - grid.start
    cov = fbm_covariance(hurst, rel)
    try:
        chol = np.linalg.cholesky(cov)
    except np.linalg.LinAlgError as exc:
        raise CovarianceNotPD(f"fBm covariance not positive definite (n={grid.n}, H={hurst})") from exc
    z = rng_from_seed(seed).standard_normal(grid.n - 1)
    return DriverPath(grid, np.concatenate([[0.0], chol @ z]), mu=max(hurst - 0.05, 0.0))


def _bump_ramp_excess(eps: float, x: np.ndarray) -> np.ndarray:
    # int rho(u) (x - u)_+ du - x_+ for the quadratic B-spline bump on [-eps, eps]
    knots = np.array([-eps, -eps / 3.0, eps / 3.0, eps])
    ramp = BSpline.basis_element(knots, extrapolate=False).antiderivative(2)
    x = np.asarray(x, dtype=float)
    out = np.zeros_like(x)
    inside = np.abs(x) < eps
    out[inside] = 1.5 / eps * ramp(x[inside]) - np.maximum(x[inside], 0.0)
    return out


def mollify(path: DriverPath, eps: float) -> DriverPath:
    """Convolve the piecewise-linear path with a C^1 quadratic bump of half-width eps.

    Outside the grid the path is continued by odd reflection about each end
    point, which keeps affine paths fixed and the end values unchanged.  The
    convolution of a piecewise-linear function with the bump is evaluated
    exactly: each slope change contributes a smoothed ramp.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    g = path.grid
    n = g.n
    beta = path.values
    slopes = np.diff(beta) / g.h
    kinks = np.zeros(n)
    kinks[1:-1] = np.diff(slopes)
    K = min(int(np.ceil(eps / g.h)), n - 2)
    # reflected kinks: odd reflection mirrors slopes, so kinks flip sign
    left = -kinks[1:K + 1][::-1]
    right = -kinks[n - 1 - K:n - 1][::-1]
    ext = np.concatenate([left, kinks, right])
    offsets = np.arange(-K, K + 1) * g.h
    w = _bump_ramp_excess(eps, offsets)
    smooth_part = np.convolve(ext, w[::-1], mode="valid") if K > 0 else np.zeros(n)
    if K == 0:
        smooth_part = kinks * _bump_ramp_excess(eps, np.zeros(1))[0]
    return DriverPath(g, beta + smooth_part, mu=path.mu, smooth=True)


def holder_norm(path: DriverPath, mu: float) -> float:
    """Discrete Hölder norm: largest node-pair difference quotient plus sup-norm.

    By convention ``mu == 0`` returns twice the sup-norm.
    """
    if not 0.0 <= mu <= 1.0:
        raise ValueError("mu must lie in [0, 1]")
    sup = path.sup_norm
    if mu == 0:
        return 2.0 * sup
    t = path.grid.nodes
    b = path.values
    best = 0.0
    chunk = max(1, 2 ** 22 // len(t))
    for i0 in range(0, len(t), chunk):
        dt = np.abs(t[i0:i0 + chunk, None] - t[None, :])
        db = np.abs(b[i0:i0 + chunk, None] - b[None, :])
        np.place(dt, dt == 0, np.inf)
        best = max(best, float(np.max(db / dt ** mu)))
    return best + sup


def write_path_csv(path: DriverPath, fname, header_comment: str | None = None) -> None:
    with open(fname, "w", newline="") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", "beta"])
        for t, b in zip(path.grid.nodes, path.values):
            w.writerow([f"{t:.17g}", f"{b:.17g}"])


def read_path_csv(fname, mu: float = 0.45) -> DriverPath:
    with open(fname, newline="") as fh:
        rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
    if rows[0] != ["t", "beta"]:
        raise ValueError("path CSV must start with header t,beta")
    data = np.array(rows[1:], dtype=float)
    t, b = data[:, 0], data[:, 1]
    grid = TimeGrid(0.5 * (t[0] + t[-1]), 0.5 * (t[-1] - t[0]), len(t))
    if np.max(np.abs(grid.nodes - t)) > 1e-9 * max(1.0, grid.T):
        raise ValueError("path CSV times must be uniformly spaced")
    return DriverPath(grid, b, mu=mu)
