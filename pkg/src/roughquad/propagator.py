"""Grid wave functions, closed-form Gaussian states and kernel application.

Coherent states use the normalization ``pi^{-d/4}`` throughout, both on
grids and in the closed forms, so cross-checks compare like with like.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .errors import NotCauchy, UnderResolved
from .classical_flow import AffineSymplecticMap, solve_flow
from .kernel import KernelClosedForm, SiegelMatrix, hk_kernel, map_path
from .linalg import continuous_sqrt, symplectic_J
from .paths import mollify

GAUSS_NORM = np.pi ** -0.25  # per dimension


@dataclass
class WaveFunction:
    """Samples on the uniform grid ``linspace(-Lbox, Lbox, m)`` per axis."""

    dim: int
    Lbox: float
    m: int
    values: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.dim not in (1, 2):
            raise ValueError("grids support d = 1 or 2")
        vals = np.asarray(self.values, dtype=complex)
        if vals.shape != (self.m,) * self.dim:
            raise ValueError(f"values shape {vals.shape} does not match grid")
        if not np.all(np.isfinite(vals)):
            raise ValueError("wave function has non-finite values")
        self.values = vals

    @property
    def hx(self) -> float:
        return 2.0 * self.Lbox / (self.m - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.Lbox, self.Lbox, self.m)

    def points(self) -> np.ndarray:
        """Grid points, shape ``(m,)`` for d = 1 or ``(m, m, 2)`` for d = 2."""
        x = self.axis
        if self.dim == 1:
            return x
        return np.stack(np.meshgrid(x, x, indexing="ij"), axis=-1)

    def weights_1d(self) -> np.ndarray:
        w = np.full(self.m, self.hx)
        w[0] = w[-1] = 0.5 * self.hx
        return w

    def weights(self) -> np.ndarray:
        w = self.weights_1d()
        return w if self.dim == 1 else np.outer(w, w)

    def inner(self, other: "WaveFunction") -> complex:
        """``<self, other>``, antilinear in ``self``."""
        return complex(np.sum(np.conj(self.values) * other.values * self.weights()))

    def l2_norm(self) -> float:
        return float(np.sqrt(np.sum(np.abs(self.values) ** 2 * self.weights())))

    def distance(self, other: "WaveFunction") -> float:
        return float(np.sqrt(np.sum(np.abs(self.values - other.values) ** 2 * self.weights())))

    def like(self, values, **meta) -> "WaveFunction":
        return WaveFunction(self.dim, self.Lbox, self.m, values, dict(meta))

    @classmethod
    def sample(cls, fn, dim: int, Lbox: float, m: int) -> "WaveFunction":
        """Evaluate ``fn`` on the grid points (see :meth:`points`)."""
        tmp = cls(dim, Lbox, m, np.zeros((m,) * dim))
        return cls(dim, Lbox, m, fn(tmp.points()))

    def to_csv(self, fname, header_comment: str | None = None) -> None:
        with open(fname, "w", newline="") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            w = csv.writer(fh, lineterminator="\n")
            pts = self.points().reshape(-1, self.dim) if self.dim == 2 else self.axis[:, None]
            w.writerow(["x", "y", "re", "im"][:self.dim] + ["re", "im"] if self.dim == 2
                       else ["x", "re", "im"])
            for p, v in zip(pts, self.values.ravel()):
                w.writerow([f"{c:.17g}" for c in p] + [f"{v.real:.17g}", f"{v.imag:.17g}"])


@dataclass
class GaussianState:
    """``psi(x) = exp(logAmp + i((x-q).Gamma(x-q)/2 + p.(x-q)))``."""

    center: np.ndarray
    Gamma: SiegelMatrix
    logAmp: complex

    def __post_init__(self):
        self.center = np.asarray(self.center, dtype=float)
        if not isinstance(self.Gamma, SiegelMatrix):
            self.Gamma = SiegelMatrix(self.Gamma)

    @property
    def dim(self) -> int:
        return self.center.shape[0] // 2

    @classmethod
    def coherent(cls, X) -> "GaussianState":
        """Coherent state ``e^{i(p.x - q.p/2)} pi^{-d/4} e^{-|x-q|^2/2}``."""
        X = np.asarray(X, dtype=float)
        d = X.shape[0] // 2
        q, p = X[:d], X[d:]
        return cls(X, SiegelMatrix.standard(d), complex(d * np.log(GAUSS_NORM) + 0.5j * q @ p))

    def norm(self) -> float:
        im = self.Gamma.M.imag
        return float(np.exp(self.logAmp.real) * np.pi ** (self.dim / 4)
                     * np.linalg.det(im) ** -0.25)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        d = self.dim
        if d == 1:
            x = x[..., None]
        q, p = self.center[:d], self.center[d:]
        u = x - q
        ph = 0.5 * np.einsum("...i,ij,...j->...", u, self.Gamma.M, u) + u @ p
        return np.exp(self.logAmp + 1j * ph)

    def on_grid(self, Lbox: float, m: int) -> WaveFunction:
        return WaveFunction.sample(self, self.dim, Lbox, m)


def _gaussian_image(F, v, phase, root, g: GaussianState) -> GaussianState:
    d = g.dim
    J = symplectic_J(d)
    A, B, C, D = F[:d, :d], F[:d, d:], F[d:, :d], F[d:, d:]
    Gam = g.Gamma.M
    z = g.center
    zF = F @ z
    z1 = zF + v
    G1 = (C + D @ Gam) @ np.linalg.inv(A + B @ Gam)
    G1 = 0.5 * (G1 + G1.T)
    q, p = z[:d], z[d:]
    q1, p1 = z1[:d], z1[d:]
    log1 = (g.logAmp - 0.5j * q @ p + 1j * phase - 0.5j * v @ J @ zF
            - np.log(root) + 0.5j * q1 @ p1)
    return GaussianState(z1, SiegelMatrix(G1), complex(log1))


def _branch_roots(maps, g: GaussianState) -> np.ndarray:
    d = g.dim
    Gam = g.Gamma.M
    dets = np.linalg.det(maps[:, :d, :d] + maps[:, :d, d:] @ Gam)
    return continuous_sqrt(dets, start_phase=0.0)


def propagate_gaussian(flow: AffineSymplecticMap, g: GaussianState) -> GaussianState:
    """Exact image of a Gaussian state under the quantized affine flow."""
    root = _branch_roots(map_path(flow), g)[-1]
    return _gaussian_image(flow.F, flow.v, flow.phase, root, g)


def gaussian_trajectory(flow: AffineSymplecticMap, g: GaussianState, nodes=None):
    """Images of ``g`` at the stored solver nodes ``nodes`` (all nodes by default).

    One pass over the history fixes the square-root branch for every node, so
    this is linear in the history length where repeated
    :func:`propagate_gaussian` calls on :meth:`AffineSymplecticMap.at_node` are quadratic.
    """
    h = flow.history
    if h is None:
        raise ValueError("map carries no solver history")
    roots = _branch_roots(h.F, g)
    nodes = range(len(h)) if nodes is None else nodes
    out = []
    for k in nodes:
        phase = float(-h.lin_action[k][-1] - h.h0_int[k])
        out.append(_gaussian_image(h.F[k], h.v[k], phase, roots[k], g))
    return out


# -- kernel application -------------------------------------------------------

def _ghost_shift(kf: KernelClosedForm, hx: float) -> float:
    """Smallest displacement of the aliased copies produced by trapezoid sampling in y."""
    d = kf.dim
    smax = np.linalg.norm(kf.Qxy, 2)
    if smax == 0:
        return np.inf
    return 2 * np.pi / (hx * smax * np.sqrt(d))


def _edge_max(vals: np.ndarray) -> float:
    if vals.ndim == 1:
        return float(max(abs(vals[0]), abs(vals[-1])))
    return float(max(np.max(np.abs(vals[0])), np.max(np.abs(vals[-1])),
                     np.max(np.abs(vals[:, 0])), np.max(np.abs(vals[:, -1]))))


def _apply_1d(kf, x, y, wy, f):
    out = np.empty(len(x), dtype=complex)
    chunk = max(1, 2 ** 21 // len(y))
    g = f * wy * np.exp(1j * (0.5 * kf.Qyy[0, 0] * y ** 2 + kf.ly[0] * y))
    for i in range(0, len(x), chunk):
        xs = x[i:i + chunk]
        out[i:i + chunk] = np.exp(1j * kf.Qxy[0, 0] * xs[:, None] * y[None, :]) @ g
    return out


def _apply_2d(kf, x, y, wy, f):
    Y1, Y2 = np.meshgrid(y, y, indexing="ij")
    Yp = np.stack([Y1, Y2], axis=-1)
    quad = 0.5 * np.einsum("...i,ij,...j->...", Yp, kf.Qyy, Yp) + Yp @ kf.ly
    g = f * np.outer(wy, wy) * np.exp(1j * quad)  # g[y1, y2]
    Q = kf.Qxy
    mx = len(x)
    out = np.empty((mx, mx), dtype=complex)
    chunk = max(1, 2 ** 21 // (mx * len(y)))
    for i in range(0, mx, chunk):
        x1 = x[i:i + chunk]
        # inner sum over y2: phase y2 (Q12 x1 + Q22 x2)
        k2 = Q[0, 1] * x1[:, None] + Q[1, 1] * x[None, :]
        P2 = np.exp(1j * k2[..., None] * y[None, None, :])  # (c, mx, m_y2)
        T = P2.reshape(-1, len(y)) @ g.T  # (c*mx, m_y1)
        k1 = Q[0, 0] * x1[:, None] + Q[1, 0] * x[None, :]
        P1 = np.exp(1j * k1[..., None] * y[None, None, :]).reshape(-1, len(y))
        out[i:i + chunk] = np.sum(P1 * T, axis=1).reshape(len(x1), mx)
    return out


def _apply(kf, psi: WaveFunction, stride: int = 1) -> np.ndarray:
    x = psi.axis
    if stride == 1:
        y, f, wy = x, psi.values, psi.weights_1d()
    else:
        y = x[::stride]
        f = psi.values[::stride] if psi.dim == 1 else psi.values[::stride, ::stride]
        wy = np.full(len(y), stride * psi.hx)
        wy[0] = wy[-1] = 0.5 * stride * psi.hx
    inner = _apply_1d(kf, x, y, wy, f) if psi.dim == 1 else _apply_2d(kf, x, y, wy, f)
    pts = psi.points()
    outer = kf.pref * np.exp(1j * KernelClosedForm(
        1.0, kf.Qxx, kf.Qxy, kf.Qyy, kf.lx, kf.ly, kf.c, local=True).phase(pts))
    return outer * inner


def apply_kernel(kf: KernelClosedForm, psi: WaveFunction, tail_tol: float = 1e-6,
                 check: bool = True, estimate_error: bool = True) -> WaveFunction:
    """Trapezoid-rule application ``psi'(x) = int K(x, y) psi(y) dy``.

    Resolution check: trapezoid sampling in ``y`` adds copies of the exact
    result displaced by ``2 pi Qxy^{-T} k / hx``; these must land outside the
    box.  Both input and output must decay to ``tail_tol`` (relative) at the
    box edges.  The half-resolution rerun (every other ``y`` node) is stored
    in ``meta['quad_error']``.

    Raises
    ------
    UnderResolved
    """
    if kf.dim != psi.dim:
        raise ValueError("kernel and wave function dimensions differ")
    if kf.local:
        vals = kf(psi.points()) * psi.values
        return psi.like(vals, quad_error=0.0)
    scale = float(np.max(np.abs(psi.values)))
    if check:
        if _edge_max(psi.values) > tail_tol * scale:
            raise UnderResolved("input does not decay inside the box")
        shift = _ghost_shift(kf, psi.hx)
        if shift < 2 * psi.Lbox:
            raise UnderResolved(
                f"aliased copies displaced by {shift:.3g} < box width {2 * psi.Lbox:.3g}; "
                "enlarge m or |t - s|")
    vals = _apply(kf, psi)
    meta = {}
    if check and _edge_max(vals) > tail_tol * max(float(np.max(np.abs(vals))), 1e-300):
        raise UnderResolved("output does not decay inside the box")
    if estimate_error:
        coarse = _apply(kf, psi, stride=2)
        w = psi.weights()
        meta["quad_error"] = float(np.sqrt(np.sum(np.abs(coarse - vals) ** 2 * w)))
    return psi.like(vals, **meta)


# -- observables ---------------------------------------------------------------

def derivative(values: np.ndarray, hx: float, axis: int = 0, order: int = 1) -> np.ndarray:
    """Fourth-order central finite differences (second order at the two edge nodes)."""
    f = np.moveaxis(np.asarray(values), axis, 0)
    out = np.empty_like(f)
    if order == 1:
        out[2:-2] = (f[:-4] - 8 * f[1:-3] + 8 * f[3:-1] - f[4:]) / (12 * hx)
        out[:2] = np.gradient(f[:3], hx, axis=0)[:2]
        out[-2:] = np.gradient(f[-3:], hx, axis=0)[-2:]
    elif order == 2:
        out[2:-2] = (-f[:-4] + 16 * f[1:-3] - 30 * f[2:-2] + 16 * f[3:-1] - f[4:]) / (12 * hx ** 2)
        out[1] = (f[0] - 2 * f[1] + f[2]) / hx ** 2
        out[-2] = (f[-3] - 2 * f[-2] + f[-1]) / hx ** 2
        out[0], out[-1] = out[1], out[-2]
    else:
        raise ValueError("order must be 1 or 2")
    return np.moveaxis(out, 0, axis)


def linear_observable(psi: WaveFunction, a, b) -> np.ndarray:
    """``(a.x + b.p) psi`` with ``p = -i grad``."""
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    pts = psi.points()
    if psi.dim == 1:
        pts = pts[:, None]
    out = (pts @ a) * psi.values
    for i in range(psi.dim):
        if b[i]:
            out = out - 1j * b[i] * derivative(psi.values, psi.hx, axis=i)
    return out


def expectation_linear(psi: WaveFunction, a, b) -> float:
    return float(np.real(np.sum(np.conj(psi.values) * linear_observable(psi, a, b)
                                * psi.weights())))


def egorov_residual(flow: AffineSymplecticMap, kf: KernelClosedForm, a, b,
                    psi: WaveFunction) -> float:
    """``|<U psi, L U psi> - <psi, (L o flow) psi>|`` for ``L = a.q + b.p``."""
    d = flow.dim
    a = np.atleast_1d(np.asarray(a, dtype=float))
    b = np.atleast_1d(np.asarray(b, dtype=float))
    out = apply_kernel(kf, psi, estimate_error=False)
    lhs = expectation_linear(out, a, b)
    ab = np.concatenate([a, b])
    pulled = flow.F.T @ ab
    norm2 = psi.l2_norm() ** 2
    rhs = expectation_linear(psi, pulled[:d], pulled[d:]) + (ab @ flow.v) * norm2
    return abs(lhs - rhs)


def hk_sobolev_norm(psi: WaveFunction, k: int) -> float:
    """Weighted Sobolev surrogate ``|psi|_{H^k} + | |x|^k psi |``; ``k = 0`` gives the L2 norm."""
    if k not in (0, 1, 2):
        raise ValueError("k must be 0, 1 or 2")
    w = psi.weights()
    sq = lambda f: float(np.sum(np.abs(f) ** 2 * w))  # noqa: E731
    if k == 0:
        return np.sqrt(sq(psi.values))
    total = sq(psi.values)
    grads = [derivative(psi.values, psi.hx, axis=i) for i in range(psi.dim)]
    total += sum(sq(g) for g in grads)
    if k == 2:
        for i in range(psi.dim):
            for j in range(psi.dim):
                if i == j:
                    total += sq(derivative(psi.values, psi.hx, axis=i, order=2))
                else:
                    total += sq(derivative(grads[i], psi.hx, axis=j))
    pts = psi.points()
    r2 = pts ** 2 if psi.dim == 1 else np.sum(pts ** 2, axis=-1)
    return float(np.sqrt(total) + np.sqrt(sq(r2 ** (k / 2) * psi.values)))


# -- mollified propagation -----------------------------------------------------

@dataclass
class CauchyReport:
    eps: list
    l2dist: list
    beta_dist: list
    h2norm: float

    @property
    def ratios(self) -> np.ndarray:
        bd = np.asarray(self.beta_dist)
        ld = np.asarray(self.l2dist)
        with np.errstate(divide="ignore", invalid="ignore"):
            return np.where(bd > 0, ld / (bd * self.h2norm), 0.0)

    def to_json(self) -> list:
        return [{"eps": float(e), "l2dist": float(d)} for e, d in zip(self.eps[1:], self.l2dist)]


def propagate_rough(H, K, beta, psi: WaveFunction, t: float, s: float, eps_schedule,
                    theta=None, slack: float = 10.0, flow_kw: dict | None = None,
                    ) -> tuple[WaveFunction, CauchyReport]:
    """Propagate ``psi`` with flows of successively finer mollifications of ``beta``.

    Raises
    ------
    NotCauchy
        If a Lipschitz ratio ``dist / (|beta_k - beta_{k+1}|_inf |psi|_{H^2})``
        exceeds ``slack`` times their median.  Distances themselves need not
        decrease monotonically: they follow the driver gap at the end points,
        which the sup-norm gap only bounds.
    """
    eps = np.asarray(eps_schedule, dtype=float)
    if np.any(np.diff(eps) >= 0):
        raise ValueError("eps schedule must be strictly decreasing")
    flow_kw = flow_kw or {}
    outs, paths = [], []
    for e in eps:
        b = beta if beta.smooth else mollify(beta, e)
        flow = solve_flow(H, K, b, t, s, **flow_kw)
        outs.append(apply_kernel(hk_kernel(flow, theta), psi, estimate_error=False))
        paths.append(b)
    l2 = [outs[k].distance(outs[k + 1]) for k in range(len(eps) - 1)]
    bd = [float(np.max(np.abs(paths[k].values - paths[k + 1].values))) for k in range(len(eps) - 1)]
    rep = CauchyReport(list(eps), l2, bd, hk_sobolev_norm(psi, 2))
    if len(l2) >= 2 and not beta.smooth:
        r = rep.ratios
        med = np.median(r[r > 0]) if np.any(r > 0) else 0.0
        if np.any(r > slack * med):
            raise NotCauchy(f"distances {l2} not controlled by driver gaps {bd}")
    return outs[-1], rep
