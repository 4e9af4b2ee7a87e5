"""Affine symplectic flow of ``H(t) + beta'(t) K`` for a rough driver ``beta``.

The flow is computed from the integral equation

    X(tau) = E(d_tau) + int_s^tau E(d_tau - d_u) M_H(u) X(u) du,
    E(r) = exp(r N_K),   d_u = beta(u) - beta(s),

posed on augmented ``(2d+1)``-vectors ``(z, 1)`` so that the affine part is
carried exactly.  Only point values of ``beta`` enter.  Writing
``X = E(d) Y`` turns it into ``Y = I + int E(-d) M_H E(d) Y du``, which is
solved by Picard iteration with piecewise Chebyshev-Lobatto cumulative
quadrature on every cell of the driver grid.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
from numpy.polynomial import chebyshev as npcheb

from .errors import Caustic, NoContraction, QuadratureUnderResolved, SymplecticityLost
from .hamiltonians import NoiseHamiltonian, QuadraticHamiltonian
from .linalg import (expm_batch, expm_integral_batch, symplectic_J,
                     symplectic_project, symplectic_residual)
from .paths import DriverPath

logger = logging.getLogger(__name__)


@dataclass
class FlowHistory:
    """Solver output at every quadrature node between ``s`` and ``t``.

    ``X[k]`` is the augmented map from ``s`` to ``times[k]``; ``lin_action[k]``
    and ``h0_int[k]`` hold the integrals needed for actions along any
    trajectory (see :func:`action`).
    """

    times: np.ndarray
    X: np.ndarray
    lin_action: np.ndarray
    h0_int: np.ndarray
    delta: np.ndarray

    def __len__(self):
        return len(self.times)

    @property
    def F(self) -> np.ndarray:
        n = self.X.shape[-1] - 1
        return self.X[:, :n, :n]

    @property
    def v(self) -> np.ndarray:
        n = self.X.shape[-1] - 1
        return self.X[:, :n, n]

    def prefix(self, k: int) -> "FlowHistory":
        sl = slice(0, k + 1)
        return FlowHistory(self.times[sl], self.X[sl], self.lin_action[sl],
                           self.h0_int[sl], self.delta[sl])


@dataclass
class AffineSymplecticMap:
    """``z -> F z + v`` from time ``s`` to time ``t``.

    ``phase`` is the action accumulated along the trajectory starting at the
    origin, measured with the symmetric form ``(p dq - q dp)/2 - H dt``.
    """

    F: np.ndarray
    v: np.ndarray
    t: float
    s: float
    phase: float = 0.0
    residuals: dict = field(default_factory=dict)
    history: FlowHistory | None = None

    @property
    def dim(self) -> int:
        return self.F.shape[0] // 2

    @property
    def A(self):
        d = self.dim
        return self.F[:d, :d]

    @property
    def B(self):
        d = self.dim
        return self.F[:d, d:]

    @property
    def C(self):
        d = self.dim
        return self.F[d:, :d]

    @property
    def D(self):
        d = self.dim
        return self.F[d:, d:]

    def __call__(self, z):
        return self.F @ np.asarray(z, dtype=float) + self.v

    def compose(self, other: "AffineSymplecticMap") -> "AffineSymplecticMap":
        """``self after other``; histories are not carried.

        The phase follows from ``T(w1) T(w2) = e^{-i w1.J w2 / 2} T(w1 + w2)``
        for phase-space translations ``T``.
        """
        J = symplectic_J(self.dim)
        Fv = self.F @ other.v
        phase = self.phase + other.phase - 0.5 * self.v @ J @ Fv
        return AffineSymplecticMap(self.F @ other.F, Fv + self.v, self.t, other.s, float(phase))

    def at_node(self, k: int) -> "AffineSymplecticMap":
        """The map from ``s`` to the k-th stored node, with its history prefix."""
        if self.history is None:
            raise ValueError("map carries no solver history")
        h = self.history.prefix(k)
        e = np.zeros(h.X.shape[-1])
        e[-1] = 1.0
        phase = float(-(h.lin_action[-1] @ e) - h.h0_int[-1])
        return AffineSymplecticMap(h.F[-1].copy(), h.v[-1].copy(), float(h.times[-1]),
                                   self.s, phase, {}, h)

    @classmethod
    def identity(cls, d: int, t: float = 0.0) -> "AffineSymplecticMap":
        return cls(np.eye(2 * d), np.zeros(2 * d), t, t)

    @classmethod
    def linear(cls, F, t: float = 1.0, s: float = 0.0) -> "AffineSymplecticMap":
        F = np.asarray(F, dtype=float)
        return cls(F, np.zeros(F.shape[0]), t, s)

    def to_json(self) -> dict:
        return {"t": self.t, "s": self.s, "F": self.F.ravel().tolist(),
                "v": self.v.tolist(), "residuals": dict(self.residuals)}


def noise_generator(K: NoiseHamiltonian) -> np.ndarray:
    """Augmented generator ``[[J S_K, J V_K], [0, 0]]``."""
    d = K.dim
    J = symplectic_J(d)
    N = np.zeros((2 * d + 1, 2 * d + 1))
    N[:2 * d, :2 * d] = J @ K.S
    N[:2 * d, 2 * d] = J @ K.V
    return N


def phi_noise(K: NoiseHamiltonian, delta: float) -> np.ndarray:
    """Linear flow ``exp(delta J S_K)`` of the noise Hamiltonian."""
    JS = symplectic_J(K.dim) @ K.S
    return expm_batch(JS, np.array(delta))


def _lobatto(p: int):
    x = -np.cos(np.pi * np.arange(p) / (p - 1))
    V = npcheb.chebvander(x, p - 1)
    coef = np.linalg.inv(V)
    Q = np.empty((p, p))
    for j in range(p):
        Q[:, j] = npcheb.chebval(x, npcheb.chebint(coef[:, j], lbnd=-1))
    return x, Q


def _segments(beta: DriverPath, t: float, s: float, max_step: float) -> np.ndarray:
    nodes = beta.grid.nodes
    lo, hi = min(s, t), max(s, t)
    inner = nodes[(nodes > lo) & (nodes < hi)]
    pts = np.concatenate([[lo], inner, [hi]])
    out = [pts[0]]
    for a, b in zip(pts[:-1], pts[1:]):
        m = max(1, int(np.ceil((b - a) / max_step - 1e-9)))
        out.extend(a + (b - a) * np.arange(1, m + 1) / m)
    out = np.array(out)
    out[-1] = hi
    return out if t >= s else out[::-1]


def _solve_augmented(H, K, beta, t, s, tol, p, max_step, max_iter):
    d = H.dim
    n = 2 * d + 1
    J = symplectic_J(d)
    x, Q = _lobatto(p)
    br = _segments(beta, t, s, max_step)
    half = 0.5 * (br[1:] - br[:-1])
    mid = 0.5 * (br[1:] + br[:-1])
    tau = mid[:, None] + half[:, None] * x[None, :]
    tau[:, 0], tau[:, -1] = br[:-1], br[1:]
    delta = beta(tau) - beta(s)

    NK = noise_generator(K)
    MH = np.zeros(tau.shape + (n, n))
    MH[..., :2 * d, :2 * d] = J @ H.S_stack(tau)
    MH[..., :2 * d, 2 * d] = H.V_stack(tau) @ J.T
    E = expm_batch(NK, delta)
    Einv = expm_batch(NK, -delta)
    Gm = Einv @ MH @ E

    I = np.eye(n)

    def integrate(f):
        cum = half[:, None, None, None] * np.einsum("ij,sjab->siab", Q, f)
        offs = np.cumsum(cum[:, -1], axis=0)
        offs = np.concatenate([np.zeros((1,) + offs.shape[1:]), offs[:-1]], axis=0)
        return cum + offs[:, None]

    Y = np.broadcast_to(I, Gm.shape).copy()
    res_hist = []
    for it in range(1, max_iter + 1):
        Ynew = I + integrate(Gm @ Y)
        Xnew = E @ Ynew
        res = float(np.max(np.abs(E @ (Ynew - Y))))
        scale = max(1.0, float(np.max(np.abs(Xnew))))
        Y = Ynew
        res_hist.append(res)
        if not np.isfinite(res):
            break
        if res <= tol * scale:
            break
    else:
        it = max_iter + 1
    if it > max_iter or not np.isfinite(res_hist[-1]):
        raise NoContraction(
            f"Picard residual {res_hist[-1]:.3g} after {len(res_hist)} iterations on |t-s|={abs(t - s):.4g}")

    X = E @ Y
    # action integrals: smooth part and rough part (after integration by parts)
    VH = np.zeros(tau.shape + (n,))
    VH[..., :2 * d] = H.V_stack(tau)
    smooth_rows = integrate((0.5 * np.einsum("sja,sjab->sjb", VH, X))[..., None, :])[..., 0, :]
    h0_int = integrate(H.h0_stack(tau)[..., None, None])[..., 0, 0]
    vk = np.zeros(n)
    vk[:2 * d] = K.V
    if np.any(vk):
        Phi = expm_integral_batch(NK, delta)
        cphi = np.einsum("a,sjab->sjb", 0.5 * vk, Phi)
        boundary = np.einsum("sjb,sjbc->sjc", cphi, Y)
        corr = integrate(np.einsum("sjb,sjbc->sjc", cphi, Gm @ Y)[..., None, :])[..., 0, :]
        rough_rows = boundary - corr
    else:
        rough_rows = np.zeros_like(smooth_rows)

    def flat(a):
        return np.concatenate([a[:, :-1].reshape((-1,) + a.shape[2:]), a[-1:, -1]], axis=0)

    hist = FlowHistory(flat(tau), flat(X), flat(smooth_rows + rough_rows), flat(h0_int), flat(delta))
    return hist, len(res_hist), res_hist[-1]


def solve_flow(H: QuadraticHamiltonian, K: NoiseHamiltonian, beta: DriverPath, t: float,
               s: float, tol: float = 1e-12, nodes_per_interval: int = 8,
               max_step: float = 0.05, max_iter: int = 50, check_quadrature: bool = True,
               project: bool = True) -> AffineSymplecticMap:
    """Affine flow from ``s`` to ``t`` driven by ``H + beta' K``.

    Parameters
    ----------
    tol : float
        Picard stopping tolerance on the successive-iterate max-norm,
        relative to ``max(1, |X|)``.
    nodes_per_interval : int
        Chebyshev-Lobatto subintervals per quadrature segment.
    max_step : float
        Longest quadrature segment; driver cells are split further if needed.
    check_quadrature : bool
        Re-solve with doubled nodes and raise ``QuadratureUnderResolved`` if
        the end map moves by more than ``10 tol max(1, |F|)``.
    project : bool
        Apply a symplectic correction when the defect exceeds 1e-11.

    Raises
    ------
    NoContraction, QuadratureUnderResolved
    SymplecticityLost
        If the defect exceeds 1e-6 before projection or 1e-9 after it; this
        happens when the driver amplitude makes the computation ill-conditioned.
    """
    if H.dim != K.dim:
        raise ValueError("H and K dimensions differ")
    g = beta.grid
    if not (g.contains(t) and g.contains(s)):
        raise ValueError(f"times ({t}, {s}) outside driver interval [{g.start}, {g.end}]")
    d = H.dim
    if abs(t - s) < 1e-14:
        return AffineSymplecticMap.identity(d, t)
    p = nodes_per_interval + 1
    hist, iters, res = _solve_augmented(H, K, beta, t, s, tol, p, max_step, max_iter)
    Xend = hist.X[-1]
    residuals = {"picard": res, "iterations": iters}
    if check_quadrature:
        fine, _, _ = _solve_augmented(H, K, beta, t, s, tol, 2 * nodes_per_interval + 1,
                                      max_step, max_iter)
        qerr = float(np.max(np.abs(fine.X[-1] - Xend)))
        residuals["quadrature"] = qerr
        if qerr > 10 * tol * max(1.0, float(np.max(np.abs(Xend)))):
            raise QuadratureUnderResolved(f"doubling the subgrid moved the flow by {qerr:.3g}")
    F = Xend[:2 * d, :2 * d].copy()
    v = Xend[:2 * d, 2 * d].copy()
    sres = symplectic_residual(F)
    residuals["symplectic"] = sres
    if project and sres > 1e-11:
        if sres > 1e-6:
            raise SymplecticityLost(f"symplectic defect {sres:.3g}; shorten |t - s|")
        F = symplectic_project(F)
        logger.warning("symplectic projection applied (defect %.3g)", sres)
        residuals["symplectic_projected"] = symplectic_residual(F)
        if residuals["symplectic_projected"] > 1e-9:
            raise SymplecticityLost(f"defect {residuals['symplectic_projected']:.3g} after projection")
    e = np.zeros(2 * d + 1)
    e[-1] = 1.0
    phase = float(-(hist.lin_action[-1] @ e) - hist.h0_int[-1])
    return AffineSymplecticMap(F, v, float(t), float(s), phase, residuals, hist)


def chapman_residual(H, K, beta, t, s, t1, **kw) -> float:
    """Max-norm defect of ``Phi(t, t1) = Phi(t, s) Phi(s, t1)``."""
    direct = solve_flow(H, K, beta, t, t1, **kw)
    comp = solve_flow(H, K, beta, t, s, **kw).compose(solve_flow(H, K, beta, s, t1, **kw))
    return float(max(np.max(np.abs(comp.F - direct.F)), np.max(np.abs(comp.v - direct.v))))


def lipschitz_probe(H, K, beta1: DriverPath, beta2: DriverPath, t, s, z, **kw):
    """Return ``(|z_1(t) - z_2(t)|, |beta1 - beta2|_inf |z|)``."""
    z = np.asarray(z, dtype=float)
    f1 = solve_flow(H, K, beta1, t, s, **kw)
    f2 = solve_flow(H, K, beta2, t, s, **kw)
    gap = float(np.linalg.norm(f1(z) - f2(z)))
    return gap, float(np.max(np.abs(beta1.values - beta2.values)) * np.linalg.norm(z))


def history_distance(f1: AffineSymplecticMap, f2: AffineSymplecticMap) -> float:
    """Largest max-norm gap between two flows over their common node set."""
    h1, h2 = f1.history, f2.history
    if h1 is None or h2 is None or h1.times.shape != h2.times.shape \
            or np.max(np.abs(h1.times - h2.times)) > 1e-12:
        raise ValueError("flows must share a node set")
    return float(np.max(np.abs(h1.X - h2.X)))


def caustic_threshold(F: np.ndarray) -> float:
    d = F.shape[0] // 2
    return 1e-10 * max(1.0, float(np.linalg.norm(F, 2))) ** d


def boundary_momentum(flow: AffineSymplecticMap, x, y) -> np.ndarray:
    """Initial momentum of the trajectory from position ``y`` at ``s`` to ``x`` at ``t``."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    d = flow.dim
    detB = np.linalg.det(flow.B)
    if abs(detB) < caustic_threshold(flow.F):
        raise Caustic(f"det B = {detB:.3g} below caustic threshold")
    p = np.linalg.solve(flow.B, x - flow.A @ y - flow.v[:d])
    return p


def action(H, K, beta, flow: AffineSymplecticMap, t, s, x, y) -> float:
    """Classical action along the trajectory joining ``y`` at ``s`` to ``x`` at ``t``.

    Uses ``(p_t.q_t - p_s.q_s)/2`` for the homogeneous quadratic part; lower
    order parts add ``-1/2 int V_H.z du - int h0 du - 1/2 int V_K.z dbeta``,
    whose rough piece was integrated by parts inside the solver so that only
    values of ``beta`` enter.
    """
    if flow.history is None or abs(flow.t - t) > 1e-12 or abs(flow.s - s) > 1e-12:
        flow = solve_flow(H, K, beta, t, s)
    d = flow.dim
    y = np.atleast_1d(np.asarray(y, dtype=float))
    p = boundary_momentum(flow, x, y)
    z0 = np.concatenate([y, p])
    zt = flow(z0)
    S = 0.5 * (zt[d:] @ zt[:d] - p @ y)
    if flow.history is not None and len(flow.history):
        zhat = np.concatenate([z0, [1.0]])
        S -= float(flow.history.lin_action[-1] @ zhat + flow.history.h0_int[-1])
    return float(S)


def b_block_scaling(H, K, beta, starts, hmax: float, levels: int = 6, **kw):
    """Remainders ``|B(s+h, s) - h E_H(s)|`` averaged over start times.

    Returns ``(hs, mean_remainders, fitted_slope)`` where the slope is the
    least-squares exponent of the remainder in ``h``.
    """
    hs = hmax * 2.0 ** -np.arange(levels)
    rems = np.zeros((len(starts), levels))
    d = H.dim
    for i, s in enumerate(starts):
        f = solve_flow(H, K, beta, s + hmax, s, **kw)
        times = f.history.times
        for j, h in enumerate(hs):
            k = int(np.argmin(np.abs(times - (s + h))))
            hk = times[k] - s
            B = f.history.F[k][:d, d:]
            rems[i, j] = np.linalg.norm(B - hk * H.E(s), 2)
    mean = rems.mean(axis=0)
    slope = float(np.polyfit(np.log(hs), np.log(mean), 1)[0])
    return hs, mean, slope
