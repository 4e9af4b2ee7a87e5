"""Closed-form propagator kernels for affine symplectic flows.

Two constructions are provided.  :func:`hk_kernel` integrates the complex
Gaussian phase-space representation analytically; it is defined for every
flow whose position-momentum block ``B`` is invertible and keeps a
continuous square-root branch along the flow history.  :func:`mehler_kernel`
builds the generating-function form ``det(B)^{-1/2} e^{iS}`` directly and
refuses to cross caustics.

Kernels act as ``(U psi)(x) = int K(x, y) psi(y) dy`` with

    K(x, y) = pref exp(i(x.Qxx x/2 + x.Qxy y + y.Qyy y/2 + lx.x + ly.y + c)).

A kernel flagged ``local`` instead represents the multiplication operator
``psi(x) -> pref exp(i(x.Qxx x/2 + lx.x + c)) psi(x)``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import Caustic, DegenerateHessian, HypothesisViolated, NotSiegel
from .classical_flow import AffineSymplecticMap, action, caustic_threshold
from .hamiltonians import validate_hypotheses
from .linalg import (continuous_sqrt, symplectic_geodesic, symplectic_inverse,
                     symplectic_J, track_sqrt_det)


@dataclass(frozen=True)
class SiegelMatrix:
    """Complex symmetric matrix with positive definite imaginary part."""

    M: np.ndarray

    def __post_init__(self):
        M = np.atleast_2d(np.asarray(self.M, dtype=complex))
        object.__setattr__(self, "M", M)
        if np.max(np.abs(M - M.T)) > 1e-10 * max(1.0, np.max(np.abs(M))):
            raise NotSiegel("matrix is not symmetric")
        im = 0.5 * (M.imag + M.imag.T)
        lam = np.linalg.eigvalsh(im)
        if lam.min() <= 1e-12:
            raise NotSiegel(f"imaginary part not positive definite (min eigenvalue {lam.min():.3g})")

    @classmethod
    def standard(cls, d: int) -> "SiegelMatrix":
        return cls(1j * np.eye(d))


@dataclass
class KernelClosedForm:
    pref: complex
    Qxx: np.ndarray
    Qxy: np.ndarray
    Qyy: np.ndarray
    lx: np.ndarray
    ly: np.ndarray
    c: complex
    local: bool = False

    @property
    def dim(self) -> int:
        return self.Qxx.shape[0]

    def phase(self, x, y=None):
        """Total complex phase at points ``x`` (and ``y``).

        For ``d == 1`` the arguments are coordinate arrays of any broadcastable
        shape; otherwise the last axis holds the ``d`` components.
        """
        x = np.asarray(x, dtype=float)
        d = self.dim
        if d == 1:
            x = x[..., None]
        ph = 0.5 * np.einsum("...i,ij,...j->...", x, self.Qxx, x) + x @ self.lx + self.c
        if self.local:
            return ph
        y = np.asarray(y, dtype=float)
        if d == 1:
            y = y[..., None]
        ph = ph + np.einsum("...i,ij,...j->...", x, self.Qxy, y) \
            + 0.5 * np.einsum("...i,ij,...j->...", y, self.Qyy, y) + y @ self.ly
        return ph

    def __call__(self, x, y=None):
        return self.pref * np.exp(1j * self.phase(x, y))

    def quadratic_form(self) -> tuple[np.ndarray, np.ndarray]:
        """Joint ``2d x 2d`` phase matrix and linear vector in ``(x, y)``."""
        Q = np.block([[self.Qxx, self.Qxy], [self.Qxy.T, self.Qyy]])
        return Q, np.concatenate([self.lx, self.ly])

    def to_json(self) -> dict:
        def cx(a):
            a = np.asarray(a, dtype=complex)
            return np.stack([a.real, a.imag], axis=-1).tolist()

        return {"pref": cx(self.pref), "Qxx": cx(self.Qxx), "Qxy": cx(self.Qxy),
                "Qyy": cx(self.Qyy), "lx": cx(self.lx), "ly": cx(self.ly),
                "c": cx(self.c), "local": self.local}


def gamma_matrix(flow: AffineSymplecticMap) -> SiegelMatrix:
    """Image of ``iI`` under the flow: ``(C + iD)(A + iB)^{-1}``."""
    return SiegelMatrix(_gamma(flow.F))


def _gamma(F):
    d = F.shape[-1] // 2
    A, B, C, D = F[..., :d, :d], F[..., :d, d:], F[..., d:, :d], F[..., d:, d:]
    G = (C + 1j * D) @ np.linalg.inv(A + 1j * B)
    return 0.5 * (G + np.swapaxes(G, -1, -2))


def map_path(flow: AffineSymplecticMap) -> np.ndarray:
    """Symplectic matrices along the flow from the identity to ``flow.F``."""
    if flow.history is not None and len(flow.history) > 1:
        maps = np.array(flow.history.F)
        maps[-1] = flow.F
        return maps
    return symplectic_geodesic(flow.F)


def _lower_order(flow: AffineSymplecticMap):
    d = flow.dim
    w = symplectic_inverse(flow.F) @ flow.v
    return w[:d], w[d:], flow.phase


def _local_kernel(flow: AffineSymplecticMap) -> KernelClosedForm:
    d = flow.dim
    if np.max(np.abs(flow.A - np.eye(d))) > 1e-12 or np.max(np.abs(flow.B)) > 1e-12 \
            or np.max(np.abs(flow.v[:d])) > 1e-12:
        raise DegenerateHessian("flow with singular B is not a pure momentum shear")
    Z = np.zeros((d, d))
    C = 0.5 * (flow.C + flow.C.T)
    return KernelClosedForm(1.0 + 0j, C.astype(complex), Z, Z, flow.v[d:].astype(complex),
                            np.zeros(d, complex), complex(flow.phase), local=True)


def hk_kernel(flow: AffineSymplecticMap, theta=None, lower_order: bool = True,
              scale: float | None = None) -> KernelClosedForm:
    """Kernel from the Gaussian phase-space integral, integrated in closed form.

    Parameters
    ----------
    flow : AffineSymplecticMap
        Flow from ``s`` to ``t``; its history (if any) fixes the square-root branch.
    theta : SiegelMatrix, array, or ``"gamma"``, optional
        Width matrix of the phase-space Gaussians; defaults to ``iI``.  The
        kernel does not depend on it.  ``"gamma"`` uses ``gamma_matrix``
        along the flow.
    lower_order : bool
        Include the translation and accumulated phase of the affine flow.

    Raises
    ------
    DegenerateHessian
        When ``B`` is singular and the flow is not a pure momentum shear.
    """
    F = flow.F
    d = flow.dim
    if np.max(np.abs(flow.B)) <= 1e-14 * max(1.0, np.max(np.abs(F))):
        return _local_kernel(flow)
    I = np.eye(d)
    Z = np.zeros((d, d))

    if theta is None:
        theta = SiegelMatrix.standard(d)
    if isinstance(theta, str):
        if theta != "gamma":
            raise ValueError("theta must be a Siegel matrix or 'gamma'")
        theta_fn = _gamma
    else:
        Th = theta.M if isinstance(theta, SiegelMatrix) else SiegelMatrix(theta).M
        theta_fn = lambda _F: Th  # noqa: E731
    Th = theta_fn(F)

    def det_iM(Fk):
        A, B, C, D = Fk[..., :d, :d], Fk[..., :d, d:], Fk[..., d:, :d], Fk[..., d:, d:]
        Tk = theta_fn(Fk)
        return np.linalg.det(1j * (C - 1j * D - Tk @ (A - 1j * B)))

    Sig = np.block([[Z, I], [I, Z]])
    Fq, Fp = F[:d], F[d:]
    Pq = np.hstack([I, Z])
    P = -0.5 * F.T @ Sig @ F + 0.5 * Sig + Fq.T @ Th @ Fq + 1j * Pq.T @ Pq
    P = 0.5 * (P + P.T)
    sc = scale if scale is not None else max(1.0, float(np.linalg.norm(F, 2)))
    detP = np.linalg.det(P)
    if abs(detP) < 1e-12 * sc ** (2 * d):
        raise DegenerateHessian(f"|det P| = {abs(detP):.3g} at a caustic")
    Wx = Fp.T - Fq.T @ Th
    Wy = np.vstack([-1j * I, -I])
    Pinv = np.linalg.inv(P)
    Qxx = Th - Wx.T @ Pinv @ Wx
    Qxy = -Wx.T @ Pinv @ Wy
    Qyy = 1j * I - Wy.T @ Pinv @ Wy

    # Gaussian integral over z: principal branch is exact since Re(-iP) >= 0
    lam = np.linalg.eigvals(-1j * P)
    z_int = (2 * np.pi) ** d * np.prod(lam ** -0.5)
    start = float(np.sum(np.angle(np.linalg.eigvals(I - 1j * theta_fn(np.eye(2 * d))))))
    root_iM = track_sqrt_det(map_path(flow), det_iM, start_phase=start)
    pref = (2 * np.pi) ** (-1.5 * d) * root_iM * z_int

    kf = KernelClosedForm(complex(pref), 0.5 * (Qxx + Qxx.T), Qxy, 0.5 * (Qyy + Qyy.T),
                          np.zeros(d, complex), np.zeros(d, complex), 0j)
    if lower_order:
        kf = _shift(kf, *_lower_order(flow))
    return kf


def _shift(kf: KernelClosedForm, wq, wp, theta) -> KernelClosedForm:
    # K(x, y) = e^{i theta} K2(x, y + wq) e^{i(wp.y + wq.wp/2)}
    lx = kf.lx + kf.Qxy @ wq
    ly = kf.ly + kf.Qyy @ wq + wp
    c = kf.c + 0.5 * wq @ kf.Qyy @ wq + kf.ly @ wq + 0.5 * wq @ wp + theta
    return KernelClosedForm(kf.pref, kf.Qxx, kf.Qxy, kf.Qyy, lx, ly, complex(c))


def mehler_kernel(flow: AffineSymplecticMap, H, K, beta, t, s, gamma_min: float = 0.0,
                  cross_check: bool = True) -> KernelClosedForm:
    """Generating-function kernel ``(2 pi i)^{-d/2} det(B)^{-1/2} e^{i S(x, y)}``.

    Raises
    ------
    HypothesisViolated
        If the structural hypotheses fail for this scenario.
    Caustic
        If ``det B`` is below threshold or changed sign since ``s``.
    """
    rep = validate_hypotheses(H, K, beta.mu, times=[s, t])
    if not rep.ok:
        raise HypothesisViolated("; ".join(rep.failures()))
    d = flow.dim
    A, B, C, D = flow.A, flow.B, flow.C, flow.D
    detB = np.linalg.det(B)
    thresh = max(gamma_min * abs(t - s) ** d, caustic_threshold(flow.F))
    if abs(detB) < thresh:
        raise Caustic(f"|det B| = {abs(detB):.3g} below threshold {thresh:.3g}")
    maps = map_path(flow)
    dets = np.linalg.det(maps[1:, :d, d:])
    if np.any(np.sign(dets) != np.sign(detB)) or np.any(dets == 0):
        raise Caustic("det B changed sign between s and t")
    # branch fixed at the first node after s, where B ~ (t - s) E_H(s)
    phase0 = float(np.sum(np.angle(1j * np.linalg.eigvals(maps[1][:d, d:]))))
    pref = (2 * np.pi) ** (-d / 2) * abs(detB) ** -0.5 * np.exp(-0.5j * phase0)

    Binv = np.linalg.inv(B)
    vq, vp = flow.v[:d], flow.v[d:]
    DBi = D @ Binv
    Qxx = 0.5 * (DBi + DBi.T)
    Qxy = -Binv.T
    BiA = Binv @ A
    Qyy = 0.5 * (BiA + BiA.T)
    lx = vp - DBi @ vq
    ly = Binv @ vq
    c = flow.phase - 0.5 * vp @ vq + 0.5 * vq @ DBi @ vq
    kf = KernelClosedForm(complex(pref), Qxx.astype(complex), Qxy.astype(complex),
                          Qyy.astype(complex), lx.astype(complex), ly.astype(complex),
                          complex(c))
    if cross_check:
        rng = np.random.default_rng(0)
        for _ in range(3):
            x, y = rng.standard_normal(d), rng.standard_normal(d)
            S = action(H, K, beta, flow, t, s, x, y)
            ph = float(np.real(np.ravel(kf.phase(x, y))[0]))
            if abs(S - ph) > 1e-8 * max(1.0, abs(S)):
                raise RuntimeError(f"generating-function blocks disagree with action: {S} vs {ph}")
    return kf


def dispersive_sup(kf: KernelClosedForm) -> float:
    """``sup_{x,y} |K(x, y)|`` from the closed form."""
    Q, l = kf.quadratic_form()
    ImQ, Iml = Q.imag, l.imag
    if np.max(np.abs(ImQ)) == 0 and np.max(np.abs(Iml)) == 0:
        return float(abs(kf.pref) * np.exp(-kf.c.imag))
    z, *_ = np.linalg.lstsq(ImQ, -Iml, rcond=None)
    if np.max(np.abs(ImQ @ z + Iml)) > 1e-9 * max(1.0, np.max(np.abs(Iml))):
        return float("inf")
    lam = np.linalg.eigvalsh(0.5 * (ImQ + ImQ.T))
    if lam.min() < -1e-10 * max(1.0, np.max(np.abs(lam))):
        return float("inf")
    min_im = kf.c.imag + 0.5 * Iml @ z
    return float(abs(kf.pref) * np.exp(-min_im))


def min_imag_phase(kf: KernelClosedForm, points) -> float:
    """Smallest imaginary part of the kernel phase on probe points ``(x, y)``."""
    d = kf.dim
    pts = np.asarray(points, dtype=float).reshape(-1, 2 * d)
    return float(np.min(kf.phase(pts[:, :d], pts[:, d:]).imag))


def _bargmann_prefactor(flow: AffineSymplecticMap) -> tuple[complex, np.ndarray]:
    d = flow.dim
    J = symplectic_J(d)
    I2 = np.eye(2 * d)

    def detM(Fk):
        return np.linalg.det(I2 + Fk + 1j * (J @ (I2 - Fk)))

    F = flow.F
    M = I2 + F + 1j * J @ (I2 - F)
    Lam = (I2 + F) @ np.linalg.inv(M)
    root = track_sqrt_det(map_path(flow), detM, start_phase=0.0)
    return 2 ** d / root, Lam


def bargmann_element(flow: AffineSymplecticMap, X, Y) -> complex:
    """Coherent-state matrix element ``<phi_Y, U phi_X>`` in closed form.

    Coherent states are ``phi_X(x) = e^{i(p.x - q.p/2)} pi^{-d/4} e^{-|x - q|^2/2}``
    for ``X = (q, p)``.
    """
    d = flow.dim
    J = symplectic_J(d)
    X = np.asarray(X, dtype=float)
    Y = np.asarray(Y, dtype=float)
    a, Lam = _bargmann_prefactor(flow)
    Yl = Y - flow.v
    Z = Yl - flow.F @ X
    w = 0.5 * (Z - 1j * J @ Z)
    base = a * np.exp(-0.25 * Z @ Z + w @ Lam @ w)
    g = 0.5j * (J @ (flow.F @ X)) @ Yl
    return complex(np.exp(1j * flow.phase - 0.5j * flow.v @ J @ Y + g) * base)
