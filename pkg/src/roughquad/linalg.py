"""Symplectic linear algebra helpers shared by the flow and kernel code."""
from __future__ import annotations

import logging

import numpy as np
from scipy import linalg as sla

from .errors import BranchLost

logger = logging.getLogger(__name__)


def symplectic_J(d: int) -> np.ndarray:
    """Return the standard symplectic matrix ``[[0, I], [-I, 0]]`` of size 2d."""
    I = np.eye(d)
    Z = np.zeros((d, d))
    return np.block([[Z, I], [-I, Z]])


def symplectic_residual(F: np.ndarray) -> float:
    """Max-norm of ``F^T J F - J``."""
    d = F.shape[-1] // 2
    J = symplectic_J(d)
    return float(np.max(np.abs(F.T @ J @ F - J)))


def symplectic_inverse(F: np.ndarray) -> np.ndarray:
    """Inverse of a symplectic matrix via ``-J F^T J``."""
    d = F.shape[-1] // 2
    J = symplectic_J(d)
    return -J @ np.swapaxes(F, -1, -2) @ J


def symplectic_project(F: np.ndarray) -> np.ndarray:
    """Nearest-symplectic correction ``F (-J F^T J F)^{-1/2}``.

    For F close to symplectic the Gram-type matrix is close to the identity
    and the correction is of the same order as the defect.
    """
    d = F.shape[0] // 2
    J = symplectic_J(d)
    G = -J @ F.T @ J @ F
    root = sla.sqrtm(G)
    return np.real(F @ np.linalg.inv(root))


def _nilpotency_index(N: np.ndarray, kmax: int = 4) -> int | None:
    P = np.eye(N.shape[0])
    for k in range(1, kmax + 1):
        P = P @ N
        if not np.any(P):
            return k
    return None


def expm_batch(N: np.ndarray, deltas) -> np.ndarray:
    """Return ``exp(delta * N)`` stacked over an array of scalars ``deltas``.

    Nilpotent generators (exactly, in floating point) use the terminating
    power series; everything else goes through scaling and squaring.
    """
    deltas = np.asarray(deltas, dtype=float)
    shape = deltas.shape
    flat = deltas.reshape(-1)
    n = N.shape[0]
    k = _nilpotency_index(N)
    if k is not None:
        out = np.broadcast_to(np.eye(n), (flat.size, n, n)).copy()
        term = np.eye(n)
        fact = 1.0
        for j in range(1, k):
            term = term @ N
            fact *= j
            out += (flat[:, None, None] ** j / fact) * term
    else:
        out = sla.expm(flat[:, None, None] * N)
    return out.reshape(shape + (n, n))


def expm_integral_batch(N: np.ndarray, deltas) -> np.ndarray:
    """Return ``int_0^delta exp(r N) dr`` for each delta.

    Uses the block-triangular exponential ``exp([[N, I], [0, 0]] delta)``
    whose upper-right block is the requested integral.
    """
    deltas = np.asarray(deltas, dtype=float)
    n = N.shape[0]
    big = np.zeros((2 * n, 2 * n))
    big[:n, :n] = N
    big[:n, n:] = np.eye(n)
    return expm_batch(big, deltas)[..., :n, n:]


def continuous_sqrt(values, start_phase: float | None = None,
                    max_jump: float = np.pi / 2) -> np.ndarray:
    """Continuous branch of ``sqrt`` along a sampled complex path.

    Parameters
    ----------
    values : array_like of complex
        Samples of a nonvanishing continuous function.
    start_phase : float, optional
        Argument to use for ``values[0]``; defaults to the principal one.
    max_jump : float
        Largest admissible change of argument between consecutive samples.

    Returns
    -------
    ndarray
        Square roots of ``values`` that vary continuously along the path.
    """
    values = np.asarray(values, dtype=complex)
    if np.any(values == 0):
        raise BranchLost("path passes through zero")
    steps = np.angle(values[1:] / values[:-1])
    bad = np.flatnonzero(np.abs(steps) > max_jump)
    if bad.size:
        raise BranchLost(f"argument jump {steps[bad[0]]:.3g} rad at sample {bad[0] + 1}")
    phase0 = np.angle(values[0]) if start_phase is None else start_phase
    phase = phase0 + np.concatenate([[0.0], np.cumsum(steps)])
    return np.sqrt(np.abs(values)) * np.exp(0.5j * phase)


def _orthogonal_power(Q: np.ndarray, lam: float) -> np.ndarray:
    T, Z = sla.schur(Q.astype(complex), output="complex")
    ev = np.diag(T)
    return np.real(Z @ np.diag(np.exp(1j * lam * np.angle(ev))) @ Z.conj().T)


def symplectic_geodesic(F: np.ndarray, n: int = 129) -> np.ndarray:
    """A continuous path of symplectic matrices from the identity to ``F``.

    Built from the polar decomposition ``F = Q P``: the orthogonal factor is
    raised to fractional powers through its Schur form and the positive
    factor through its logarithm.  Used for branch tracking when a map comes
    without a solver history.
    """
    Q, P = sla.polar(F, side="right")
    logP = np.real(sla.logm(P))
    lams = np.linspace(0.0, 1.0, n)
    return np.array([_orthogonal_power(Q, lam) @ sla.expm(lam * logP) for lam in lams])


def track_sqrt_det(maps: np.ndarray, fn, start_phase: float | None = None,
                   refine_depth: int = 8) -> complex:
    """Square root of ``fn(F)`` at the end of a path of maps, tracked continuously.

    ``fn`` maps a stack of 2d x 2d matrices to nonzero complex scalars.  Steps
    whose argument jumps by more than pi/2 are bisected along the short
    symplectic geodesic between neighbouring maps, up to ``refine_depth`` times.
    """
    maps = list(maps)
    vals = list(np.asarray(fn(np.asarray(maps)), dtype=complex))
    for _ in range(refine_depth):
        steps = np.angle(np.array(vals[1:]) / np.array(vals[:-1]))
        bad = np.flatnonzero(np.abs(steps) > np.pi / 2)
        if bad.size == 0:
            break
        for k in bad[::-1]:
            F0, F1 = maps[k], maps[k + 1]
            step = F1 @ symplectic_inverse(F0)
            mid = np.real(sla.expm(0.5 * sla.logm(step))) @ F0
            maps.insert(k + 1, mid)
            vals.insert(k + 1, complex(fn(mid[None])[0]))
    return complex(continuous_sqrt(vals, start_phase=start_phase)[-1])
