"""Block data for quadratic Hamiltonians ``H(t)`` and the noise Hamiltonian ``K``.

Convention: the quadratic part is ``1/2 z.S z`` with ``z = (q, p)`` and
``S = [[G, L^T], [L, E]]``, so ``G`` multiplies ``q.q/2``, ``E`` multiplies
``p.p/2`` and ``L`` couples ``L q . p``.  The linear part is ``a.q + b.p`` and
the scalar part ``h0``.  Scenario files store these blocks directly.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import NonSymmetric
from .linalg import symplectic_J


class Table:
    """Node table ``(times, values)`` evaluated by linear interpolation."""

    def __init__(self, times, values):
        self.times = np.asarray(times, dtype=float)
        self.values = np.asarray(values, dtype=float)
        if self.values.shape[0] != self.times.shape[0]:
            raise ValueError("table times and values differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("table times must be strictly increasing")

    def __call__(self, t):
        flat = self.values.reshape(len(self.times), -1)
        cols = [np.interp(t, self.times, flat[:, j]) for j in range(flat.shape[1])]
        return np.array(cols).reshape(self.values.shape[1:])


class Coefficient:
    """A time-dependent coefficient that may be constant, a callable or a table."""

    def __init__(self, spec, shape):
        self.shape = tuple(shape)
        if spec is None:
            spec = np.zeros(self.shape)
        if callable(spec):
            self.const = None
            self.fn = spec
        else:
            arr = np.asarray(spec, dtype=float)
            if arr.shape == () and self.shape:
                arr = arr * (np.eye(*self.shape[:1]) if len(self.shape) == 2 else np.ones(self.shape))
            if arr.shape != self.shape:
                raise ValueError(f"coefficient shape {arr.shape}, expected {self.shape}")
            self.const = arr
            self.fn = None

    @property
    def is_constant(self) -> bool:
        return self.const is not None

    def __call__(self, t) -> np.ndarray:
        if self.const is not None:
            return self.const
        out = np.asarray(self.fn(float(t)), dtype=float)
        return out.reshape(self.shape)

    def stack(self, times) -> np.ndarray:
        times = np.asarray(times, dtype=float)
        if self.const is not None:
            return np.broadcast_to(self.const, times.shape + self.shape)
        return np.array([self(t) for t in times.ravel()]).reshape(times.shape + self.shape)

    def is_zero(self) -> bool:
        return self.const is not None and not np.any(self.const)


def _check_symmetric(M, name, tol=1e-10):
    res = float(np.max(np.abs(M - M.T))) if M.size else 0.0
    if res > tol:
        raise NonSymmetric(f"{name} not symmetric (residual {res:.3g})")


class QuadraticHamiltonian:
    """``H(t; q, p) = 1/2 z.S(t) z + a(t).q + b(t).p + h0(t)``."""

    def __init__(self, dim: int, G=None, L=None, E=None, a=None, b=None, h0=None,
                 name: str = "custom"):
        d = int(dim)
        if d < 1:
            raise ValueError("dim must be >= 1")
        self.dim = d
        self.G = Coefficient(G, (d, d))
        self.L = Coefficient(L, (d, d))
        self.E = Coefficient(E, (d, d))
        self.a = Coefficient(a, (d,))
        self.b = Coefficient(b, (d,))
        self.h0 = Coefficient(h0, ())
        self.name = name
        for nm, c in (("G", self.G), ("E", self.E)):
            if c.is_constant:
                _check_symmetric(c.const, nm)

    # -- builtins ---------------------------------------------------------
    @classmethod
    def free(cls, dim: int = 1, mass: float = 1.0):
        return cls(dim, E=np.eye(dim) / mass, name="free")

    @classmethod
    def harmonic(cls, dim: int = 1, omega: float = 1.0):
        return cls(dim, G=omega ** 2 * np.eye(dim), E=np.eye(dim), name="harmonic")

    @classmethod
    def saddle(cls):
        """``p1^2 - p2^2 + q1^2 + q2^2``, an indefinite kinetic term."""
        return cls(2, G=2.0 * np.eye(2), E=np.diag([2.0, -2.0]), name="saddle")

    @classmethod
    def rotating_trap(cls, omegas=(1.0, 1.5), rate: float = 0.5):
        """Anisotropic planar trap whose principal axes rotate at ``rate``."""
        w2 = np.diag(np.asarray(omegas, dtype=float) ** 2)

        def G(t):
            c, s = np.cos(rate * t), np.sin(rate * t)
            R = np.array([[c, -s], [s, c]])
            return R @ w2 @ R.T

        return cls(2, G=G, E=np.eye(2), name="rotating_trap")

    # -- evaluation -------------------------------------------------------
    @property
    def is_autonomous(self) -> bool:
        return all(c.is_constant for c in (self.G, self.L, self.E, self.a, self.b, self.h0))

    @property
    def is_quadratic(self) -> bool:
        return self.a.is_zero() and self.b.is_zero() and self.h0.is_zero()

    def S(self, t) -> np.ndarray:
        G, L, E = self.G(t), self.L(t), self.E(t)
        _check_symmetric(G, "G")
        _check_symmetric(E, "E")
        return np.block([[G, L.T], [L, E]])

    def S_stack(self, times) -> np.ndarray:
        G = self.G.stack(times)
        L = self.L.stack(times)
        E = self.E.stack(times)
        top = np.concatenate([G, np.swapaxes(L, -1, -2)], axis=-1)
        bot = np.concatenate([L, E], axis=-1)
        return np.concatenate([top, bot], axis=-2)

    def V(self, t) -> np.ndarray:
        return np.concatenate([self.a(t), self.b(t)])

    def V_stack(self, times) -> np.ndarray:
        return np.concatenate([self.a.stack(times), self.b.stack(times)], axis=-1)

    def h0_stack(self, times) -> np.ndarray:
        return np.asarray(self.h0.stack(times), dtype=float)

    def energy(self, t, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.S(t) @ z + self.V(t) @ z + self.h0(t))


class NoiseHamiltonian:
    """Autonomous ``K(q, p) = 1/2 z.S_K z + V_K.z``."""

    def __init__(self, dim: int, G=None, L=None, E=None, V=None, name: str = "custom"):
        d = int(dim)
        self.dim = d
        self.G = np.zeros((d, d)) if G is None else np.asarray(G, dtype=float).reshape(d, d)
        self.L = np.zeros((d, d)) if L is None else np.asarray(L, dtype=float).reshape(d, d)
        self.E = np.zeros((d, d)) if E is None else np.asarray(E, dtype=float).reshape(d, d)
        self.V = np.zeros(2 * d) if V is None else np.asarray(V, dtype=float).reshape(2 * d)
        self.name = name
        _check_symmetric(self.G, "G_K")
        _check_symmetric(self.E, "E_K")

    @classmethod
    def zero(cls, dim: int = 1):
        return cls(dim, name="zero")

    @classmethod
    def position(cls, dim: int = 1, g: float = 1.0):
        """``K = g |q|^2 / 2``: random kicks proportional to position."""
        return cls(dim, G=g * np.eye(dim), name="position")

    @classmethod
    def angular_momentum(cls, dim: int = 3, axis: int = 2, strength: float = 1.0):
        """Rotation generator ``L q . p`` with antisymmetric ``L`` (d = 2 or 3)."""
        if dim == 2:
            L = np.array([[0.0, -1.0], [1.0, 0.0]])
        elif dim == 3:
            i, j = [k for k in range(3) if k != axis]
            L = np.zeros((3, 3))
            L[j, i], L[i, j] = 1.0, -1.0
        else:
            raise ValueError("angular momentum needs dim 2 or 3")
        return cls(dim, L=strength * L, name="angular_momentum")

    @property
    def S(self) -> np.ndarray:
        return np.block([[self.G, self.L.T], [self.L, self.E]])

    @property
    def is_quadratic(self) -> bool:
        return not np.any(self.V)

    def energy(self, z) -> float:
        z = np.asarray(z, dtype=float)
        return float(0.5 * z @ self.S @ z + self.V @ z)


@dataclass(frozen=True)
class BigMatrix:
    """Assembled quadratic-form matrix together with the symplectic matrix."""

    S: np.ndarray
    J: np.ndarray


def assemble_S(H: QuadraticHamiltonian, t: float) -> BigMatrix:
    return BigMatrix(H.S(t), symplectic_J(H.dim))


@dataclass
class HypothesisReport:
    """Outcome of the structural checks needed by the Mehler kernel."""

    mvv1: bool
    mv2: bool
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.mvv1 and self.mv2

    def failures(self) -> list[str]:
        out = []
        if not self.mvv1:
            out.append("mvv1: kinetic block E_H must be invertible and E_K must vanish")
        if not self.mv2:
            out.append("mv2: L_K must vanish unless the driver is Hölder with mu > 1/2")
        return out


def validate_hypotheses(H: QuadraticHamiltonian, K: NoiseHamiltonian, mu: float,
                        times=None, cond_max: float = 1e12) -> HypothesisReport:
    """Check invertibility of ``E_H`` at probe times, ``E_K == 0`` and the ``L_K`` / ``mu`` rule."""
    if times is None:
        times = [0.0] if H.E.is_constant else np.linspace(-1.0, 1.0, 101)
    conds = [np.linalg.cond(H.E(t)) for t in times]
    e_h_ok = bool(np.all(np.isfinite(conds)) and max(conds) < cond_max)
    e_k_zero = not np.any(K.E)
    l_k_zero = not np.any(K.L)
    details = {"E_H_invertible": e_h_ok, "E_K_zero": e_k_zero, "L_K_zero": l_k_zero,
               "max_cond_E_H": float(max(conds)), "mu": float(mu)}
    return HypothesisReport(e_h_ok and e_k_zero, l_k_zero or mu > 0.5, details)
