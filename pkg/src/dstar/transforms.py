"""Fractional-programming helpers shared by the beam and surface optimizers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AuxState:
    """Auxiliaries of the sum-of-log-ratios reformulation, one entry per DL user."""

    gamma: np.ndarray
    lam: np.ndarray
    iteration: int = 0

    def __post_init__(self):
        self.gamma = np.asarray(self.gamma, float)
        self.lam = np.asarray(self.lam, float)
        if not (np.all(np.isfinite(self.gamma)) and np.all(np.isfinite(self.lam))):
            raise ValueError("auxiliaries must be finite")
        if np.any(self.gamma < 0) or np.any(self.lam < 0):
            raise ValueError("auxiliaries must be nonnegative")

    @classmethod
    def from_terms(cls, A, B, iteration: int = 0) -> "AuxState":
        """Fixed-point auxiliaries for signal terms ``A`` and interference-plus-noise ``B``."""
        A = np.asarray(A, float)
        B = np.asarray(B, float)
        return cls(update_gamma(A, B), update_lambda(A, A + B), iteration)


def update_gamma(A, B):
    """Lagrangian-dual fixed point ``gamma = A / B``."""
    B = np.asarray(B, float)
    if np.any(B <= 0):
        raise ValueError("update_gamma: denominator must be positive")
    out = np.asarray(A, float) / B
    return float(out) if out.ndim == 0 else out


def update_lambda(A, C):
    """Dinkelbach ratio ``lambda = A / C`` where ``C = A + B``."""
    C = np.asarray(C, float)
    if np.any(C <= 0):
        raise ValueError("update_lambda: denominator must be positive")
    out = np.asarray(A, float) / C
    return float(out) if out.ndim == 0 else out


def jensen_ul_threshold(r_th: float) -> float:
    """Aggregate SINR target ``2**r_th - 1`` implied by ``log2(1 + sum gamma) >= r_th``."""
    if r_th < 0:
        raise ValueError("rate threshold must be nonnegative")
    return 2.0 ** r_th - 1.0


@dataclass
class QuadraticForm:
    """``value(x) = -x^H Q x + 2 Re(l @ x) + c`` with Hermitian ``Q``.

    With ``Q`` positive semidefinite the form is concave. Forms add and scale
    like the functions they represent.
    """

    Q: np.ndarray
    l: np.ndarray
    c: float = 0.0
    _checked: bool = field(default=False, repr=False, compare=False)

    def __post_init__(self):
        self.Q = np.atleast_2d(np.asarray(self.Q))
        self.l = np.asarray(self.l).reshape(-1)
        self.c = float(np.real(self.c))
        n = self.l.shape[0]
        if self.Q.shape != (n, n):
            raise ValueError(f"Q has shape {self.Q.shape}, expected {(n, n)}")
        if not self._checked:
            scale = max(1.0, float(np.max(np.abs(self.Q)))) if self.Q.size else 1.0
            if not np.allclose(self.Q, self.Q.conj().T, rtol=0, atol=1e-12 * scale):
                raise ValueError("Q is not Hermitian")
        self._checked = True

    @property
    def n(self) -> int:
        return self.l.shape[0]

    @classmethod
    def zero(cls, n: int, dtype=complex) -> "QuadraticForm":
        return cls(np.zeros((n, n), dtype), np.zeros(n, dtype), 0.0, _checked=True)

    def value(self, x) -> float:
        x = np.asarray(x)
        return float(np.real(-np.vdot(x, self.Q @ x) + 2 * np.real(self.l @ x) + self.c))

    def gradient(self, x) -> np.ndarray:
        """Row ``g`` with ``value(x + dx) ~ value(x) + 2 Re(g @ dx)``."""
        x = np.asarray(x)
        return self.l - (self.Q @ x).conj()

    def __add__(self, other: "QuadraticForm") -> "QuadraticForm":
        return QuadraticForm(self.Q + other.Q, self.l + other.l, self.c + other.c, _checked=True)

    def __mul__(self, s: float) -> "QuadraticForm":
        return QuadraticForm(self.Q * s, self.l * s, self.c * s, _checked=True)

    __rmul__ = __mul__

    def __neg__(self) -> "QuadraticForm":
        return self * -1.0

    def __sub__(self, other: "QuadraticForm") -> "QuadraticForm":
        return self + (-other)

    def substitute(self, T: np.ndarray, x0=None) -> "QuadraticForm":
        """Form in ``y`` obtained from ``x = T y + x0``."""
        T = np.asarray(T)
        x0 = np.zeros(self.n, T.dtype) if x0 is None else np.asarray(x0)
        Qy = T.conj().T @ self.Q @ T
        ly = (self.l - (self.Q @ x0).conj()) @ T
        return QuadraticForm(0.5 * (Qy + Qy.conj().T), ly, self.value(x0), _checked=True)

    def embed(self, n: int, idx) -> "QuadraticForm":
        """Same function written over a larger vector whose entries ``idx`` are ours."""
        Q = np.zeros((n, n), self.Q.dtype)
        l = np.zeros(n, self.l.dtype)
        idx = np.asarray(idx)
        Q[np.ix_(idx, idx)] = self.Q
        l[idx] = self.l
        return QuadraticForm(Q, l, self.c, _checked=True)


def sca_linearize(q: QuadraticForm, x0) -> QuadraticForm:
    """First-order Taylor expansion of ``q`` at ``x0``.

    For a convex ``q`` (``Q`` negative semidefinite) this is a global
    minorant that touches ``q`` at ``x0``.
    """
    x0 = np.asarray(x0)
    g = q.gradient(x0)
    c = q.value(x0) - 2 * np.real(g @ x0)
    return QuadraticForm(np.zeros_like(q.Q), g, c, _checked=True)


def abs2_form(a, b=0.0) -> QuadraticForm:
    """``|a @ x + b|^2`` written as a (convex) quadratic form."""
    a = np.asarray(a).reshape(-1)
    b = complex(b)
    return QuadraticForm(-np.outer(a.conj(), a), np.conj(b) * a, abs(b) ** 2, _checked=True)


def norm2_form(A, b=None) -> QuadraticForm:
    """``||A x + b||^2`` written as a (convex) quadratic form."""
    A = np.atleast_2d(np.asarray(A))
    b = np.zeros(A.shape[0], complex) if b is None else np.asarray(b).reshape(-1)
    G = A.conj().T @ A
    return QuadraticForm(-0.5 * (G + G.conj().T), b.conj() @ A, float(np.real(np.vdot(b, b))), _checked=True)
