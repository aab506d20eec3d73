"""Dicke-basis operators and states for a collective two-component spin.

The symmetric subspace of N two-level atoms is spanned by the Dicke
states |k>, k = number of atoms in component 2, so every operator here
is a dense (N+1) x (N+1) matrix.  The collective spin uses the
Schwinger convention S^x = b1'b2 + b2'b1 (and cyclic), which carries a
factor 2 relative to angular momentum: [s^j, s^k] = 2i e_jkl s^l and
(s^x)^2 + (s^y)^2 + (s^z)^2 = N(N+2) I.  Normalized moments divide
first moments by N and second moments by N^2.
"""

import functools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .moments import MomentState


def _readonly(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class SpinOperators:
    """Dense collective spin matrices plus their banded building blocks.

    sz_diag holds the eigenvalues N - 2k of sz; couplings holds the
    off-diagonal amplitudes a_k = sqrt((k+1)(N-k)) shared by sx and sy
    (sx[k, k+1] = a_k, sy[k, k+1] = -i a_k).
    """

    n_atoms: int
    sx: np.ndarray
    sy: np.ndarray
    sz: np.ndarray
    sz_diag: np.ndarray
    couplings: np.ndarray

    @property
    def dim(self) -> int:
        return self.n_atoms + 1

    @property
    def number_op(self) -> np.ndarray:
        return float(self.n_atoms) * np.eye(self.dim)

    def casimir(self) -> np.ndarray:
        return self.sx @ self.sx + self.sy @ self.sy + self.sz @ self.sz


@functools.lru_cache(maxsize=32)
def build_spin_operators(n_atoms: int) -> SpinOperators:
    """Collective spin matrices for N atoms in the Dicke basis."""
    if not isinstance(n_atoms, (int, np.integer)) or isinstance(n_atoms, bool):
        raise TypeError(f"n_atoms must be an integer, got {n_atoms!r}")
    if n_atoms < 1:
        raise ValueError(f"n_atoms must be >= 1, got {n_atoms}")
    n = int(n_atoms)
    k = np.arange(n + 1, dtype=float)
    lam = n - 2.0 * k
    a = np.sqrt((k[:-1] + 1.0) * (n - k[:-1]))
    sx = np.zeros((n + 1, n + 1), dtype=complex)
    sy = np.zeros((n + 1, n + 1), dtype=complex)
    idx = np.arange(n)
    sx[idx, idx + 1] = a
    sx[idx + 1, idx] = a
    sy[idx, idx + 1] = -1j * a
    sy[idx + 1, idx] = 1j * a
    sz = np.diag(lam.astype(complex))
    return SpinOperators(n_atoms=n, sx=_readonly(sx), sy=_readonly(sy),
                         sz=_readonly(sz), sz_diag=_readonly(lam),
                         couplings=_readonly(a))


@dataclass(frozen=True)
class PureState:
    """A normalized state vector in the Dicke basis."""

    n_atoms: int
    amplitudes: np.ndarray

    def __post_init__(self) -> None:
        amp = np.ascontiguousarray(self.amplitudes, dtype=complex)
        if amp.shape != (self.n_atoms + 1,):
            raise ValueError(
                f"amplitudes must have length {self.n_atoms + 1}, "
                f"got shape {amp.shape}")
        norm = math.sqrt(float(np.real(np.vdot(amp, amp))))
        if abs(norm - 1.0) > 1e-12:
            raise ValueError(f"state norm {norm!r} is not 1 within 1e-12")
        object.__setattr__(self, "amplitudes", _readonly(amp))

    def probabilities(self) -> np.ndarray:
        """Born weights over sz eigenvalues N - 2k, indexed by k."""
        return np.abs(self.amplitudes) ** 2


def dicke_state(n_atoms: int, k: int) -> PureState:
    """The sz eigenstate with k atoms in component 2 (eigenvalue N - 2k)."""
    if not 0 <= k <= n_atoms:
        raise ValueError(f"k must lie in [0, {n_atoms}], got {k}")
    amp = np.zeros(n_atoms + 1, dtype=complex)
    amp[k] = 1.0
    return PureState(n_atoms=n_atoms, amplitudes=amp)


def spin_coherent_state(n_atoms: int, polar_angle: float,
                        azimuth: float = 0.0) -> PureState:
    """Product state with every atom along (theta, phi) on the Bloch sphere.

    Amplitudes are binomial: C(N,k)^(1/2) cos(theta/2)^(N-k)
    (e^(i phi) sin(theta/2))^k, evaluated in log space so large N stays
    finite.
    """
    if n_atoms < 1:
        raise ValueError(f"n_atoms must be >= 1, got {n_atoms}")
    n = int(n_atoms)
    c = math.cos(polar_angle / 2.0)
    s = math.sin(polar_angle / 2.0)
    k = np.arange(n + 1, dtype=float)
    log_binom = 0.5 * (math.lgamma(n + 1)
                       - np.array([math.lgamma(v + 1) + math.lgamma(n - v + 1)
                                   for v in k]))
    mag = np.zeros(n + 1)
    live = np.ones(n + 1, dtype=bool)
    if c == 0.0:
        live &= (k == n)
    if s == 0.0:
        live &= (k == 0)
    logs = log_binom[live]
    if c != 0.0:
        logs = logs + (n - k[live]) * math.log(abs(c))
    if s != 0.0:
        logs = logs + k[live] * math.log(abs(s))
    mag[live] = np.exp(logs)
    signs = np.where(np.sign(c) ** (n - k) * np.sign(s) ** k < 0, -1.0, 1.0)
    amp = mag * signs * np.exp(1j * azimuth * k)
    amp = amp / math.sqrt(float(np.sum(mag * mag)))
    return PureState(n_atoms=n, amplitudes=amp)


@dataclass(frozen=True)
class DensityMatrix:
    """A (possibly mixed) state as a dense Hermitian matrix, trace 1."""

    n_atoms: int
    matrix: np.ndarray

    def __post_init__(self) -> None:
        m = np.ascontiguousarray(self.matrix, dtype=complex)
        dim = self.n_atoms + 1
        if m.shape != (dim, dim):
            raise ValueError(
                f"matrix must be {dim}x{dim} for n_atoms={self.n_atoms}, "
                f"got shape {m.shape}")
        object.__setattr__(self, "matrix", _readonly(m))

    @classmethod
    def from_pure(cls, state: PureState) -> "DensityMatrix":
        amp = state.amplitudes
        return cls(n_atoms=state.n_atoms, matrix=np.outer(amp, amp.conj()))

    @classmethod
    def maximally_mixed(cls, n_atoms: int) -> "DensityMatrix":
        dim = n_atoms + 1
        return cls(n_atoms=n_atoms, matrix=np.eye(dim, dtype=complex) / dim)

    def populations(self) -> np.ndarray:
        """Diagonal weights over Dicke states, indexed by k."""
        return np.real(np.diagonal(self.matrix)).copy()


def expectation(state: DensityMatrix, op: np.ndarray) -> complex:
    """Tr(op rho); real within roundoff when op is Hermitian."""
    rho = state.matrix
    if op.shape != rho.shape:
        raise ValueError(f"operator shape {op.shape} != state shape {rho.shape}")
    return complex(np.einsum("km,mk->", op, rho))


def purity(state: DensityMatrix) -> float:
    """Tr(rho^2), computed as the squared Frobenius norm."""
    rho = state.matrix
    return float(np.real(np.einsum("km,mk->", rho, rho)))


def moments_from_density(state: DensityMatrix, ops: SpinOperators) -> MomentState:
    """The nine normalized moments of a density matrix.

    Cross moments use the operator order written in their names
    (xz = <s^x s^z> etc.); the reversed orders are their conjugates.
    """
    rho = state.matrix
    n = float(ops.n_atoms)
    sx, sy, sz = ops.sx, ops.sy, ops.sz

    def ex(op):
        return complex(np.einsum("km,mk->", op, rho))

    return MomentState(
        sx=ex(sx).real / n, sy=ex(sy).real / n, sz=ex(sz).real / n,
        sx2=ex(sx @ sx).real / n ** 2,
        sy2=ex(sy @ sy).real / n ** 2,
        sz2=ex(sz @ sz).real / n ** 2,
        xz=ex(sx @ sz) / n ** 2,
        yz=ex(sy @ sz) / n ** 2,
        xy=ex(sx @ sy) / n ** 2)


def variance_sz(state: DensityMatrix, ops: SpinOperators) -> float:
    """Unnormalized conditional variance <(S^z)^2> - <S^z>^2.

    Tiny negative values from roundoff (>= -1e-9) are clipped to 0;
    anything more negative is returned as measured so validation can
    flag the state.
    """
    pops = state.populations()
    lam = ops.sz_diag
    mean = float(lam @ pops)
    second = float((lam * lam) @ pops)
    v = second - mean * mean
    if -1e-9 <= v < 0.0:
        return 0.0
    return v


@dataclass(frozen=True)
class ValidationReport:
    """Deviations of a density matrix from the exact state conditions."""

    hermiticity_deviation: float
    trace_deviation: float
    min_eigenvalue: float
    hermitian_ok: bool
    trace_ok: bool
    psd_ok: bool

    @property
    def ok(self) -> bool:
        return self.hermitian_ok and self.trace_ok and self.psd_ok


def validate_density(state: DensityMatrix, hermitian_tol: float = 1e-12,
                     trace_tol: float = 1e-10,
                     psd_tol: float = 1e-6) -> ValidationReport:
    """Report Hermiticity, trace, and positivity deviations with flags."""
    rho = state.matrix
    herm = float(np.max(np.abs(rho - rho.conj().T))) if rho.size else 0.0
    trace = abs(float(np.real(np.trace(rho))) - 1.0) \
        + abs(float(np.imag(np.trace(rho))))
    eigs = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))
    min_eig = float(eigs[0])
    return ValidationReport(
        hermiticity_deviation=herm, trace_deviation=trace,
        min_eigenvalue=min_eig,
        hermitian_ok=herm <= hermitian_tol,
        trace_ok=trace <= trace_tol,
        psd_ok=min_eig >= -psd_tol)
