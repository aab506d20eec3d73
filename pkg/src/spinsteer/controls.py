"""Linear feedback laws and Lyapunov bookkeeping.

A control law maps the current normalized first moments onto a control
field u = (u_x, u_y, u_z) through

    u_k = xi_k + sum_l beta_kl <s^l>,

which enters the Hamiltonian as u_x sx + u_y sy + u_z sz.  The offsets
xi and the gain matrix beta are constant; an optional saturation level
clips each component symmetrically.  The quadratic distance
V = |<s> - s_f|^2 / 2 to a target Bloch point serves as the Lyapunov
functional for gain selection and steady-state assessment.

For a single nonzero gain and no offsets the sign of the stabilized
axis follows a fixed sign table: a gain from <s^z> into u_x of sign
+/- drives <s^y> to sign -/+; the same gain into u_y drives <s^x> to
sign +/-; a gain from <s^y> into u_z drives <s^z> to sign -/+.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError

AXES = "xyz"

# Recognized scalar entry names for sweeps and configuration files:
# xi_x .. xi_z and beta_xy meaning the gain from <s^y> into u_x.
ENTRY_NAMES = tuple(f"xi_{a}" for a in AXES) + tuple(
    f"beta_{a}{b}" for a in AXES for b in AXES
)


@dataclass(frozen=True)
class ControlLaw:
    """Affine feedback law u = xi + beta . <s>, optionally saturated.

    xi is a 3-vector of constant offsets, beta the 3x3 gain matrix
    (row = controlled field component, column = measured moment), and
    saturation, when set, clips each u_k to [-saturation, +saturation].
    """

    xi: np.ndarray = field(default_factory=lambda: np.zeros(3))
    beta: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    saturation: float | None = None

    def __post_init__(self) -> None:
        xi = np.asarray(self.xi, dtype=float)
        beta = np.asarray(self.beta, dtype=float)
        if xi.shape != (3,):
            raise ConfigError(f"xi must be a 3-vector, got shape {xi.shape}")
        if beta.shape != (3, 3):
            raise ConfigError(f"beta must be a 3x3 matrix, got shape {beta.shape}")
        if not (np.isfinite(xi).all() and np.isfinite(beta).all()):
            raise ConfigError("control law entries must be finite")
        if self.saturation is not None and self.saturation <= 0:
            raise ConfigError(f"saturation must be positive, got {self.saturation}")
        xi.setflags(write=False)
        beta.setflags(write=False)
        object.__setattr__(self, "xi", xi)
        object.__setattr__(self, "beta", beta)

    @classmethod
    def from_entries(cls, saturation: float | None = None, **entries: float) -> "ControlLaw":
        """Build a law from named scalar entries, e.g. beta_xz=-14.5, xi_y=0.01."""
        xi = np.zeros(3)
        beta = np.zeros((3, 3))
        for name, value in entries.items():
            i, j = _entry_index(name)
            if j is None:
                xi[i] = value
            else:
                beta[i, j] = value
        return cls(xi=xi, beta=beta, saturation=saturation)

    def entry(self, name: str) -> float:
        i, j = _entry_index(name)
        return float(self.xi[i]) if j is None else float(self.beta[i, j])

    def with_entry(self, name: str, value: float) -> "ControlLaw":
        """Copy of this law with one named entry replaced."""
        i, j = _entry_index(name)
        xi = self.xi.copy()
        beta = self.beta.copy()
        if j is None:
            xi[i] = value
        else:
            beta[i, j] = value
        return ControlLaw(xi=xi, beta=beta, saturation=self.saturation)

    def is_zero(self) -> bool:
        return not (self.xi.any() or self.beta.any())


def _entry_index(name: str) -> tuple[int, int | None]:
    if name not in ENTRY_NAMES:
        raise ConfigError(f"unknown control-law entry {name!r}; expected one of {ENTRY_NAMES}")
    if name.startswith("xi_"):
        return AXES.index(name[3]), None
    return AXES.index(name[5]), AXES.index(name[6])


def control_signal(law: ControlLaw | None, moments) -> np.ndarray:
    """Evaluate u = xi + beta . <s> at the given moment state.

    Accepts a MomentState or any object exposing sx, sy, sz.  Returns
    the clipped 3-vector when the law carries a saturation level, and
    zeros for law = None.
    """
    if law is None:
        return np.zeros(3)
    s = np.array([moments.sx, moments.sy, moments.sz], dtype=float)
    u = law.xi + law.beta @ s
    if law.saturation is not None:
        np.clip(u, -law.saturation, law.saturation, out=u)
    return u


@dataclass(frozen=True)
class TargetSpec:
    """Target Bloch point s_f with |s_f| <= 1."""

    bloch: np.ndarray

    def __post_init__(self) -> None:
        b = np.asarray(self.bloch, dtype=float)
        if b.shape != (3,):
            raise ConfigError(f"target must be a 3-vector, got shape {b.shape}")
        norm = float(np.linalg.norm(b))
        if norm > 1.0 + 1e-12:
            raise ConfigError(f"target Bloch vector has length {norm} > 1")
        b.setflags(write=False)
        object.__setattr__(self, "bloch", b)


def lyapunov_distance(moments, target: TargetSpec) -> float:
    """V = |<s> - s_f|^2 / 2; nonnegative, zero exactly on target."""
    d = np.array([moments.sx, moments.sy, moments.sz], dtype=float) - target.bloch
    return 0.5 * float(d @ d)


def lyapunov_density(rho: np.ndarray, rho_target: np.ndarray) -> float:
    """Density-matrix distance Tr[(rho - rho_f)^2] / 2 (diagnostic)."""
    d = np.asarray(rho) - np.asarray(rho_target)
    return 0.5 * float(np.einsum("ij,ji->", d, d).real)


@dataclass(frozen=True)
class SteadyStateEstimate:
    """Tail statistics of a trajectory after transient removal.

    mean and std are per-axis statistics of the first moments over the
    averaging window; transient_end is the detected settling time (the
    start of the final quarter when detection fell through), detected
    records whether the settling test itself succeeded.
    """

    mean: np.ndarray
    std: np.ndarray
    transient_end: float
    window: float
    detected: bool
    n_samples: int


def steady_state_estimate(traj, window: float = 10.0) -> SteadyStateEstimate:
    """Steady-state mean and spread of the first moments of a run.

    The settling time is found by sliding a window of the given
    duration over the Lyapunov distance (to the run's target when one
    was set, else to the origin): the transient is declared over at the
    first position where the next window's mean moves by less than two
    standard errors of the current one.  Statistics are then taken over
    everything after the settling time; when the test never fires the
    final quarter of the run is used and detected is False.

    Raises ValueError when the trajectory is shorter than two windows.
    """
    times = np.asarray(traj.times, dtype=float)
    first = np.stack([np.asarray(traj.sx), np.asarray(traj.sy), np.asarray(traj.sz)], axis=1)
    if traj.lyapunov is not None:
        dist = np.asarray(traj.lyapunov, dtype=float)
    else:
        dist = 0.5 * np.einsum("ij,ij->i", first, first)
    return steady_state_from_series(times, first, dist, window)


def steady_state_from_series(times: np.ndarray, first: np.ndarray, dist: np.ndarray,
                             window: float = 10.0) -> SteadyStateEstimate:
    """Series-level implementation of steady_state_estimate."""
    if window <= 0:
        raise ValueError(f"window must be positive, got {window}")
    n = len(times)
    if n < 4:
        raise ValueError("trajectory too short for steady-state estimation")
    sample_dt = times[-1] - times[-2] if n > 1 else 0.0
    w = max(2, int(round(window / sample_dt))) if sample_dt > 0 else n // 4
    if 2 * w > n:
        raise ValueError(
            f"window of {window} time units spans {w} samples; trajectory has only {n}"
        )
    settled = None
    for i in range(0, n - 2 * w + 1):
        a = dist[i:i + w]
        b = dist[i + w:i + 2 * w]
        se = a.std(ddof=1) / np.sqrt(w) if w > 1 else 0.0
        if abs(b.mean() - a.mean()) <= 2.0 * se:
            settled = i
            break
    if settled is None:
        start = 3 * n // 4
        detected = False
    else:
        start = settled
        detected = True
    tail = first[start:]
    mean = tail.mean(axis=0)
    std = tail.std(axis=0, ddof=1) if len(tail) > 1 else np.zeros(3)
    return SteadyStateEstimate(
        mean=mean, std=std, transient_end=float(times[start]),
        window=float(window), detected=detected, n_samples=len(tail),
    )


def steering_sign_expectation(law: ControlLaw) -> tuple[int, int, int] | None:
    """Predicted steady-state sign pattern of the mean spin for a single-gain law.

    Covers exactly the three cross-axis proportional patterns: one
    nonzero gain among beta_xz, beta_yz, beta_zy, no offsets, no other
    gains.  Returns the per-axis sign tuple (entries in {-1, 0, +1}),
    or None for any law outside those patterns.
    """
    if law.xi.any():
        return None
    nz = [(i, j) for i in range(3) for j in range(3) if law.beta[i, j] != 0.0]
    if len(nz) != 1:
        return None
    (i, j) = nz[0]
    sign = int(np.sign(law.beta[i, j]))
    if (i, j) == (0, 2):      # u_x from <s^z>: drives <s^y> to the opposite sign
        return (0, -sign, 0)
    if (i, j) == (1, 2):      # u_y from <s^z>: drives <s^x> to the same sign
        return (sign, 0, 0)
    if (i, j) == (2, 1):      # u_z from <s^y>: drives <s^z> to the opposite sign
        return (0, 0, -sign)
    return None
