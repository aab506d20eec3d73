"""Trajectory data containers and reproducible noise streams.

Every stochastic quantity in the package derives from a per-trajectory
generator keyed by (master seed, trajectory index), so a run is
reproducible bit for bit from its parameters alone, ensembles can be
extended without disturbing existing members, and the two engines can
be driven by identical innovation sequences for closure validation.

Recorded moment series use one fixed column layout (the normalized
first moments, the three diagonal second moments, then the real and
imaginary parts of the cross moments); COLUMNS gives the order.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .params import SimParams

COLUMNS = (
    "sx", "sy", "sz", "sx2", "sy2", "sz2",
    "re_xz", "im_xz", "re_yz", "im_yz", "re_xy", "im_xy",
)
N_COLUMNS = len(COLUMNS)


def generator_for(seed: int, trajectory_index: int = 0) -> np.random.Generator:
    """Generator for one trajectory, keyed by (seed, trajectory index)."""
    return np.random.default_rng(
        np.random.SeedSequence(entropy=seed, spawn_key=(trajectory_index,))
    )


@dataclass(frozen=True)
class InnovationSequence:
    """Wiener increments driving one trajectory.

    increments[k] is the Normal(0, dt) innovation of integrator step k.
    The provenance fields record the generator key when the sequence
    was drawn internally; they are None for externally supplied
    records (e.g. increments recovered from a measurement signal).
    """

    increments: np.ndarray
    dt: float
    master_seed: Optional[int] = None
    trajectory_index: Optional[int] = None

    def __post_init__(self) -> None:
        inc = np.ascontiguousarray(self.increments, dtype=float)
        inc.setflags(write=False)
        object.__setattr__(self, "increments", inc)

    @classmethod
    def generate(cls, params: SimParams, trajectory_index: int = 0) -> "InnovationSequence":
        rng = generator_for(params.seed, trajectory_index)
        inc = rng.standard_normal(params.n_steps) * np.sqrt(params.dt)
        return cls(increments=inc, dt=params.dt,
                   master_seed=params.seed, trajectory_index=trajectory_index)

    def __len__(self) -> int:
        return len(self.increments)


def resolve_stride(params: SimParams, stride: int) -> int:
    """Validate that the recording stride divides the step count."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    if params.n_steps % stride != 0:
        raise ValueError(
            f"stride {stride} does not divide the {params.n_steps} integrator steps"
        )
    return stride


def sample_times(params: SimParams, stride: int) -> np.ndarray:
    """Recording instants 0, stride*dt, ..., t_final."""
    n_samples = params.n_steps // stride + 1
    return np.arange(n_samples) * (params.dt * stride)


class _SeriesView:
    """Named read access to the shared moment-column layout."""

    series: np.ndarray

    def _col(self, name: str) -> np.ndarray:
        return self.series[..., COLUMNS.index(name)]

    @property
    def sx(self) -> np.ndarray:
        return self._col("sx")

    @property
    def sy(self) -> np.ndarray:
        return self._col("sy")

    @property
    def sz(self) -> np.ndarray:
        return self._col("sz")

    @property
    def sx2(self) -> np.ndarray:
        return self._col("sx2")

    @property
    def sy2(self) -> np.ndarray:
        return self._col("sy2")

    @property
    def sz2(self) -> np.ndarray:
        return self._col("sz2")

    @property
    def xz(self) -> np.ndarray:
        return self._col("re_xz") + 1j * self._col("im_xz")

    @property
    def yz(self) -> np.ndarray:
        return self._col("re_yz") + 1j * self._col("im_yz")

    @property
    def xy(self) -> np.ndarray:
        return self._col("re_xy") + 1j * self._col("im_xy")

    @property
    def first_moments(self) -> np.ndarray:
        return self.series[..., 0:3]


@dataclass(frozen=True)
class TrajectoryRecord(_SeriesView):
    """Sampled output of a single conditional trajectory.

    series holds the moment columns at each recording instant
    (times[i] = i * stride * dt); controls the applied field, variance
    the collective variance N^2(<sz^2> - <sz>^2), and lyapunov the
    distance to the target when one was set.  purity is present for
    density-matrix runs only.  innovations and sz_path cover every
    integrator step (not just samples) so the homodyne record can be
    reconstructed exactly; innovations[k] pairs with the step from
    times k*dt to (k+1)*dt and sz_path[k] is <s^z> entering that step.
    """

    times: np.ndarray
    series: np.ndarray
    controls: np.ndarray
    variance: np.ndarray
    innovations: np.ndarray
    sz_path: np.ndarray
    lyapunov: Optional[np.ndarray]
    purity: Optional[np.ndarray]
    engine: str
    params: SimParams
    law: object
    target: object
    stride: int
    feedback_delay_steps: int
    trajectory_index: int
    final_state: object

    def moments_at(self, i: int):
        """MomentState at sample index i."""
        from .moments import unpack_moments

        return unpack_moments(self.series[i])

    def __len__(self) -> int:
        return len(self.times)


@dataclass(frozen=True)
class EnsembleResult(_SeriesView):
    """Sampled output of an ensemble of trajectories.

    series is indexed (trajectory, sample, column).  diverged[i] holds
    the integrator step at which trajectory i crossed the divergence
    guard and was frozen (-1 for trajectories that ran clean); frozen
    trajectories carry their last admissible state forward, which
    keeps ensemble means well defined while flagging the event.
    Per-step innovation and control histories are not retained at
    ensemble level.
    """

    times: np.ndarray
    series: np.ndarray
    variance: np.ndarray
    purity: Optional[np.ndarray]
    diverged: np.ndarray
    trajectory_indices: np.ndarray
    engine: str
    params: SimParams
    law: object
    stride: int
    feedback_delay_steps: int
    terminal_rho: Optional[np.ndarray] = None

    @property
    def n_trajectories(self) -> int:
        return self.series.shape[0]

    @property
    def n_diverged(self) -> int:
        return int((self.diverged >= 0).sum())

    def mean_series(self) -> np.ndarray:
        """Ensemble mean of every moment column, shape (samples, columns)."""
        return self.series.mean(axis=0)

    def __len__(self) -> int:
        return len(self.times)
