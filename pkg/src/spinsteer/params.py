"""Simulation parameter container.

Time is measured in the units fixed by the dephasing constant A: all
rates (G, g, A, B^2) are plain numbers in that system, so t is
dimensionless.  The probe geometry couples the measurement strength to
the dephasing as B = sqrt(A); the container enforces that relation
unless decouple_b is set, which is only meant for algebraic oracle
tests (free rotation needs A = B = 0 while keeping the generic code
path).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from .errors import ConfigError

_SEED_MAX = 2 ** 64


@dataclass(frozen=True)
class SimParams:
    """Physical and numerical parameters of one simulation run.

    Parameters
    ----------
    n_atoms : int
        Number N of two-level atoms; the symmetric subspace has
        dimension N + 1.
    G : float
        Relative energy shift between the two components, i.e. the
        coefficient of sz in the drift Hamiltonian.
    g : float
        Coefficient of the total-number term g*N in the Hamiltonian.
        A multiple of the identity on the symmetric subspace, so it is
        dynamically inert; kept for completeness.
    A : float
        Measurement-induced dephasing rate (coefficient of the
        dissipator).
    B : float
        Measurement strength (coefficient of the innovation term).
        Defaults to sqrt(A) and must satisfy B^2 = A to 1e-12 unless
        decouple_b is set.
    eta : float
        Detection efficiency in (0, 1].
    dt : float
        Integrator time step.
    t_final : float
        Run length; must be an integer number of steps within 1e-9
        relative tolerance.
    seed : int
        Master seed (64-bit unsigned).  Trajectory i draws its Wiener
        increments from a generator keyed by (seed, i), so ensembles
        are reproducible and extending an ensemble leaves existing
        trajectories unchanged.
    decouple_b : bool
        Allow B^2 != A.  Oracle configurations only.
    """

    n_atoms: int
    G: float
    g: float = 0.0
    A: float = 0.04
    B: float = field(default=-1.0)
    eta: float = 1.0
    dt: float = 0.01
    t_final: float = 100.0
    seed: int = 0
    decouple_b: bool = False

    def __post_init__(self) -> None:
        if not isinstance(self.n_atoms, int) or isinstance(self.n_atoms, bool):
            raise ConfigError("n_atoms must be an integer")
        if self.n_atoms < 1:
            raise ConfigError(f"n_atoms must be >= 1, got {self.n_atoms}")
        if self.A < 0:
            raise ConfigError(f"A must be nonnegative, got {self.A}")
        if self.B == -1.0:
            object.__setattr__(self, "B", math.sqrt(self.A))
        if self.B < 0:
            raise ConfigError(f"B must be nonnegative, got {self.B}")
        if not self.decouple_b and abs(self.B * self.B - self.A) > 1e-12:
            raise ConfigError(
                f"B^2 = {self.B * self.B!r} does not match A = {self.A!r}; "
                "set decouple_b for oracle configurations that break B = sqrt(A)"
            )
        if not 0.0 < self.eta <= 1.0:
            raise ConfigError(f"eta must lie in (0, 1], got {self.eta}")
        if self.dt <= 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if self.t_final <= 0:
            raise ConfigError(f"t_final must be positive, got {self.t_final}")
        if self.t_final < self.dt:
            raise ConfigError("t_final is shorter than a single step")
        n = round(self.t_final / self.dt)
        if abs(n * self.dt - self.t_final) > 1e-9 * max(1.0, abs(self.t_final)):
            raise ConfigError(
                f"t_final = {self.t_final} is not an integer multiple of dt = {self.dt}"
            )
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise ConfigError("seed must be an integer")
        if not 0 <= self.seed < _SEED_MAX:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")

    @property
    def n_steps(self) -> int:
        """Number of integrator steps in the run."""
        return round(self.t_final / self.dt)

    @property
    def tau0(self) -> float:
        """Reference timescale 1/G of the drift rotation (inf when G = 0)."""
        return 1.0 / self.G if self.G != 0.0 else math.inf
