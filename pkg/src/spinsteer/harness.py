"""Batch experiments on top of the two engines.

Four workflows: gain sweeps (steady-state Bloch position vs a single
control-law entry), black-box gain tuning toward a Bloch target, moment
engine vs density-matrix engine cross-validation on matched noise, and
collapse statistics of the measurement-only filter against the Born
rule.  Everything here is a deterministic function of (master seed,
spec, params): trajectories are always indexed 0..n-1 so that repeated
calls and different grid points reuse identical innovation sequences.
"""

from dataclasses import dataclass, replace
from typing import Optional, Sequence, Union
import math
import warnings

import numpy as np

from .controls import (ControlLaw, TargetSpec, ENTRY_NAMES,
                       steady_state_from_series, SteadyStateEstimate)
from .dicke import PureState, spin_coherent_state
from .errors import CollapseError, ConfigError, DivergenceError
from .moments import ensemble_moments
from .params import SimParams
from .records import EnsembleResult, generator_for, resolve_stride
from .sme import ensemble_sme

SME_ATOM_LIMIT = 100
COLLAPSE_THRESHOLD = 0.99
UNCOLLAPSED_LIMIT = 0.05


def auto_stride(params: SimParams, max_samples: int = 1000) -> int:
    """Largest convenient recording stride with about max_samples samples.

    Returns the biggest stride <= n_steps/max_samples that divides the
    step count (falling back to 1), so downstream steady-state windows
    see a uniform grid regardless of dt.
    """
    n = params.n_steps
    s = max(1, n // max_samples)
    while s > 1 and n % s != 0:
        s -= 1
    return s


def _run_ensemble(engine: str, params: SimParams, n_traj: int,
                  law: Optional[ControlLaw], stride: int,
                  on_divergence: str) -> EnsembleResult:
    if engine == "moment":
        return ensemble_moments(params, n_traj, law, stride=stride,
                                on_divergence=on_divergence)
    if engine == "sme":
        if params.n_atoms > SME_ATOM_LIMIT:
            raise ConfigError(
                f"density-matrix engine limited to N <= {SME_ATOM_LIMIT}, "
                f"got {params.n_atoms}")
        return ensemble_sme(params, n_traj, law, stride=stride,
                            on_divergence=on_divergence)
    raise ConfigError(f"unknown engine {engine!r}")


def _steady_estimates(ens: EnsembleResult, window: float) -> list[SteadyStateEstimate]:
    """Per-trajectory steady-state estimates over an ensemble's samples."""
    out = []
    for m in range(ens.series.shape[0]):
        first = ens.series[m, :, 0:3].astype(float)
        dist = 0.5 * np.einsum("ij,ij->i", first, first)
        out.append(steady_state_from_series(ens.times, first, dist, window=window))
    return out


# ---------------------------------------------------------------------------
# gain sweeps


@dataclass(frozen=True)
class SweepSpec:
    """One swept control-law entry over a gain grid.

    entry names the swept coefficient (xi_* or beta_**); law_template
    supplies the fixed remainder of the law (default all zero).
    """

    entry: str
    grid: np.ndarray
    repetitions: int = 10
    engine: str = "moment"
    law_template: Optional[ControlLaw] = None

    def __post_init__(self):
        if self.entry not in ENTRY_NAMES:
            raise ConfigError(f"unknown control-law entry {self.entry!r}")
        grid = np.asarray(self.grid, dtype=float)
        if grid.ndim != 1 or grid.size == 0:
            raise ConfigError("sweep grid must be a nonempty 1-d sequence")
        if grid.size > 1 and not (np.all(np.diff(grid) > 0) or np.all(np.diff(grid) < 0)):
            raise ConfigError("sweep grid must be strictly monotone")
        object.__setattr__(self, "grid", grid)
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.engine not in ("moment", "sme"):
            raise ConfigError(f"unknown engine {self.engine!r}")

    def law_at(self, gain: float) -> ControlLaw:
        base = self.law_template if self.law_template is not None else ControlLaw()
        return base.with_entry(self.entry, float(gain))


@dataclass(frozen=True)
class SweepResult:
    """Steady-state Bloch statistics per grid point.

    mean and sigma are (points, 3) arrays: across-repetition mean and
    sample standard deviation of the per-trajectory steady-state first
    moments, taken over the repetitions that finished inside the guard
    (n_used of them).  n_diverged counts the ones that hit the moment
    guard (or the trace guard for the density-matrix engine); a point
    with no clean repetitions reports NaN statistics rather than the
    frozen guard values.
    """

    gains: np.ndarray
    mean: np.ndarray
    sigma: np.ndarray
    n_diverged: np.ndarray
    n_used: np.ndarray
    repetitions: int
    engine: str
    entry: str

    def __len__(self) -> int:
        return len(self.gains)


def run_sweep(spec: SweepSpec, params: SimParams, *,
              stride: Optional[int] = None, window: float = 10.0,
              on_divergence: str = "stop") -> SweepResult:
    """Steady-state Bloch mean and spread at each gain on the grid.

    Each grid point runs spec.repetitions trajectories with trajectory
    indices 0..reps-1 under the master seed, so the same innovations
    drive every gain (paired comparisons across the grid).  The default
    divergence policy drops runaway trajectories from the statistics
    and reports their count per point; on_divergence="raise" instead
    propagates the first divergence as an error naming the offending
    gain.
    """
    stride = auto_stride(params) if stride is None else resolve_stride(params, stride)
    gains = spec.grid
    mean = np.zeros((len(gains), 3))
    sigma = np.zeros((len(gains), 3))
    ndiv = np.zeros(len(gains), dtype=np.int64)
    nused = np.zeros(len(gains), dtype=np.int64)
    for i, gain in enumerate(gains):
        law = spec.law_at(gain)
        try:
            ens = _run_ensemble(spec.engine, params, spec.repetitions,
                                None if law.is_zero() else law, stride,
                                on_divergence)
        except DivergenceError as exc:
            raise DivergenceError(
                f"sweep point {spec.entry}={gain:g} diverged: {exc}",
                step=exc.step, time=exc.time, trajectory=exc.trajectory,
            ) from exc
        ests = _steady_estimates(ens, window)
        clean = ens.diverged < 0
        vals = np.array([e.mean for e, ok in zip(ests, clean) if ok])
        if len(vals) == 0:
            mean[i] = np.nan
            sigma[i] = np.nan
        else:
            mean[i] = vals.mean(axis=0)
            sigma[i] = vals.std(axis=0, ddof=1) if len(vals) > 1 else 0.0
        ndiv[i] = ens.n_diverged
        nused[i] = clean.sum()
    return SweepResult(gains=gains, mean=mean, sigma=sigma, n_diverged=ndiv,
                       n_used=nused, repetitions=spec.repetitions,
                       engine=spec.engine, entry=spec.entry)


# ---------------------------------------------------------------------------
# gain tuning


@dataclass(frozen=True)
class TuneSpec:
    """Search space and budget for steady-state gain tuning."""

    target: TargetSpec
    bounds: dict
    budget: int = 40
    method: str = "coordinate-descent"
    repetitions: int = 5
    engine: str = "moment"

    def __post_init__(self):
        if not self.bounds:
            raise ConfigError("tune bounds must name at least one law entry")
        for name, pair in self.bounds.items():
            if name not in ENTRY_NAMES:
                raise ConfigError(f"unknown control-law entry {name!r}")
            lo, hi = float(pair[0]), float(pair[1])
            if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi:
                raise ConfigError(f"bounds for {name} must be finite with lo <= hi")
        if self.budget < 1:
            raise ConfigError(f"budget must be >= 1, got {self.budget}")
        if self.method not in ("grid", "coordinate-descent"):
            raise ConfigError(f"unknown tune method {self.method!r}")
        if self.repetitions < 1:
            raise ConfigError(f"repetitions must be >= 1, got {self.repetitions}")
        if self.engine not in ("moment", "sme"):
            raise ConfigError(f"unknown engine {self.engine!r}")


@dataclass(frozen=True)
class TuneResult:
    """Best law found within budget and how it performed."""

    law: ControlLaw
    steady_mean: np.ndarray
    residual: float
    n_evaluations: int
    budget_exhausted: bool
    history: tuple


def tune_gains(spec: TuneSpec, params: SimParams, *,
               stride: Optional[int] = None, window: float = 10.0) -> TuneResult:
    """Minimize the distance between steady-state mean and target.

    The objective for a candidate law is V = |steady mean - target|^2/2,
    with the steady mean averaged over spec.repetitions trajectories on
    common random numbers (indices 0..reps-1 under the master seed), so
    the search surface is deterministic.  "grid" evaluates a uniform
    product grid; "coordinate-descent" refines one entry at a time on a
    shrinking bracket, starting from the center of the bounds.  Runaway
    trajectories are frozen at the guard, which the objective sees as a
    large residual.  Stops early when the budget runs out and flags it.
    """
    stride = auto_stride(params) if stride is None else resolve_stride(params, stride)
    names = sorted(spec.bounds)
    target = spec.target.bloch if hasattr(spec.target, "bloch") else np.asarray(spec.target, float)
    cache: dict = {}
    history = []

    def evaluate(values: tuple) -> float:
        if values in cache:
            return cache[values]
        if len(cache) >= spec.budget:
            return math.inf
        law = ControlLaw()
        for name, v in zip(names, values):
            law = law.with_entry(name, v)
        ens = _run_ensemble(spec.engine, params, spec.repetitions,
                            None if law.is_zero() else law, stride, "stop")
        ests = _steady_estimates(ens, window)
        mean = np.array([e.mean for e in ests]).mean(axis=0)
        v = 0.5 * float(np.sum((mean - target) ** 2))
        cache[values] = v
        history.append((dict(zip(names, values)), v))
        return v

    def grid_axis(name: str, m: int) -> np.ndarray:
        lo, hi = spec.bounds[name]
        return np.linspace(lo, hi, m)

    if spec.method == "grid":
        m = max(2, int(math.floor(spec.budget ** (1.0 / len(names)))))
        axes = [grid_axis(n, m) for n in names]
        mesh = np.meshgrid(*axes, indexing="ij")
        points = np.stack([a.ravel() for a in mesh], axis=1)
        for row in points:
            if len(cache) >= spec.budget:
                break
            evaluate(tuple(float(x) for x in row))
    else:
        current = [float(np.mean(spec.bounds[n])) for n in names]
        widths = [float(spec.bounds[n][1] - spec.bounds[n][0]) for n in names]
        evaluate(tuple(current))
        converged = False
        while len(cache) < spec.budget and not converged:
            converged = True
            for i, name in enumerate(names):
                if widths[i] < 1e-2 * max(1.0, abs(spec.bounds[name][1] - spec.bounds[name][0])):
                    continue
                lo = max(spec.bounds[name][0], current[i] - widths[i] / 2)
                hi = min(spec.bounds[name][1], current[i] + widths[i] / 2)
                cands = np.linspace(lo, hi, 5)
                scores = []
                for c in cands:
                    trial = list(current)
                    trial[i] = float(c)
                    scores.append(evaluate(tuple(trial)))
                    if len(cache) >= spec.budget:
                        break
                best = int(np.argmin(scores))
                if not math.isinf(scores[best]):
                    if abs(cands[best] - current[i]) > 1e-12:
                        converged = False
                    current[i] = float(cands[best])
                widths[i] /= 2.0
                if len(cache) >= spec.budget:
                    break

    if not cache:
        raise ConfigError("tune budget allowed no evaluations")
    best_values = min(cache, key=lambda k: cache[k])
    best_law = ControlLaw()
    for name, v in zip(names, best_values):
        best_law = best_law.with_entry(name, v)
    ens = _run_ensemble(spec.engine, params, spec.repetitions,
                        None if best_law.is_zero() else best_law, stride, "stop")
    ests = _steady_estimates(ens, window)
    steady = np.array([e.mean for e in ests]).mean(axis=0)
    exhausted = len(cache) >= spec.budget
    return TuneResult(law=best_law, steady_mean=steady, residual=cache[best_values],
                      n_evaluations=len(cache), budget_exhausted=exhausted,
                      history=tuple(history))


# ---------------------------------------------------------------------------
# engine cross-validation


@dataclass(frozen=True)
class CompareReport:
    """Matched-noise deviation between the two engines.

    deviation[j, a] = |mean_sme - mean_moment| of first-moment axis a at
    sample j, means taken over the matched ensembles.  residual is the
    moment engine's ensemble-mean absolute commutator defect per axis
    and sample; closure error shows up there and in deviation.
    """

    times: np.ndarray
    deviation: np.ndarray
    max_deviation: np.ndarray
    residual: np.ndarray
    max_residual: np.ndarray
    n_trajectories: int
    n_diverged_moment: int
    n_diverged_sme: int

    @property
    def max_deviation_overall(self) -> float:
        return float(self.max_deviation.max())


def compare_engines(params: SimParams, law: Optional[ControlLaw],
                    n_traj: int, horizon: Optional[float] = None, *,
                    stride: Optional[int] = None) -> CompareReport:
    """Drive both engines with identical innovations and compare means.

    Trajectory i of each engine consumes the noise stream derived from
    (params.seed, i), so the two ensembles differ only in dynamics.
    horizon optionally shortens t_final.  Runaway moment trajectories
    are frozen at the guard and counted, not dropped; the deviation then
    reflects what the closure actually produces.
    """
    if params.n_atoms > SME_ATOM_LIMIT:
        raise ConfigError(
            f"engine comparison needs the density-matrix engine; N <= "
            f"{SME_ATOM_LIMIT} required, got {params.n_atoms}")
    if n_traj < 1:
        raise ConfigError(f"n_traj must be >= 1, got {n_traj}")
    if horizon is not None:
        if horizon <= 0:
            raise ConfigError(f"horizon must be positive, got {horizon}")
        params = replace(params, t_final=float(horizon))
    stride = auto_stride(params) if stride is None else resolve_stride(params, stride)
    ens_m = ensemble_moments(params, n_traj, law, stride=stride, on_divergence="stop")
    ens_s = ensemble_sme(params, n_traj, law, stride=stride, on_divergence="stop")
    mean_m = ens_m.mean_series()
    mean_s = ens_s.mean_series()
    deviation = np.abs(mean_s[:, 0:3] - mean_m[:, 0:3])
    n = params.n_atoms
    res = np.stack([
        np.abs(ens_m.series[:, :, 11] - ens_m.series[:, :, 2] / n),
        np.abs(ens_m.series[:, :, 9] - ens_m.series[:, :, 0] / n),
        np.abs(ens_m.series[:, :, 7] + ens_m.series[:, :, 1] / n),
    ], axis=2).mean(axis=0)
    return CompareReport(
        times=ens_m.times, deviation=deviation,
        max_deviation=deviation.max(axis=0), residual=res,
        max_residual=res.max(axis=0), n_trajectories=n_traj,
        n_diverged_moment=ens_m.n_diverged, n_diverged_sme=ens_s.n_diverged,
    )


# ---------------------------------------------------------------------------
# collapse statistics


@dataclass(frozen=True)
class CollapseReport:
    """Terminal-state histogram of the measurement-only filter.

    counts[k] is the number of trajectories whose terminal state is
    dominated (population > threshold) by basis state k; eigenvalues[k]
    is the matching measured-observable value N-2k.  born is the
    initial-state probability vector the histogram is compared to by
    total-variation distance (computed over collapsed trajectories).
    """

    eigenvalues: np.ndarray
    counts: np.ndarray
    born: np.ndarray
    tv_distance: float
    uncollapsed: int
    n_trajectories: int
    threshold: float

    @property
    def uncollapsed_fraction(self) -> float:
        return self.uncollapsed / self.n_trajectories


def _diag_populations(params: SimParams, p0: np.ndarray, n_traj: int,
                      block: int = 4096) -> np.ndarray:
    """Terminal populations of the measurement-only filter, all trajectories.

    With no controls the Hamiltonian is diagonal in the measurement
    basis and the populations close on themselves: each step multiplies
    p_k by 1 + 2 sqrt(eta) B (lam_k - <Sz>) dw.  This integrates that
    scalar system for every trajectory at once, drawing each
    trajectory's noise from its own (seed, index) stream in time blocks
    (block draws reproduce the one-shot stream).  Small negative
    populations from a large step are clipped before renormalizing.
    """
    lam = np.arange(params.n_atoms, -params.n_atoms - 1, -2, dtype=float)
    n_steps = params.n_steps
    sq = math.sqrt(params.dt)
    gens = [generator_for(params.seed, i) for i in range(n_traj)]
    p = np.tile(p0, (n_traj, 1))
    scale = 2.0 * math.sqrt(params.eta) * params.B
    done = 0
    while done < n_steps:
        m = min(block, n_steps - done)
        dw = np.empty((n_traj, m))
        for i, g in enumerate(gens):
            dw[i] = g.standard_normal(m)
        dw *= sq
        for j in range(m):
            mean_sz = p @ lam
            p *= 1.0 + scale * (lam[None, :] - mean_sz[:, None]) * dw[:, j, None]
            np.maximum(p, 0.0, out=p)
            p /= p.sum(axis=1, keepdims=True)
        done += m
    return p


def collapse_statistics(params: SimParams, initial: Optional[PureState],
                        n_traj: int, *, threshold: float = COLLAPSE_THRESHOLD,
                        ) -> CollapseReport:
    """Histogram terminal measurement outcomes against the Born rule.

    Runs the no-feedback filter from the given pure state (default
    x-polarized) and assigns each trajectory to its dominant terminal
    basis state.  The run must be long enough to collapse: a warning is
    issued when t_final is within a factor 10 of the collapse timescale
    1/(4 B^2 eta S0).  Raises when more than 5% of trajectories remain
    uncollapsed at the end.
    """
    if n_traj < 1:
        raise ConfigError(f"n_traj must be >= 1, got {n_traj}")
    if not 0.5 < threshold < 1.0:
        raise ConfigError(f"threshold must lie in (0.5, 1), got {threshold}")
    n = params.n_atoms
    if initial is None:
        initial = spin_coherent_state(n, math.pi / 2.0)
    if initial.n_atoms != n:
        raise ConfigError(
            f"initial state is for N={initial.n_atoms}, params say N={n}")
    born = initial.probabilities()
    lam = np.arange(n, -n - 1, -2, dtype=float)
    s0 = float(born @ lam ** 2 - (born @ lam) ** 2)
    rate = 4.0 * params.B ** 2 * params.eta * s0
    if rate > 0 and params.t_final * rate < 10.0:
        warnings.warn(
            f"t_final={params.t_final:g} is under 10 collapse times "
            f"(1/(4 B^2 eta S0) = {1.0 / rate:g}); expect uncollapsed runs",
            RuntimeWarning, stacklevel=2)
    terminal = _diag_populations(params, born.copy(), n_traj)
    dominant = terminal.argmax(axis=1)
    peak = terminal.max(axis=1)
    collapsed = peak > threshold
    counts = np.bincount(dominant[collapsed], minlength=n + 1)
    uncollapsed = int((~collapsed).sum())
    if collapsed.any():
        tv = 0.5 * float(np.abs(counts / collapsed.sum() - born).sum())
    else:
        tv = 1.0
    report = CollapseReport(eigenvalues=lam, counts=counts, born=born,
                            tv_distance=tv, uncollapsed=uncollapsed,
                            n_trajectories=n_traj, threshold=threshold)
    if report.uncollapsed_fraction > UNCOLLAPSED_LIMIT:
        raise CollapseError(
            f"{uncollapsed} of {n_traj} trajectories uncollapsed "
            f"(fraction {report.uncollapsed_fraction:.3f} > {UNCOLLAPSED_LIMIT})",
            uncollapsed_fraction=report.uncollapsed_fraction)
    return report
