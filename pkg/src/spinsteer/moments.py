"""Closed moment-equation engine for the monitored collective spin.

State is the nine normalized moments of s = S/N that close under a
third-order cumulant truncation: the Bloch vector (sx, sy, sz), the
squared moments (sx2, sy2, sz2) and the complex cross moments
xz = <s^x s^z>, yz = <s^y s^z>, xy = <s^x s^y>.  Second-order moments
evolve deterministically (their noise terms are dropped by the
closure); first moments carry the measurement back-action diffusion.
The system is integrated with Euler-Maruyama steps sharing the seeding
scheme of the density-matrix engine, so both engines can consume
identical innovation sequences.

Conventions: commutators carry a factor 2 ([s^j, s^k] = 2i e_jkl s^l /
N), so every drift has an overall factor 2 and free precession under
u_z or the measurement rotation G advances the Bloch phase at rate
2(G + u_z).
"""

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from . import _kernels
from .controls import ControlLaw, TargetSpec, control_signal, lyapunov_distance
from .errors import ConfigError, DivergenceError
from .params import SimParams
from .records import (COLUMNS, EnsembleResult, InnovationSequence,
                      TrajectoryRecord, resolve_stride, sample_times)

GUARD_LEVEL = 10.0


@dataclass(frozen=True)
class MomentState:
    """The nine tracked moments; cross moments stored once, conjugates implied."""

    sx: float
    sy: float
    sz: float
    sx2: float
    sy2: float
    sz2: float
    xz: complex
    yz: complex
    xy: complex

    @property
    def first_moments(self) -> np.ndarray:
        return np.array([self.sx, self.sy, self.sz])

    def casimir_sum(self) -> float:
        """sx2 + sy2 + sz2, conserved at (N + 2)/N by the drift."""
        return self.sx2 + self.sy2 + self.sz2


def initial_moments(n_atoms: int, unnormalized_yz: bool = False) -> MomentState:
    """Moments of the x-polarized coherent state.

    The cross moment <s^y s^z> of this state is i/N.  With
    ``unnormalized_yz`` it is instead set to i, a variant that skips
    the 1/N scaling; the default is the value consistent with
    <s^y s^z> - <s^z s^y> = 2i <s^x>/N.
    """
    inv = 1.0 / n_atoms
    yz0 = 1.0j if unnormalized_yz else 1.0j * inv
    return MomentState(sx=1.0, sy=0.0, sz=0.0,
                       sx2=1.0, sy2=inv, sz2=inv,
                       xz=0.0 + 0.0j, yz=yz0, xy=0.0 + 0.0j)


def pack_moments(m: MomentState) -> np.ndarray:
    """Flatten a MomentState into the 12-column real layout of COLUMNS."""
    return np.array([m.sx, m.sy, m.sz, m.sx2, m.sy2, m.sz2,
                     m.xz.real, m.xz.imag, m.yz.real, m.yz.imag,
                     m.xy.real, m.xy.imag])


def unpack_moments(row: Sequence[float]) -> MomentState:
    r = np.asarray(row, dtype=float)
    if r.shape != (len(COLUMNS),):
        raise ValueError(f"expected {len(COLUMNS)} moment columns, got shape {r.shape}")
    return MomentState(sx=r[0], sy=r[1], sz=r[2], sx2=r[3], sy2=r[4], sz2=r[5],
                       xz=complex(r[6], r[7]), yz=complex(r[8], r[9]),
                       xy=complex(r[10], r[11]))


def moment_drift(m: MomentState, u: Sequence[float], params: SimParams) -> MomentState:
    """Deterministic part of the moment equations, as rates d<.>/dt."""
    ux, uy, uz = float(u[0]), float(u[1]), float(u[2])
    A, G = params.A, params.G
    dsx = 2.0 * (uy * m.sz - uz * m.sy - A * m.sx - G * m.sy)
    dsy = 2.0 * (uz * m.sx - A * m.sy - ux * m.sz + G * m.sx)
    dsz = 2.0 * (ux * m.sy - uy * m.sx)
    dsx2 = 2.0 * (2.0 * A * (m.sy2 - m.sx2) + uy * 2.0 * m.xz.real
                  - uz * 2.0 * m.xy.real - G * 2.0 * m.xy.real)
    dsy2 = 2.0 * (2.0 * A * (m.sx2 - m.sy2) - ux * 2.0 * m.yz.real
                  + uz * 2.0 * m.xy.real + G * 2.0 * m.xy.real)
    dsz2 = 2.0 * (ux * 2.0 * m.yz.real - uy * 2.0 * m.xz.real)
    dxz = 2.0 * (ux * m.xy + uy * m.sz2 - uy * m.sx2 - uz * m.yz
                 - A * m.xz - G * m.yz)
    dyz = 2.0 * (ux * m.sy2 - ux * m.sz2 - uy * m.xy.conjugate() + uz * m.xz
                 - A * m.yz + G * m.xz)
    dxy = 2.0 * (-ux * m.xz + uy * m.yz.conjugate() + uz * m.sx2 - uz * m.sy2
                 - 2.0 * A * m.xy.conjugate() - 2.0 * A * m.xy
                 + G * m.sx2 - G * m.sy2)
    return MomentState(dsx, dsy, dsz, dsx2, dsy2, dsz2, dxz, dyz, dxy)


def moment_diffusion(m: MomentState, params: SimParams) -> tuple:
    """Coefficients (g_x, g_y, g_z) multiplying the Wiener increment.

    Only the first moments diffuse; the closure drops the noise terms
    of all second-order moments.
    """
    bn = params.B * params.n_atoms * math.sqrt(params.eta)
    gx = bn * (2.0 * m.xz.real - 2.0 * m.sz * m.sx)
    gy = bn * (2.0 * m.yz.real - 2.0 * m.sz * m.sy)
    gz = 2.0 * bn * (m.sz2 - m.sz * m.sz)
    return (gx, gy, gz)


def commutator_residual(m: MomentState, n_atoms: int) -> np.ndarray:
    """Deviation of the stored cross moments from the spin algebra.

    Exact moments satisfy Im<xy> = <s^z>/N, Im<yz> = <s^x>/N and
    Im<xz> = -<s^y>/N; the closed system does not preserve these
    identities, so the residual is reported as a diagnostic only.
    """
    inv = 1.0 / n_atoms
    return np.array([m.xy.imag - m.sz * inv,
                     m.yz.imag - m.sx * inv,
                     m.xz.imag + m.sy * inv])


def _law_arrays(law: Optional[ControlLaw]):
    if law is None or law.is_zero():
        use_law = law is not None and not law.is_zero()
        return (np.zeros(3), np.zeros((3, 3)), 0.0, False, False)
    sat = law.saturation
    return (np.asarray(law.xi, dtype=float), np.asarray(law.beta, dtype=float),
            float(sat) if sat is not None else 0.0,
            True, sat is not None)


def _controls_at(law: Optional[ControlLaw], states: np.ndarray) -> np.ndarray:
    """Vectorized law evaluation on rows of first moments (n, 3) -> (n, 3)."""
    if law is None:
        return np.zeros((states.shape[0], 3))
    u = law.xi + states @ law.beta.T
    if law.saturation is not None:
        np.clip(u, -law.saturation, law.saturation, out=u)
    return u


def _run_moment_batch(params: SimParams, law: Optional[ControlLaw],
                      state: np.ndarray, dw: np.ndarray, stride: int,
                      feedback_delay_steps: int, guard_level: float,
                      keep_sz_path: bool):
    """March a batch of moment trajectories, sampling every `stride` steps.

    Returns (series, controls, sz_path or None, status).  `state` is
    consumed in place.  Trajectories whose guard trips are frozen at
    their last admissible state; status holds the step index of the
    crossing, -1 where clean.
    """
    n_traj = state.shape[0]
    n_steps = params.n_steps
    n_samples = n_steps // stride + 1
    delay = int(feedback_delay_steps)

    xi, beta, sat, use_law, use_sat = _law_arrays(law)
    ubuf = np.zeros((n_traj, max(delay, 1), 3))
    sz_buf = np.empty((n_traj, stride))
    u_buf = np.empty((n_traj, stride, 3))
    sz_path = np.empty((n_traj, n_steps)) if keep_sz_path else None

    series = np.empty((n_traj, n_samples, len(COLUMNS)))
    controls = np.empty((n_traj, n_samples, 3))
    status = np.full(n_traj, -1, dtype=np.int64)
    sqeta = math.sqrt(params.eta)

    for j in range(n_samples - 1):
        series[:, j] = state
        lo = j * stride
        _kernels.moment_steps(state, dw[:, lo:lo + stride], ubuf, sz_buf, u_buf,
                              status, params.A, params.B, params.G, sqeta,
                              float(params.n_atoms), params.dt,
                              xi, beta, sat, use_law, use_sat, delay,
                              lo, guard_level)
        controls[:, j] = u_buf[:, 0]
        if keep_sz_path:
            sz_path[:, lo:lo + stride] = sz_buf
    series[:, n_samples - 1] = state
    if delay > 0:
        controls[:, n_samples - 1] = ubuf[:, n_steps % delay]
    else:
        controls[:, n_samples - 1] = _controls_at(law, state[:, 0:3])
    return series, controls, sz_path, status


def _initial_rows(params: SimParams, initial: Optional[MomentState],
                  unnormalized_yz: bool, n_traj: int) -> np.ndarray:
    m0 = initial if initial is not None \
        else initial_moments(params.n_atoms, unnormalized_yz)
    return np.tile(pack_moments(m0), (n_traj, 1))


def simulate_moments(params: SimParams, law: Optional[ControlLaw] = None, *,
                     target: Optional[TargetSpec] = None,
                     initial: Optional[MomentState] = None,
                     stride: int = 1, feedback_delay_steps: int = 0,
                     innovations: Optional[InnovationSequence] = None,
                     trajectory_index: int = 0,
                     guard_level: float = GUARD_LEVEL,
                     unnormalized_yz: bool = False) -> TrajectoryRecord:
    """Integrate one trajectory of the closed moment system.

    Innovations are generated from (params.seed, trajectory_index)
    unless an explicit InnovationSequence is supplied.  Any tracked
    moment exceeding guard_level in magnitude aborts the run with a
    DivergenceError; unstable gain/dt combinations show up this way.
    """
    stride = resolve_stride(params, stride)
    if innovations is None:
        innovations = InnovationSequence.generate(params, trajectory_index)
    else:
        if len(innovations) != params.n_steps:
            raise ConfigError(
                f"innovation sequence has {len(innovations)} steps, "
                f"params require {params.n_steps}")
        if not math.isclose(innovations.dt, params.dt, rel_tol=1e-12):
            raise ConfigError(
                f"innovation dt {innovations.dt} != params dt {params.dt}")
        if innovations.trajectory_index is not None:
            trajectory_index = innovations.trajectory_index

    state = _initial_rows(params, initial, unnormalized_yz, 1)
    dw = innovations.increments[np.newaxis, :]
    series, controls, sz_path, status = _run_moment_batch(
        params, law, state, dw, stride, feedback_delay_steps,
        guard_level, keep_sz_path=True)
    if status[0] >= 0:
        step = int(status[0])
        raise DivergenceError(
            f"moment magnitude exceeded {guard_level} at step {step} "
            f"(t = {(step + 1) * params.dt:.6g}); unstable gains or too "
            f"coarse a dt", step=step, time=(step + 1) * params.dt,
            trajectory=trajectory_index)

    times = sample_times(params, stride)
    n2 = float(params.n_atoms) ** 2
    variance = n2 * (series[0, :, 5] - series[0, :, 2] ** 2)
    lyap = None
    if target is not None:
        diff = series[0, :, 0:3] - target.bloch
        lyap = 0.5 * np.einsum("ij,ij->i", diff, diff)
    return TrajectoryRecord(
        times=times, series=series[0], controls=controls[0],
        variance=variance, innovations=innovations.increments,
        sz_path=sz_path[0], lyapunov=lyap, purity=None, engine="moment",
        params=params, law=law, target=target, stride=stride,
        feedback_delay_steps=feedback_delay_steps,
        trajectory_index=trajectory_index, final_state=unpack_moments(series[0, -1]))


def ensemble_moments(params: SimParams, n_trajectories: int,
                     law: Optional[ControlLaw] = None, *,
                     stride: int = 1, feedback_delay_steps: int = 0,
                     initial: Optional[MomentState] = None,
                     guard_level: float = GUARD_LEVEL,
                     trajectory_indices: Optional[Sequence[int]] = None,
                     on_divergence: str = "raise",
                     unnormalized_yz: bool = False) -> EnsembleResult:
    """Integrate a batch of independent trajectories.

    Trajectory i draws its noise from (params.seed, trajectory_indices[i]);
    indices default to 0..n-1.  on_divergence selects the guard policy:
    "raise" aborts on the first diverged trajectory, "stop" freezes the
    offender at its last admissible state, flags it in `diverged`, and
    keeps going.  Statistics over a "stop" ensemble must treat flagged
    trajectories explicitly; freezing is not mean-preserving.
    """
    if on_divergence not in ("raise", "stop"):
        raise ConfigError(f"unknown divergence policy {on_divergence!r}")
    stride = resolve_stride(params, stride)
    if trajectory_indices is None:
        trajectory_indices = np.arange(n_trajectories, dtype=np.int64)
    else:
        trajectory_indices = np.asarray(trajectory_indices, dtype=np.int64)
        if trajectory_indices.shape != (n_trajectories,):
            raise ConfigError("trajectory_indices length != n_trajectories")

    dw = np.empty((n_trajectories, params.n_steps))
    for i, idx in enumerate(trajectory_indices):
        dw[i] = InnovationSequence.generate(params, int(idx)).increments

    state = _initial_rows(params, initial, unnormalized_yz, n_trajectories)
    series, _, _, status = _run_moment_batch(
        params, law, state, dw, stride, feedback_delay_steps,
        guard_level, keep_sz_path=False)

    if on_divergence == "raise" and np.any(status >= 0):
        i = int(np.argmax(status >= 0))
        step = int(status[i])
        raise DivergenceError(
            f"moment magnitude exceeded {guard_level} at step {step} "
            f"(t = {(step + 1) * params.dt:.6g}) in trajectory "
            f"{int(trajectory_indices[i])}", step=step,
            time=(step + 1) * params.dt,
            trajectory=int(trajectory_indices[i]))

    n2 = float(params.n_atoms) ** 2
    variance = n2 * (series[:, :, 5] - series[:, :, 2] ** 2)
    return EnsembleResult(
        times=sample_times(params, stride), series=series, variance=variance,
        purity=None, diverged=status, trajectory_indices=trajectory_indices,
        engine="moment", params=params, law=law, stride=stride,
        feedback_delay_steps=feedback_delay_steps)
