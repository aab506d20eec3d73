"""Conditional stochastic master equation engine on the Dicke subspace.

Exact-in-N integrator for the homodyne-conditioned evolution

    d rho = -i[(G + u_z) sz + g N + u_x sx + u_y sy, rho] dt
            + A D[sz] rho dt + sqrt(eta) B H[sz] rho dw,

with D the dissipator, H the nonlinear innovation superoperator, and
dw a Wiener increment.  This engine is the ground truth the moment
closure is judged against: it tracks the full (N+1)-dimensional
conditional density matrix, so it is exact up to integrator error.

Stepping is Euler-Maruyama with per-step Hermitization and trace
renormalization.  The g N term is a multiple of the identity on the
fixed-N subspace and cannot move the state; the compiled path omits it
from the commutator (exactly, not approximately), which keeps runs
with different g bit-identical.  The dense reference step sme_step
keeps whatever Hamiltonian it is given, identity part included.

The per-step measurement kick on the extreme Dicke weights has
relative scale 4 B sqrt(eta) N sqrt(dt); pushing that factor much
above 1 makes Euler-Maruyama blow through the trace guard.  Both
drivers warn when a configuration crosses that regime and suggest a
step size that does not.
"""

import math
import warnings
from typing import Optional, Sequence, Union

import numpy as np

from . import _kernels
from .controls import ControlLaw, TargetSpec
from .dicke import (DensityMatrix, PureState, SpinOperators,
                    build_spin_operators, spin_coherent_state)
from .errors import ConfigError, IntegratorError
from .moments import _controls_at, _law_arrays
from .params import SimParams
from .records import (COLUMNS, EnsembleResult, InnovationSequence,
                      TrajectoryRecord, resolve_stride, sample_times)

TRACE_TOL = 0.1
NOISE_FACTOR_WARN = 1.4


def lindblad_D(rho: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Dissipator D[c] rho = c rho c' - (c'c rho + rho c'c)/2."""
    rho = np.asarray(rho, dtype=complex)
    c = np.asarray(c, dtype=complex)
    if rho.shape != c.shape or rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"shape mismatch: rho {rho.shape}, c {c.shape}")
    cd = c.conj().T
    cdc = cd @ c
    return c @ rho @ cd - 0.5 * (cdc @ rho + rho @ cdc)


def stochastic_H(rho: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Innovation superoperator H[c] rho = c rho + rho c' - Tr((c+c') rho) rho.

    Nonlinear in rho through the trace term; expects Tr(rho) = 1.
    """
    rho = np.asarray(rho, dtype=complex)
    c = np.asarray(c, dtype=complex)
    if rho.shape != c.shape or rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise ValueError(f"shape mismatch: rho {rho.shape}, c {c.shape}")
    cd = c.conj().T
    mean = np.einsum("km,mk->", c + cd, rho)
    return c @ rho + rho @ cd - mean * rho


def hamiltonian_matrix(params: SimParams, u: Sequence[float] = (0.0, 0.0, 0.0)
                       ) -> np.ndarray:
    """Dense G sz + g N + u . (sx, sy, sz) for the reference stepper."""
    ops = build_spin_operators(params.n_atoms)
    h = params.G * ops.sz \
        + (params.g * params.n_atoms) * np.eye(ops.dim, dtype=complex)
    if u[0] != 0.0:
        h = h + u[0] * ops.sx
    if u[1] != 0.0:
        h = h + u[1] * ops.sy
    if u[2] != 0.0:
        h = h + u[2] * ops.sz
    return h


def sme_step(rho: DensityMatrix, hamiltonian: np.ndarray, params: SimParams,
             dw: float) -> DensityMatrix:
    """One Euler-Maruyama step of the conditional master equation.

    Dense reference implementation: applies the given Hamiltonian
    literally, then Hermitizes and renormalizes the trace.  The
    compiled engine reproduces this update through banded arithmetic.
    """
    ops = build_spin_operators(rho.n_atoms)
    r = rho.matrix
    h = np.asarray(hamiltonian, dtype=complex)
    if h.shape != r.shape:
        raise ValueError(f"hamiltonian shape {h.shape} != state shape {r.shape}")
    comm = h @ r - r @ h
    new = r + (-1j * comm + params.A * lindblad_D(r, ops.sz)) * params.dt \
        + (math.sqrt(params.eta) * params.B) * stochastic_H(r, ops.sz) * dw
    new = 0.5 * (new + new.conj().T)
    tr = float(np.real(np.trace(new)))
    if not abs(tr - 1.0) <= TRACE_TOL:
        raise IntegratorError(
            f"trace drifted to {tr:.4g} in one step; reduce dt")
    return DensityMatrix(n_atoms=rho.n_atoms, matrix=new / tr)


def noise_step_factor(params: SimParams) -> float:
    """Per-step relative measurement kick on the extreme Dicke weights."""
    return 4.0 * params.B * math.sqrt(params.eta) * params.n_atoms \
        * math.sqrt(params.dt)


def _warn_if_stiff(params: SimParams) -> None:
    factor = noise_step_factor(params)
    if factor > NOISE_FACTOR_WARN:
        safe = (NOISE_FACTOR_WARN
                / (4.0 * params.B * math.sqrt(params.eta) * params.n_atoms)) ** 2
        warnings.warn(
            f"per-step measurement kick factor {factor:.2f} exceeds "
            f"{NOISE_FACTOR_WARN}; Euler-Maruyama is likely to trip the "
            f"trace guard at this dt. Reduce dt below about {safe:.3g}.",
            RuntimeWarning, stacklevel=3)


def _resolve_initial(params: SimParams,
                     initial: Union[PureState, DensityMatrix, None]
                     ) -> DensityMatrix:
    if initial is None:
        initial = spin_coherent_state(params.n_atoms, math.pi / 2.0, 0.0)
    if isinstance(initial, PureState):
        initial = DensityMatrix.from_pure(initial)
    if not isinstance(initial, DensityMatrix):
        raise ConfigError(
            f"initial state must be a PureState or DensityMatrix, "
            f"got {type(initial).__name__}")
    if initial.n_atoms != params.n_atoms:
        raise ConfigError(
            f"initial state has n_atoms={initial.n_atoms}, "
            f"params require {params.n_atoms}")
    r = initial.matrix
    if abs(float(np.real(np.trace(r))) - 1.0) > 1e-8 \
            or float(np.max(np.abs(r - r.conj().T))) > 1e-8:
        raise ConfigError("initial density matrix must be Hermitian with trace 1")
    return initial


def _product_operators(ops: SpinOperators) -> list:
    sx, sy, sz = ops.sx, ops.sy, ops.sz
    return [sx @ sx, sy @ sy, sz @ sz, sx @ sz, sy @ sz, sx @ sy]


def _record_samples(rho: np.ndarray, ops: SpinOperators, prods: list,
                    series: np.ndarray, pur: np.ndarray, var: np.ndarray,
                    j: int) -> None:
    """Fill sample j of the series/purity/variance arrays from rho (M,K,K)."""
    n = float(ops.n_atoms)
    lam = ops.sz_diag
    a = ops.couplings
    pops = np.real(np.diagonal(rho, axis1=1, axis2=2))
    upper = np.diagonal(rho, offset=1, axis1=1, axis2=2)
    mean_z = pops @ lam
    second_z = pops @ (lam * lam)
    series[:, j, 0] = 2.0 * (np.real(upper) @ a) / n
    series[:, j, 1] = -2.0 * (np.imag(upper) @ a) / n
    series[:, j, 2] = mean_z / n
    sx2, sy2, sz2, xz, yz, xy = prods
    n2 = n * n
    series[:, j, 3] = np.real(np.einsum("km,tmk->t", sx2, rho)) / n2
    series[:, j, 4] = np.real(np.einsum("km,tmk->t", sy2, rho)) / n2
    series[:, j, 5] = second_z / n2
    zxz = np.einsum("km,tmk->t", xz, rho) / n2
    zyz = np.einsum("km,tmk->t", yz, rho) / n2
    zxy = np.einsum("km,tmk->t", xy, rho) / n2
    series[:, j, 6] = zxz.real
    series[:, j, 7] = zxz.imag
    series[:, j, 8] = zyz.real
    series[:, j, 9] = zyz.imag
    series[:, j, 10] = zxy.real
    series[:, j, 11] = zxy.imag
    pur[:, j] = np.real(np.einsum("tkm,tmk->t", rho, rho))
    var[:, j] = second_z - mean_z * mean_z


def _run_sme_batch(params: SimParams, law: Optional[ControlLaw],
                   rho: np.ndarray, dw: np.ndarray, stride: int,
                   feedback_delay_steps: int, keep_sz_path: bool,
                   check_psd: bool, psd_tol: float):
    """March a batch of conditional states, sampling every stride steps."""
    ops = build_spin_operators(params.n_atoms)
    prods = _product_operators(ops)
    n_traj = rho.shape[0]
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
    pur = np.empty((n_traj, n_samples))
    var = np.empty((n_traj, n_samples))
    status = np.full(n_traj, -1, dtype=np.int64)
    sqeta = math.sqrt(params.eta)

    for j in range(n_samples - 1):
        _record_samples(rho, ops, prods, series, pur, var, j)
        if check_psd:
            _check_psd(rho, status, j * stride, params.dt, psd_tol)
        lo = j * stride
        _kernels.sme_steps(rho, ops.sz_diag, ops.couplings,
                           dw[:, lo:lo + stride], ubuf, sz_buf, u_buf, status,
                           params.A, params.B, params.G, sqeta,
                           float(params.n_atoms), params.dt,
                           xi, beta, sat, use_law, use_sat, delay,
                           lo, TRACE_TOL)
        controls[:, j] = u_buf[:, 0]
        if keep_sz_path:
            sz_path[:, lo:lo + stride] = sz_buf
    _record_samples(rho, ops, prods, series, pur, var, n_samples - 1)
    if check_psd:
        _check_psd(rho, status, n_steps, params.dt, psd_tol)
    if delay > 0:
        controls[:, n_samples - 1] = ubuf[:, n_steps % delay]
    else:
        controls[:, n_samples - 1] = _controls_at(law, series[:, n_samples - 1, 0:3])
    return series, controls, pur, var, sz_path, status


def _check_psd(rho: np.ndarray, status: np.ndarray, step: int, dt: float,
               psd_tol: float) -> None:
    for i in range(rho.shape[0]):
        if status[i] >= 0:
            continue
        min_eig = float(np.linalg.eigvalsh(rho[i])[0])
        if min_eig < -psd_tol:
            raise IntegratorError(
                f"density matrix lost positivity (min eigenvalue "
                f"{min_eig:.3g} < -{psd_tol:g}) at step {step} "
                f"(t = {step * dt:.6g}); reduce dt",
                step=step, time=step * dt)


def simulate_sme(params: SimParams, law: Optional[ControlLaw] = None, *,
                 initial: Union[PureState, DensityMatrix, None] = None,
                 target: Optional[TargetSpec] = None,
                 stride: int = 1, feedback_delay_steps: int = 0,
                 innovations: Optional[InnovationSequence] = None,
                 trajectory_index: int = 0, check_psd: bool = False,
                 psd_tol: float = 1e-6) -> TrajectoryRecord:
    """Integrate one conditional trajectory of the full density matrix.

    The control u = law(moments) is recomputed each step from the
    engine's own normalized moments and applied in the same step
    (shift it with feedback_delay_steps if a loop latency is wanted).
    Innovations are generated from (params.seed, trajectory_index)
    unless supplied.  A trace drifting more than 0.1 from 1 in a
    single step aborts immediately.

    check_psd is an opt-in diagnostic that aborts (never projects)
    when an eigenvalue at a sample time drops below -psd_tol.  The
    Euler scheme keeps near-pure conditioned states slightly
    indefinite at every step, with negative eigenvalues of order
    eta*A*n_atoms*dt, so choose psd_tol against that scale rather
    than machine precision when enabling it.
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
    _warn_if_stiff(params)

    rho0 = _resolve_initial(params, initial)
    rho = rho0.matrix[np.newaxis, :, :].copy()
    dw = innovations.increments[np.newaxis, :]
    series, controls, pur, var, sz_path, status = _run_sme_batch(
        params, law, rho, dw, stride, feedback_delay_steps,
        keep_sz_path=True, check_psd=check_psd, psd_tol=psd_tol)
    if status[0] >= 0:
        step = int(status[0])
        raise IntegratorError(
            f"trace left [1 - {TRACE_TOL}, 1 + {TRACE_TOL}] at step {step} "
            f"(t = {(step + 1) * params.dt:.6g}); reduce dt",
            step=step, time=(step + 1) * params.dt)

    times = sample_times(params, stride)
    lyap = None
    if target is not None:
        diff = series[0, :, 0:3] - target.bloch
        lyap = 0.5 * np.einsum("ij,ij->i", diff, diff)
    return TrajectoryRecord(
        times=times, series=series[0], controls=controls[0],
        variance=var[0], innovations=innovations.increments,
        sz_path=sz_path[0], lyapunov=lyap, purity=pur[0], engine="sme",
        params=params, law=law, target=target, stride=stride,
        feedback_delay_steps=feedback_delay_steps,
        trajectory_index=trajectory_index,
        final_state=DensityMatrix(n_atoms=params.n_atoms, matrix=rho[0].copy()))


def ensemble_sme(params: SimParams, n_trajectories: int,
                 law: Optional[ControlLaw] = None, *,
                 initial: Union[PureState, DensityMatrix, None] = None,
                 stride: int = 1, feedback_delay_steps: int = 0,
                 trajectory_indices: Optional[Sequence[int]] = None,
                 on_divergence: str = "raise", keep_terminal: bool = False,
                 check_psd: bool = False, psd_tol: float = 1e-6
                 ) -> EnsembleResult:
    """Integrate a batch of independent conditional trajectories.

    Seeding, policies, and the freeze-and-flag semantics match
    ensemble_moments; a trajectory is flagged when its one-step trace
    update leaves the guard band.  keep_terminal retains the final
    density matrices (n_traj, N+1, N+1), which collapse statistics
    read.
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
    _warn_if_stiff(params)

    rho0 = _resolve_initial(params, initial)
    dim = params.n_atoms + 1
    rho = np.empty((n_trajectories, dim, dim), dtype=complex)
    rho[:] = rho0.matrix
    dw = np.empty((n_trajectories, params.n_steps))
    for i, idx in enumerate(trajectory_indices):
        dw[i] = InnovationSequence.generate(params, int(idx)).increments

    series, _, pur, var, _, status = _run_sme_batch(
        params, law, rho, dw, stride, feedback_delay_steps,
        keep_sz_path=False, check_psd=check_psd, psd_tol=psd_tol)

    if on_divergence == "raise" and np.any(status >= 0):
        i = int(np.argmax(status >= 0))
        step = int(status[i])
        raise IntegratorError(
            f"trace left [1 - {TRACE_TOL}, 1 + {TRACE_TOL}] at step {step} "
            f"(t = {(step + 1) * params.dt:.6g}) in trajectory "
            f"{int(trajectory_indices[i])}; reduce dt",
            step=step, time=(step + 1) * params.dt)

    return EnsembleResult(
        times=sample_times(params, stride), series=series, variance=var,
        purity=pur, diverged=status, trajectory_indices=trajectory_indices,
        engine="sme", params=params, law=law, stride=stride,
        feedback_delay_steps=feedback_delay_steps,
        terminal_rho=rho if keep_terminal else None)


def measurement_record(traj: TrajectoryRecord, params: SimParams,
                       eta: Optional[float] = None) -> np.ndarray:
    """Simulated detector output dy_t = 2 sqrt(eta) B <S^z>_t dt + dw_t.

    <S^z> is the filter's own pre-step conditional mean along the
    trajectory.  eta overrides params.eta and, unlike everywhere else,
    may be 0 to inspect the pure-noise record.
    """
    if traj.sz_path is None:
        raise ValueError("trajectory record carries no per-step <s^z> path")
    e = params.eta if eta is None else float(eta)
    if not 0.0 <= e <= 1.0:
        raise ConfigError(f"eta must lie in [0, 1], got {e}")
    gain = 2.0 * math.sqrt(e) * params.B * params.n_atoms * params.dt
    return gain * traj.sz_path + traj.innovations


def innovations_from_record(record: np.ndarray, traj: TrajectoryRecord,
                            params: SimParams,
                            eta: Optional[float] = None) -> InnovationSequence:
    """Invert measurement_record: dw = dy - 2 sqrt(eta) B <S^z> dt."""
    record = np.asarray(record, dtype=float)
    if record.shape != traj.sz_path.shape:
        raise ValueError(
            f"record length {record.shape} != step count {traj.sz_path.shape}")
    e = params.eta if eta is None else float(eta)
    gain = 2.0 * math.sqrt(e) * params.B * params.n_atoms * params.dt
    return InnovationSequence(increments=record - gain * traj.sz_path,
                              dt=params.dt, master_seed=None,
                              trajectory_index=traj.trajectory_index)
