"""Compiled inner loops for the two trajectory engines.

Both kernels advance a batch of trajectories by a block of integrator
steps, in place, one trajectory at a time (the per-trajectory state
then stays cache-resident across its whole step loop).  All recording,
validation beyond the hard per-step guards, and randomness live on the
Python side; the kernels receive pre-drawn Wiener increments and log
the per-step <s^z> and applied control needed by the callers.

Feedback enters through the affine law u = xi + beta . <s> evaluated
on the engine's own normalized first moments, optionally saturated and
optionally delayed through a per-trajectory ring buffer of previously
computed controls (a delay of d steps applies the control computed d
steps earlier; zeros before any control exists).

A trajectory that trips its guard (moment guard |m| > guard_level, or
density-matrix trace drifting from 1 by more than trace_tol before
renormalization) is frozen at its last admissible state and its entry
in status is set to the global step index of the crossing; clean
trajectories keep status -1.  Frozen trajectories are skipped by later
blocks.
"""

import numba as nb
import numpy as np

# Column layout must match records.COLUMNS.
_SX, _SY, _SZ, _SX2, _SY2, _SZ2 = 0, 1, 2, 3, 4, 5
_RXZ, _IXZ, _RYZ, _IYZ, _RXY, _IXY = 6, 7, 8, 9, 10, 11


@nb.njit(cache=True)
def _control(s0, s1, s2, xi, beta, sat, use_sat):
    ux = xi[0] + beta[0, 0] * s0 + beta[0, 1] * s1 + beta[0, 2] * s2
    uy = xi[1] + beta[1, 0] * s0 + beta[1, 1] * s1 + beta[1, 2] * s2
    uz = xi[2] + beta[2, 0] * s0 + beta[2, 1] * s1 + beta[2, 2] * s2
    if use_sat:
        if ux > sat:
            ux = sat
        elif ux < -sat:
            ux = -sat
        if uy > sat:
            uy = sat
        elif uy < -sat:
            uy = -sat
        if uz > sat:
            uz = sat
        elif uz < -sat:
            uz = -sat
    return ux, uy, uz


@nb.njit(cache=True)
def moment_steps(state, dw, ubuf, sz_log, u_log, status,
                 A, B, G, sqeta, n_atoms, dt,
                 xi, beta, sat, use_law, use_sat, delay, step0, guard_level):
    """Advance the closed moment equations by dw.shape[1] Euler steps."""
    n_traj, n_sub = dw.shape
    bn = B * n_atoms * sqeta
    for i in range(n_traj):
        if status[i] >= 0:
            continue
        s = state[i]
        for n in range(n_sub):
            sx = s[_SX]
            sy = s[_SY]
            sz = s[_SZ]
            sx2 = s[_SX2]
            sy2 = s[_SY2]
            sz2 = s[_SZ2]
            xz = complex(s[_RXZ], s[_IXZ])
            yz = complex(s[_RYZ], s[_IYZ])
            xy = complex(s[_RXY], s[_IXY])

            if use_law:
                ux, uy, uz = _control(sx, sy, sz, xi, beta, sat, use_sat)
            else:
                ux = 0.0
                uy = 0.0
                uz = 0.0
            if delay > 0:
                idx = (step0 + n) % delay
                ax_, ay_, az_ = ubuf[i, idx, 0], ubuf[i, idx, 1], ubuf[i, idx, 2]
                ubuf[i, idx, 0] = ux
                ubuf[i, idx, 1] = uy
                ubuf[i, idx, 2] = uz
                ux, uy, uz = ax_, ay_, az_

            sz_log[i, n] = sz
            u_log[i, n, 0] = ux
            u_log[i, n, 1] = uy
            u_log[i, n, 2] = uz

            dwi = dw[i, n]
            re_xz = xz.real
            re_yz = yz.real
            re_xy = xy.real

            n_sx = sx + 2.0 * (uy * sz - uz * sy - A * sx - G * sy) * dt \
                + bn * (2.0 * re_xz - 2.0 * sz * sx) * dwi
            n_sy = sy + 2.0 * (uz * sx - A * sy - ux * sz + G * sx) * dt \
                + bn * (2.0 * re_yz - 2.0 * sz * sy) * dwi
            n_sz = sz + 2.0 * (ux * sy - uy * sx) * dt \
                + 2.0 * bn * (sz2 - sz * sz) * dwi
            n_sx2 = sx2 + 2.0 * (2.0 * A * (sy2 - sx2) + uy * 2.0 * re_xz
                                 - uz * 2.0 * re_xy - G * 2.0 * re_xy) * dt
            n_sy2 = sy2 + 2.0 * (2.0 * A * (sx2 - sy2) - ux * 2.0 * re_yz
                                 + uz * 2.0 * re_xy + G * 2.0 * re_xy) * dt
            n_sz2 = sz2 + 2.0 * (ux * 2.0 * re_yz - uy * 2.0 * re_xz) * dt
            n_xz = xz + 2.0 * (ux * xy + uy * sz2 - uy * sx2 - uz * yz
                               - A * xz - G * yz) * dt
            n_yz = yz + 2.0 * (ux * sy2 - ux * sz2 - uy * xy.conjugate() + uz * xz
                               - A * yz + G * xz) * dt
            n_xy = xy + 2.0 * (-ux * xz + uy * yz.conjugate() + uz * sx2 - uz * sy2
                               - 2.0 * A * xy.conjugate() - 2.0 * A * xy
                               + G * sx2 - G * sy2) * dt

            bad = False
            for v in (n_sx, n_sy, n_sz, n_sx2, n_sy2, n_sz2):
                if not (abs(v) <= guard_level):
                    bad = True
            for z in (n_xz, n_yz, n_xy):
                if not (abs(z) <= guard_level):
                    bad = True
            if bad:
                status[i] = step0 + n
                break

            s[_SX] = n_sx
            s[_SY] = n_sy
            s[_SZ] = n_sz
            s[_SX2] = n_sx2
            s[_SY2] = n_sy2
            s[_SZ2] = n_sz2
            s[_RXZ] = n_xz.real
            s[_IXZ] = n_xz.imag
            s[_RYZ] = n_yz.real
            s[_IYZ] = n_yz.imag
            s[_RXY] = n_xy.real
            s[_IXY] = n_xy.imag


@nb.njit(cache=True)
def sme_steps(rho, lam, ax, dw, ubuf, sz_log, u_log, status,
              A, B, G, sqeta, n_atoms, dt,
              xi, beta, sat, use_law, use_sat, delay, step0, trace_tol):
    """Advance the conditional density matrices by dw.shape[1] Euler steps.

    The Hamiltonian is (G + u_z) sz + u_x sx + u_y sy (a total-number
    term would be a multiple of the identity here, hence dropped from
    the commutator); sx and sy are tridiagonal with couplings ax, so
    one step costs one banded multiply.  When u_x = u_y = 0 the update
    is elementwise and takes a cheaper path.
    """
    n_traj = rho.shape[0]
    K = rho.shape[1]
    n_sub = dw.shape[1]
    cb = sqeta * B
    for i in range(n_traj):
        if status[i] >= 0:
            continue
        r = rho[i]
        scratch = np.empty((K, K), np.complex128)
        hu = np.empty(K - 1, np.complex128)
        for n in range(n_sub):
            szE = 0.0
            for k in range(K):
                szE += lam[k] * r[k, k].real

            if use_law:
                sxE = 0.0
                syE = 0.0
                for k in range(K - 1):
                    c = r[k, k + 1]
                    sxE += 2.0 * ax[k] * c.real
                    syE -= 2.0 * ax[k] * c.imag
                ux, uy, uz = _control(sxE / n_atoms, syE / n_atoms, szE / n_atoms,
                                      xi, beta, sat, use_sat)
            else:
                ux = 0.0
                uy = 0.0
                uz = 0.0
            if delay > 0:
                idx = (step0 + n) % delay
                ax_, ay_, az_ = ubuf[i, idx, 0], ubuf[i, idx, 1], ubuf[i, idx, 2]
                ubuf[i, idx, 0] = ux
                ubuf[i, idx, 1] = uy
                ubuf[i, idx, 2] = uz
                ux, uy, uz = ax_, ay_, az_

            sz_log[i, n] = szE / n_atoms
            u_log[i, n, 0] = ux
            u_log[i, n, 1] = uy
            u_log[i, n, 2] = uz

            dwi = dw[i, n]
            geff = G + uz
            bdw = cb * dwi

            if ux == 0.0 and uy == 0.0:
                # Diagonal Hamiltonian: every element evolves on its own.
                for k in range(K):
                    for m in range(K):
                        gap = lam[k] - lam[m]
                        fac = complex(1.0 - 0.5 * A * gap * gap * dt
                                      + bdw * (lam[k] + lam[m] - 2.0 * szE),
                                      -geff * gap * dt)
                        scratch[k, m] = r[k, m] * fac
            else:
                uxy = complex(ux, -uy)
                for k in range(K - 1):
                    hu[k] = ax[k] * uxy
                for k in range(K):
                    hk = geff * lam[k]
                    for m in range(K):
                        # band product row k of H rho, and of (H rho)^dagger
                        m1 = hk * r[k, m]
                        if k + 1 < K:
                            m1 += hu[k] * r[k + 1, m]
                        if k > 0:
                            m1 += hu[k - 1].conjugate() * r[k - 1, m]
                        m2 = geff * lam[m] * r[m, k]
                        if m + 1 < K:
                            m2 += hu[m] * r[m + 1, k]
                        if m > 0:
                            m2 += hu[m - 1].conjugate() * r[m - 1, k]
                        comm = m1 - m2.conjugate()
                        gap = lam[k] - lam[m]
                        scratch[k, m] = r[k, m] \
                            + dt * (complex(comm.imag, -comm.real)
                                    - 0.5 * A * gap * gap * r[k, m]) \
                            + bdw * (lam[k] + lam[m] - 2.0 * szE) * r[k, m]

            # Restore exact Hermiticity, then renormalize the trace.
            tr = 0.0
            for k in range(K):
                tr += scratch[k, k].real
            if not (abs(tr - 1.0) <= trace_tol):
                status[i] = step0 + n
                break
            inv = 1.0 / tr
            for k in range(K):
                r[k, k] = complex(scratch[k, k].real * inv, 0.0)
                for m in range(k + 1, K):
                    v = 0.5 * (scratch[k, m] + scratch[m, k].conjugate()) * inv
                    r[k, m] = v
                    r[m, k] = v.conjugate()
