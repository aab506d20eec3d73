"""Closed moment-equation engine against hand-built references."""

import numpy as np
import pytest

from spinsteer import (
    ControlLaw,
    DivergenceError,
    InnovationSequence,
    SimParams,
    commutator_residual,
    ensemble_moments,
    initial_moments,
    moment_diffusion,
    moment_drift,
    simulate_moments,
    simulate_sme,
)


def test_initial_moments_values():
    m = initial_moments(50)
    assert m.sx == 1.0 and m.sy == 0.0 and m.sz == 0.0
    assert m.sx2 == 1.0
    assert m.sy2 == pytest.approx(1.0 / 50)
    assert m.sz2 == pytest.approx(1.0 / 50)
    assert m.yz == pytest.approx(1j / 50)
    assert m.xz == 0.0 and m.xy == 0.0


def test_initial_moments_unnormalized_variant():
    # the alternative convention keeps the raw correlator in yz
    m = initial_moments(50, unnormalized_yz=True)
    assert m.yz == pytest.approx(1j)


def test_drift_transverse_decay_rate():
    params = SimParams(n_atoms=100, G=1e-4, A=0.04, eta=1.0, dt=0.01,
                       t_final=1.0, seed=0)
    m = initial_moments(100)
    d = moment_drift(m, (0.0, 0.0, 0.0), params)
    # d<sx>/dt = 2(-A sx - G sy) = -0.08 at the start
    assert d.sx == pytest.approx(-0.08, abs=1e-12)
    # d<sy>/dt picks up the +2G sx rotation term
    assert d.sy == pytest.approx(2 * params.G, abs=1e-12)
    assert d.sz == pytest.approx(0.0, abs=1e-15)


def test_diffusion_at_initial_state():
    params = SimParams(n_atoms=100, G=1e-4, A=0.04, eta=1.0, dt=0.01,
                       t_final=1.0, seed=0)
    m = initial_moments(100)
    gx, gy, gz = moment_diffusion(m, params)
    assert gx == pytest.approx(0.0, abs=1e-15)
    assert gy == pytest.approx(0.0, abs=1e-15)
    # 2 B sqrt(eta) N (sz2 - sz^2) = 2 B at the x-polarized start
    assert gz == pytest.approx(2 * params.B, abs=1e-12)


def test_diffusion_scales_with_efficiency():
    params_full = SimParams(n_atoms=20, G=1e-4, A=0.04, eta=1.0, dt=0.01,
                            t_final=1.0, seed=0)
    params_quarter = SimParams(n_atoms=20, G=1e-4, A=0.04, eta=0.25, dt=0.01,
                               t_final=1.0, seed=0)
    m = initial_moments(20)
    gz_full = moment_diffusion(m, params_full)[2]
    gz_quarter = moment_diffusion(m, params_quarter)[2]
    assert gz_quarter == pytest.approx(0.5 * gz_full, rel=1e-12)


def test_drift_preserves_second_moment_sum():
    # the three variance drifts cancel exactly, for any state and control
    rng = np.random.default_rng(5)
    params = SimParams(n_atoms=30, G=1e-4, A=0.04, eta=1.0, dt=0.01,
                       t_final=1.0, seed=0)
    m0 = initial_moments(30)
    for _ in range(20):
        m = m0.__class__(
            sx=rng.normal(), sy=rng.normal(), sz=rng.normal(),
            sx2=rng.normal(), sy2=rng.normal(), sz2=rng.normal(),
            xz=complex(rng.normal(), rng.normal()),
            yz=complex(rng.normal(), rng.normal()),
            xy=complex(rng.normal(), rng.normal()))
        u = rng.normal(size=3)
        d = moment_drift(m, u, params)
        assert d.sx2 + d.sy2 + d.sz2 == pytest.approx(0.0, abs=1e-12)


def test_commutator_residual_zero_at_start():
    res = commutator_residual(initial_moments(40), 40)
    np.testing.assert_allclose(res, 0.0, atol=1e-14)


def _python_euler_reference(params, law, innovations, delay):
    """Literal transcription of the integrator update, in plain Python."""
    A, B, G = params.A, params.B, params.G
    bn = B * params.n_atoms * np.sqrt(params.eta)
    dt = params.dt
    m = initial_moments(params.n_atoms)
    s = [m.sx, m.sy, m.sz, m.sx2, m.sy2, m.sz2, m.xz, m.yz, m.xy]
    xi = np.zeros(3) if law is None else law.xi
    beta = np.zeros((3, 3)) if law is None else law.beta
    sat = None if law is None else law.saturation
    ring = [(0.0, 0.0, 0.0)] * max(delay, 1)
    out = [list(s)]
    controls = [(0.0, 0.0, 0.0)]
    for n, dwi in enumerate(innovations.increments):
        sx, sy, sz, sx2, sy2, sz2, xz, yz, xy = s
        u = xi + beta @ np.array([sx, sy, sz])
        if sat is not None:
            u = np.clip(u, -sat, sat)
        ux, uy, uz = float(u[0]), float(u[1]), float(u[2])
        if delay > 0:
            idx = n % delay
            ux, uy, uz, ring[idx] = *ring[idx], (ux, uy, uz)
        re_xz, re_yz, re_xy = xz.real, yz.real, xy.real
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
        s = [n_sx, n_sy, n_sz, n_sx2, n_sy2, n_sz2, n_xz, n_yz, n_xy]
        out.append(list(s))
        controls.append((ux, uy, uz))
    rows = np.array([[sx, sy, sz, sx2, sy2, sz2,
                      xz.real, xz.imag, yz.real, yz.imag, xy.real, xy.imag]
                     for sx, sy, sz, sx2, sy2, sz2, xz, yz, xy in out])
    return rows, np.array(controls)


def test_kernel_matches_python_reference_bitwise():
    params = SimParams(n_atoms=6, G=1e-4, A=0.04, eta=0.9, dt=0.01,
                       t_final=2.5, seed=31)
    law = ControlLaw.from_entries(beta_xz=-1.5, beta_yz=0.7, xi_y=0.2,
                                  saturation=2.0)
    delay = 3
    innov = InnovationSequence.generate(params, trajectory_index=0)
    rec = simulate_moments(params, law, innovations=innov,
                           feedback_delay_steps=delay)
    ref_rows, ref_controls = _python_euler_reference(params, law, innov, delay)
    np.testing.assert_array_equal(rec.series, ref_rows)
    # record row j holds the control applied while stepping away from
    # sample j, so it aligns with the reference shifted by one
    np.testing.assert_array_equal(rec.controls[:-1], ref_controls[1:])


def test_kernel_matches_python_reference_no_law():
    params = SimParams(n_atoms=9, G=1e-4, A=0.04, eta=1.0, dt=0.01,
                       t_final=1.5, seed=8)
    innov = InnovationSequence.generate(params, trajectory_index=2)
    rec = simulate_moments(params, innovations=innov, trajectory_index=2)
    ref_rows, _ = _python_euler_reference(params, None, innov, 0)
    np.testing.assert_array_equal(rec.series, ref_rows)


def test_single_atom_closure_is_exact():
    # For one atom the hierarchy closes identically, so the moment
    # engine must track the full conditional filter to round-off.
    params = SimParams(n_atoms=1, G=1e-4, A=0.04, eta=0.7, dt=1e-3,
                       t_final=2.0, seed=12)
    law = ControlLaw.from_entries(beta_xz=-2.0, xi_y=0.3)
    rec_m = simulate_moments(params, law)
    rec_s = simulate_sme(params, law)
    dev_first = np.max(np.abs(rec_m.series[:, :3] - rec_s.series[:, :3]))
    dev_second = np.max(np.abs(rec_m.series[:, 3:6] - rec_s.series[:, 3:6]))
    assert dev_first < 1e-12
    assert dev_second < 1e-10


def test_divergence_raises_with_step_info():
    params = SimParams(n_atoms=100, G=1e-4, A=0.04, eta=1.0, dt=0.01,
                       t_final=50.0, seed=3)
    law = ControlLaw.from_entries(beta_xz=-14.5)
    with pytest.raises(DivergenceError) as err:
        simulate_moments(params, law)
    assert err.value.step >= 0
    assert "guard" in str(err.value) or "exceeded" in str(err.value)


def test_ensemble_freeze_semantics():
    params = SimParams(n_atoms=100, G=1e-4, A=0.04, eta=1.0, dt=0.01,
                       t_final=20.0, seed=3)
    law = ControlLaw.from_entries(beta_xz=-14.5)
    ens = ensemble_moments(params, 4, law, stride=10, on_divergence="stop")
    assert ens.n_diverged == 4
    assert np.all(ens.diverged >= 0)
    # frozen states stay at their last admissible values
    assert np.all(np.isfinite(ens.series))
    assert np.max(np.abs(ens.series)) <= 10.0
    with pytest.raises(DivergenceError):
        ensemble_moments(params, 4, law, stride=10, on_divergence="raise")


def test_determinism_bitwise():
    params = SimParams(n_atoms=30, G=1e-4, A=0.04, eta=1.0, dt=0.01,
                       t_final=5.0, seed=77)
    a = simulate_moments(params, stride=10)
    b = simulate_moments(params, stride=10)
    np.testing.assert_array_equal(a.series, b.series)


def test_ensemble_row_matches_single_run():
    params = SimParams(n_atoms=15, G=1e-4, A=0.04, eta=1.0, dt=0.01,
                       t_final=3.0, seed=21)
    ens = ensemble_moments(params, 1, trajectory_indices=[3], stride=5,
                           on_divergence="stop")
    single = simulate_moments(params, stride=5, trajectory_index=3)
    np.testing.assert_array_equal(ens.series[0], single.series)


def test_stride_must_divide_step_count():
    params = SimParams(n_atoms=5, G=1e-4, A=0.04, eta=1.0, dt=0.01,
                       t_final=1.0, seed=0)
    with pytest.raises(Exception) as err:
        simulate_moments(params, stride=7)
    assert "stride" in str(err.value)


def test_zero_noise_reduces_to_deterministic_decay():
    params = SimParams(n_atoms=100, G=0.0, A=0.04, eta=1.0, dt=1e-3,
                       t_final=5.0, seed=0)
    innov = InnovationSequence(
        increments=np.zeros(params.n_steps), dt=params.dt)
    rec = simulate_moments(params, innovations=innov, stride=100)
    expected = np.exp(-2 * params.A * rec.times)
    np.testing.assert_allclose(rec.series[:, 0], expected, atol=2e-4)
