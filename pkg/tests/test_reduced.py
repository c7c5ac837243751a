import numpy as np
import pytest

from nlslab.reduced import (
    ReducedState,
    envelopes,
    equipartition_invariant,
    integrate_reduced,
    predict_equipartition,
)


@pytest.fixture(scope="module")
def model(pipe_single):
    lam0 = pipe_single.branch.lams[1]
    return pipe_single.reduced_model().freeze(lam0), lam0


def test_zero_amplitude_is_fixed_point(model):
    m, lam0 = model
    traj = integrate_reduced(m, ReducedState(0.0, lam0, np.zeros(1, complex)),
                             200.0, 0.05)
    assert np.abs(traj.z).max() == 0.0
    assert np.abs(traj.lam - lam0).max() <= 1e-12


def test_scalar_riccati_closed_form(model):
    # frozen coefficients: |z(t)|^2 = (|z0|^-2 + 2 gamma_hat t)^-1
    m, lam0 = model
    z0 = np.array([0.05 + 0.02j])
    rate = m.growth_rate(lam0, z0 / np.abs(np.sum(np.abs(z0)**2))**0.5,
                         use_gamma0=False) / 1.0
    gamma_hat = m.fgr[1].quartic_rate_dyn(z0)
    t_end = 0.2 / (gamma_hat * np.sum(np.abs(z0) ** 2))
    traj = integrate_reduced(m, ReducedState(0.0, lam0, z0), float(t_end), 0.05)
    exact = (np.sum(np.abs(z0) ** 2) ** -1 + 2 * gamma_hat * traj.times) ** -1
    rel = np.abs(traj.z_abs**2 - exact) / exact
    assert rel.max() <= 1e-6


def test_invariant_exact_with_gamma0(model):
    m, lam0 = model
    z0 = np.array([0.08 + 0.0j])
    t_end = 2000.0
    traj = integrate_reduced(m, ReducedState(0.0, lam0, z0), t_end, 0.05,
                             z_damping="gamma0")
    drift = equipartition_invariant(traj)
    assert np.abs(drift).max() <= 1e-8


def test_invariant_drift_with_true_gamma_is_higher_order(model):
    m, lam0 = model
    z0 = np.array([0.08 + 0.0j])
    traj = integrate_reduced(m, ReducedState(0.0, lam0, z0), 2000.0, 0.05)
    drift = equipartition_invariant(traj)
    # Gamma vs Gamma0 mismatch integrates to a small fraction of |z0|^2
    assert np.abs(drift).max() <= 0.01 * np.sum(np.abs(z0) ** 2)


def test_monotonicity(model):
    m, lam0 = model
    z0 = np.array([0.06 + 0.03j])
    traj = integrate_reduced(m, ReducedState(0.0, lam0, z0), 3000.0, 0.05)
    za = traj.z_abs
    assert np.all(np.diff(za) <= 1e-12)
    assert np.all(np.diff(traj.mass) >= -1e-14)


def test_envelopes(model):
    m, lam0 = model
    z0 = 0.07
    z_plus, z_minus, c_plus, c_minus = envelopes(m, lam0, z0)
    assert c_plus <= c_minus
    assert z_plus(0.0) == pytest.approx(z0, rel=1e-12)
    assert z_minus(0.0) == pytest.approx(z0, rel=1e-12)
    # t -> infinity tail ~ t^(-1/2)
    big = 1e9
    assert z_plus(big) == pytest.approx(
        (c_plus * m.delta_inf(lam0) ** 2 * big) ** -0.5, rel=1e-3)
    traj = integrate_reduced(m, ReducedState(0.0, lam0, np.array([z0 + 0j])),
                             5000.0, 0.05)
    za = traj.z_abs
    assert np.all(za <= 5.0 * z_plus(traj.times))
    assert np.all(za >= 0.2 * z_minus(traj.times))


def test_predict_equipartition(model):
    m, lam0 = model
    pred0 = predict_equipartition(m, lam0, np.zeros(1, complex))
    assert pred0.lam_inf == pytest.approx(lam0, abs=1e-12)
    z0 = np.array([0.05 + 0.05j])
    pred = predict_equipartition(m, lam0, z0)
    assert pred.gain == pytest.approx(0.5 * np.sum(np.abs(z0) ** 2), rel=1e-12)
    assert pred.lam_inf > lam0


def test_long_time_reaches_predicted_mass(model):
    m, lam0 = model
    z0 = np.array([0.06 + 0.0j])
    pred = predict_equipartition(m, lam0, z0)
    gamma_hat = m.fgr[1].quartic_rate_dyn(z0)
    t_end = 1e3 / (gamma_hat * np.sum(np.abs(z0) ** 2))  # |z|^2 down ~2000x
    traj = integrate_reduced(m, ReducedState(0.0, lam0, z0), float(t_end),
                             float(t_end) / 4000, z_damping="gamma0",
                             enforce_phase_resolution=False)
    assert traj.mass[-1] == pytest.approx(pred.mass_inf, rel=1e-3)


def test_fast_phase_contract(model):
    m, lam0 = model
    with pytest.raises(ValueError):
        integrate_reduced(m, ReducedState(0.0, lam0, np.array([0.01 + 0j])),
                          10.0, 1.0)


def test_output_stride_halving_is_inert(model):
    m, lam0 = model
    z0 = np.array([0.05 + 0.02j])
    a = integrate_reduced(m, ReducedState(0.0, lam0, z0), 500.0, 0.05)
    b = integrate_reduced(m, ReducedState(0.0, lam0, z0), 500.0, 0.025)
    assert a.z_abs[-1] == pytest.approx(b.z_abs[-1], rel=1e-9)
    assert a.lam[-1] == pytest.approx(b.lam[-1], rel=1e-12)
