import numpy as np
import pytest

from nlslab.grid import Field, inner_values, norm2
from nlslab.ground_state import (
    NewtonError,
    amplitude_law,
    branch_derivatives,
    build_branch,
    delta_prediction,
    load_branch,
    lplus_operator,
    save_branch,
    solve_ground_state,
)


def test_newton_converges_quickly_from_bifurcation_seed(pt_spectrum):
    lam = -pt_spectrum.e0 + 1e-3
    prof = solve_ground_state(pt_spectrum, lam, 1.0)
    assert prof.newton_iterations <= 8
    assert prof.residual <= 1e-10


def test_profile_solves_equation(pipe_single):
    # plug the returned profile back into F
    pt = pipe_single.branch.points[1]
    prof = pt.profile
    spec = pipe_single.spec
    grid = prof.grid
    phi = prof.phi.values.real
    from nlslab.grid import laplacian_values
    f = (-laplacian_values(grid, phi.astype(complex)).real
         + (spec.potential.values + prof.lam) * phi - phi**3)
    assert np.sqrt(grid.cell_volume * np.sum(f**2)) <= 1e-10


def test_mass_vanishes_toward_bifurcation(pt_spectrum):
    masses = []
    for mu in (1e-2, 1e-3, 1e-4):
        prof = solve_ground_state(pt_spectrum, -pt_spectrum.e0 + mu, 1.0)
        masses.append(prof.mass())
    assert masses[0] > masses[1] > masses[2]
    # N ~ delta^2 ~ mu at sigma = 1
    assert masses[2] / masses[0] == pytest.approx(1e-2, rel=0.1)


def test_positivity_along_branch(pipe_sweep):
    for pt in pipe_sweep.branch.points:
        v = pt.profile.phi.values.real
        assert v.min() >= -1e-10 * v.max()


def test_amplitude_law_near_bifurcation(pt_spectrum):
    prof = solve_ground_state(pt_spectrum, -pt_spectrum.e0 + 1e-3, 1.0)
    measured, predicted = amplitude_law(prof)
    assert measured / predicted == pytest.approx(1.0, abs=0.05)


def test_amplitude_prediction_scalings(pt_spectrum):
    lam = -pt_spectrum.e0
    d1 = delta_prediction(pt_spectrum, lam + 1e-3, 1.0)
    d2 = delta_prediction(pt_spectrum, lam + 5e-4, 1.0)
    assert d2 / d1 == pytest.approx(2 ** -0.5, rel=1e-12)
    assert delta_prediction(pt_spectrum, lam + 4e-3, 1.0) ** 2 / d1**2 == \
        pytest.approx(4.0, rel=1e-12)


def test_branch_derivative_defining_equations(pipe_single):
    spec = pipe_single.spec
    pt = pipe_single.branch.points[1]
    grid = pt.profile.grid
    lp = lplus_operator(spec, pt.profile)
    r1 = lp.apply(pt.phi_lam.values) + pt.profile.phi.values
    assert np.sqrt(grid.cell_volume * np.sum(np.abs(r1) ** 2)) <= 1e-8


def test_branch_derivatives_match_finite_differences(pt_spectrum):
    # FD oracle in lam: centered stencils converge to the linear-system
    # derivatives at second order (measured ratio is 4.00 per halving)
    lam = -pt_spectrum.e0 + 5e-2
    prof = solve_ground_state(pt_spectrum, lam, 1.0)
    dphi, d2phi = branch_derivatives(pt_spectrum, prof)
    errs1, errs2 = [], []
    for h in (2e-3, 1e-3):
        plus = solve_ground_state(pt_spectrum, lam + h, 1.0)
        minus = solve_ground_state(pt_spectrum, lam - h, 1.0)
        fd = (plus.phi.values - minus.phi.values) / (2 * h)
        errs1.append(norm2(Field(prof.grid, dphi.values - fd)))
        fd2 = (plus.phi.values - 2 * prof.phi.values + minus.phi.values) / h**2
        errs2.append(norm2(Field(prof.grid, d2phi.values - fd2)))
    assert errs1[0] / errs1[1] == pytest.approx(4.0, rel=0.15)
    assert errs2[0] / errs2[1] == pytest.approx(4.0, rel=0.15)
    assert errs1[1] <= 1e-3 * norm2(dphi)
    assert errs2[1] <= 1e-3 * norm2(d2phi)


def test_lam_outside_bifurcation_side_rejected(pt_spectrum):
    with pytest.raises(ValueError):
        solve_ground_state(pt_spectrum, -pt_spectrum.e0 - 1e-3, 1.0)


def test_zero_seed_rejected(pt_spectrum):
    zero = Field.zeros(pt_spectrum.grid)
    with pytest.raises(ValueError):
        solve_ground_state(pt_spectrum, -pt_spectrum.e0 + 1e-3, 1.0, init=zero)


def test_mass_curve_slope_matches_finite_differences(pipe_sweep):
    branch = pipe_sweep.branch
    table = branch.mass_curve()
    lams, masses, slopes = table[:, 0], table[:, 1], table[:, 2]
    # interior FD oracle on the tabulated (non-uniform) grid
    for j in range(1, len(lams) - 1):
        fd = (masses[j + 1] - masses[j - 1]) / (lams[j + 1] - lams[j - 1])
        # non-uniform centered difference carries O(dlam) bias; compare
        # against the local second-order reconstruction
        h1 = lams[j] - lams[j - 1]
        h2 = lams[j + 1] - lams[j]
        fd2 = (masses[j + 1] * h1**2 - masses[j - 1] * h2**2
               + masses[j] * (h2**2 - h1**2)) / (h1 * h2 * (h1 + h2))
        assert slopes[j] == pytest.approx(fd2, rel=1e-4)
        assert slopes[j] == pytest.approx(fd, rel=0.3)


def test_mass_inverse_roundtrip(pipe_sweep):
    branch = pipe_sweep.branch
    for lam in branch.lams:
        assert branch.lam_of_mass(branch.mass(lam)) == pytest.approx(lam, abs=1e-10)


def test_branch_amplitude_smoothness(pipe_sweep):
    deltas = pipe_sweep.branch.deltas()
    jumps = np.abs(np.diff(deltas))
    assert np.all(jumps <= 10 * np.median(jumps) + 1e-12)


def test_denominator_scaling_audit(pipe_sweep):
    # 1/<phi, phi_lam> ~ delta^(2 sigma - 2): flat at sigma = 1, within 2x
    vals = np.array([1.0 / inner_values(
        pt.profile.grid, pt.profile.phi.values, pt.phi_lam.values).real
        for pt in pipe_sweep.branch.points])
    assert vals.max() / vals.min() <= 2.0


def test_branch_cache_roundtrip(tmp_path, pipe_single):
    save_branch(pipe_single.branch, tmp_path / "cache")
    loaded = load_branch(pipe_single.spec, 1.0, tmp_path / "cache")
    assert loaded is not None
    assert np.allclose(loaded.lams, pipe_single.branch.lams)
    a = pipe_single.branch.points[0].profile.phi.values
    b = loaded.points[0].profile.phi.values
    assert np.array_equal(a, b)


def test_corrupted_cache_returns_none(tmp_path, pipe_single):
    save_branch(pipe_single.branch, tmp_path / "cache")
    (tmp_path / "cache" / "branch.json").write_text("{broken")
    assert load_branch(pipe_single.spec, 1.0, tmp_path / "cache") is None


def test_cache_rejects_other_sigma(tmp_path, pipe_single):
    save_branch(pipe_single.branch, tmp_path / "cache")
    assert load_branch(pipe_single.spec, 2.0, tmp_path / "cache") is None


def test_general_sigma_profile(pt_spectrum):
    prof = solve_ground_state(pt_spectrum, -pt_spectrum.e0 + 5e-3, 1.5)
    assert prof.residual <= 1e-10
    measured, predicted = amplitude_law(prof)
    assert measured / predicted == pytest.approx(1.0, abs=0.1)
