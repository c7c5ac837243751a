"""Near-degenerate machinery on an honest 2-d pair: a radial well with
an off-axis satellite, splitting the p doublet without any leftover
reflection symmetry (a quadrupole alone keeps both axis parities, which
forces the cross-overlaps and Im N_11 to vanish identically)."""

import numpy as np
import pytest

from nlslab.fgr import gamma_near_degenerate
from nlslab.grid import Grid, inner_values
from nlslab.ground_state import branch_derivatives, solve_ground_state, BranchPoint
from nlslab.linearization import build_linearization, neutral_modes
from nlslab.normal_form import (
    assemble_jn2,
    imn11_closed,
    imn11_direct,
    near_degenerate_corrections,
)
from nlslab.potentials import gaussian_well
from nlslab.spectrum import check_assumptions, discrete_spectrum


@pytest.fixture(scope="module")
def split_pair():
    grid = Grid(2, 128, 14.0)
    pot = gaussian_well(grid, depth=8.0, width=1.5, satellite_depth=0.5)
    spec = discrete_spectrum(pot, k=4, cluster_rtol=0.05)
    assert spec.multiplicity == 2
    rep = check_assumptions(spec)
    assert rep.ok
    lam = -spec.e0 + 0.05
    prof = solve_ground_state(spec, lam, 1.0)
    dphi, d2phi = branch_derivatives(spec, prof)
    pt = BranchPoint(prof, dphi, d2phi)
    lin = build_linearization(spec, pt)
    modes = neutral_modes(lin, spec)
    return spec, pt, lin, modes


def test_split_mode_pair_structure(split_pair):
    spec, pt, lin, modes = split_pair
    grid = spec.grid
    e1, e2 = modes.frequencies
    assert e1 != e2
    assert abs(e1 - e2) / e1 < 0.05           # nearly degenerate
    assert modes.block_residuals.max() <= 1e-8
    for m in range(2):
        for n in range(2):
            val = inner_values(grid, modes.xi[m].values, modes.eta[n].values)
            assert abs(val - (1.0 if m == n else 0.0)) <= 1e-9


def test_imn11_closed_form(split_pair):
    # direct quadrature of <Im N_11, phi> against the frequency-split
    # closed form built from the eigenmode identities
    spec, pt, lin, modes = split_pair
    rng = np.random.default_rng(8)
    for _ in range(5):
        z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        direct = imn11_direct(pt.profile, modes, z)
        closed = imn11_closed(pt.profile, modes, z)
        assert abs(direct) > 1e-8          # genuinely nonzero for this well
        assert abs(direct - closed) <= 1e-6 * abs(direct)


def test_near_degenerate_a11_scale(split_pair):
    spec, pt, lin, modes = split_pair
    jn2 = assemble_jn2(pt.profile, modes)
    corr = near_degenerate_corrections(pt.profile, pt.phi_lam.values, modes, jn2)
    z = np.array([0.4 + 0.2j, 0.3 - 0.5j])
    val = corr.order_slice(1, 1)(z)
    mass = pt.profile.mass()
    zn = np.sum(np.abs(z) ** 2)
    assert abs(val) <= 5.0 * mass * zn        # O(||phi||^2 |z|^2)
    # the removal term is real-valued in combination with its conjugate
    full = corr(z)
    assert abs(np.imag(full)) <= 1e-12 * max(abs(full), 1e-300)


def test_gamma_near_degenerate_positive(split_pair):
    spec, pt, lin, modes = split_pair
    data = gamma_near_degenerate(spec, pt.profile, modes)
    rng = np.random.default_rng(11)
    for _ in range(20):
        z = rng.standard_normal(2) + 1j * rng.standard_normal(2)
        val = data.z_gamma_z(z)
        sup = float(np.abs(pt.profile.phi.values.real).max())
        zn = float(np.sum(np.abs(z) ** 2))
        assert val >= 0.0
        assert val >= 1e-4 * sup**2 * zn**2   # uniformly positive form
    # Gamma entries stay continuous under the small split: conjugate
    # cross-entries agree at the percent level
    g = data.gamma_matrix(np.array([1.0, 1.0j]))
    assert abs(g[0, 1] - np.conj(g[1, 0])) <= 1e-12 * np.abs(g).max()
