import numpy as np
import pytest

from nlslab.grid import (
    Field,
    Grid,
    GridMismatchError,
    WeightedNormSpec,
    apply_laplacian,
    inner_product,
    load_field,
    norm2,
    save_field,
    symplectic_form,
    validate_decay,
    weighted_norm,
)


def gaussian(grid, width=1.0):
    return Field.from_function(grid, lambda x: np.exp(-(x / width) ** 2))


def random_localized(grid, rng):
    raw = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    return Field(grid, raw * np.exp(-grid.r2 / 50.0))


def test_plane_wave_is_laplacian_eigenfunction(grid1d):
    k = 2.0 * np.pi * 12 / (2 * grid1d.box)   # a grid wavenumber
    f = Field.from_function(grid1d, lambda x: np.exp(1j * k * x))
    lf = apply_laplacian(f)
    assert np.allclose(lf.values, -k**2 * f.values, atol=1e-10)


def test_constant_field_has_zero_laplacian(grid1d):
    f = Field(grid1d, np.full(grid1d.shape, 2.5, dtype=complex))
    assert np.abs(apply_laplacian(f).values).max() < 1e-12


def test_laplacian_against_fourth_order_finite_differences(grid1d):
    # independent oracle: 4th-order centered stencil on interior points;
    # the stencil's own h^4 truncation sets the comparison floor, so the
    # Gaussian is wide enough for that floor to sit below 1e-6
    f = gaussian(grid1d, width=6.0)
    h = grid1d.h
    v = f.values
    fd = (-np.roll(v, 2) + 16 * np.roll(v, 1) - 30 * v
          + 16 * np.roll(v, -1) - np.roll(v, -2)) / (12 * h**2)
    lf = apply_laplacian(f).values
    interior = np.abs(grid1d.axes[0]) < 0.5 * grid1d.box
    scale = np.abs(lf[interior]).max()
    assert np.abs((lf - fd)[interior]).max() <= 1e-6 * scale


def test_inner_product_conventions(grid1d, rng):
    f = random_localized(grid1d, rng)
    g = random_localized(grid1d, rng)
    ff = inner_product(f, f)
    assert abs(ff.imag) < 1e-14 * abs(ff.real)
    assert ff.real >= 0
    assert np.isclose(inner_product(f, g), np.conj(inner_product(g, f)))


def test_hermite_functions_are_orthogonal(grid1d):
    # dense-quadrature oracle: h2 and h5 Hermite functions
    x = grid1d.axes[0]
    h2 = (4 * x**2 - 2) * np.exp(-x**2 / 2)
    h5 = (32 * x**5 - 160 * x**3 + 120 * x) * np.exp(-x**2 / 2)
    f = Field(grid1d, h2.astype(complex))
    g = Field(grid1d, h5.astype(complex))
    val = inner_product(f, g) / (norm2(f) * norm2(g))
    assert abs(val) <= 1e-10


def test_symplectic_form_properties(grid1d, rng):
    x = random_localized(grid1d, rng)
    y = random_localized(grid1d, rng)
    assert symplectic_form(x, x) == pytest.approx(0.0, abs=1e-12)
    assert symplectic_form(x, y) == pytest.approx(-symplectic_form(y, x))
    f = gaussian(grid1d)
    assert symplectic_form(f, Field(grid1d, 1j * f.values)) == pytest.approx(
        -norm2(f) ** 2, rel=1e-12)


def test_weighted_norm_reduces_to_l2(grid1d, rng):
    f = random_localized(grid1d, rng)
    spec = WeightedNormSpec(0, 0)
    assert weighted_norm(f, spec) == pytest.approx(
        np.sqrt(inner_product(f, f).real), rel=1e-14)


def test_weighted_norm_bump_at_distance(grid1d):
    r0 = 20.0
    f = Field.from_function(grid1d, lambda x: np.exp(-((x - r0) / 0.5) ** 2))
    val = weighted_norm(f, WeightedNormSpec(0, -4))
    assert val == pytest.approx((1 + r0**2) ** -2 * norm2(f), rel=1e-2)


def test_weighted_norm_sobolev_multiplier(grid1d):
    k = 2.0 * np.pi * 40 / (2 * grid1d.box)
    f = Field.from_function(grid1d, lambda x: np.exp(1j * k * x))
    val = weighted_norm(f, WeightedNormSpec(2, 0))
    assert val == pytest.approx((1 + k**2) * norm2(f), rel=1e-12)


def test_parseval(grid1d, rng):
    from scipy import fft as sfft
    f = random_localized(grid1d, rng)
    phys = norm2(f) ** 2
    four = grid1d.cell_volume * np.sum(np.abs(sfft.fftn(f.values)) ** 2) / grid1d.npoints
    assert abs(phys - four) <= 1e-12 * phys


def test_laplacian_self_adjoint(grid1d, rng):
    f = random_localized(grid1d, rng)
    g = random_localized(grid1d, rng)
    lhs = inner_product(apply_laplacian(f), g)
    rhs = inner_product(f, apply_laplacian(g))
    assert abs(lhs - rhs) <= 1e-10 * norm2(f) * norm2(g)


def test_grid_mismatch_raises(grid1d):
    other = Grid(1, 512, 100.0)
    f = gaussian(grid1d)
    g = Field(other, np.zeros(other.shape, dtype=complex))
    with pytest.raises(GridMismatchError):
        inner_product(f, g)


def test_grid_invariants():
    with pytest.raises(ValueError):
        Grid(1, 12, 10.0)      # below minimum size
    with pytest.raises(ValueError):
        Grid(1, 100, 10.0)     # not a power of two
    with pytest.raises(ValueError):
        Grid(4, 32, 10.0)


def test_field_serialization_roundtrip(tmp_path, grid1d, rng):
    f = random_localized(grid1d, rng)
    path = tmp_path / "field.bin"
    save_field(f, path)
    g = load_field(path)
    assert g.grid == grid1d
    assert np.array_equal(g.values, f.values)


def test_validate_decay_flags_wide_fields(grid1d):
    ok = gaussian(grid1d, width=2.0)
    validate_decay(ok)
    bad = Field.from_function(grid1d, lambda x: 1.0 / (1.0 + x**2))
    with pytest.raises(ValueError):
        validate_decay(bad)


def test_2d_grid_and_laplacian():
    grid = Grid(2, 64, 10.0)
    f = Field.from_function(grid, lambda x, y: np.exp(-(x**2 + y**2)))
    lf = apply_laplacian(f)
    exact = Field.from_function(
        grid, lambda x, y: (4 * (x**2 + y**2) - 4) * np.exp(-(x**2 + y**2)))
    assert np.abs(lf.values - exact.values).max() < 1e-8
