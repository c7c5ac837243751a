"""Reference potentials for the linear operator -Lap + V.

The 1-d workhorse is the scaled Poschl-Teller well, whose bound-state
energies -((nu - j)/w)^2 are known in closed form and serve as oracles.
In 2-d a smooth Gaussian well provides an s ground state plus a p
doublet; an optional quadrupole term splits the doublet to produce an
honest near-degenerate pair.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Field, Grid, validate_decay


@dataclass(frozen=True)
class Potential:
    """Real decaying potential sampled on a grid."""

    grid: Grid
    values: np.ndarray
    name: str
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if np.abs(np.imag(self.values)).max() > 0:
            raise ValueError("potential must be real valued")
        validate_decay(Field(self.grid, self.values.astype(complex)), f"potential {self.name}")

    def as_field(self) -> Field:
        return Field(self.grid, self.values.astype(complex))


def poschl_teller(grid: Grid, nu: float = 1.3, width: float = 1.0) -> Potential:
    """V(x) = -nu(nu+1)/w^2 sech^2(x/w); bound states -((nu-j)/w)^2."""
    if grid.dimension != 1:
        raise ValueError("Poschl-Teller preset is 1-d")
    x = grid.axes[0]
    v = -nu * (nu + 1.0) / width**2 / np.cosh(x / width) ** 2
    return Potential(grid, v, "poschl_teller", {"nu": nu, "width": width})


def poschl_teller_levels(nu: float, width: float = 1.0) -> list[float]:
    """Analytic spectrum of the Poschl-Teller well, ascending."""
    return [-((nu - j) / width) ** 2 for j in range(int(np.ceil(nu)))]


def gaussian_well(
    grid: Grid,
    depth: float = 8.0,
    width: float = 1.5,
    quadrupole: float = 0.0,
    satellite_depth: float = 0.0,
    satellite_offset: tuple[float, float] = (0.9, 1.3),
    satellite_width: float = 1.0,
) -> Potential:
    """Radial well -depth*exp(-r^2/w^2) with optional symmetry breakers.

    `quadrupole` adds quadrupole*(x^2-y^2)*exp(-r^2/w^2), splitting the p
    doublet while keeping both axis reflections.  `satellite_depth` digs a
    second off-axis well, breaking every reflection so the split pair
    mixes genuinely (the near-degenerate test bed).
    """
    if grid.dimension != 2:
        raise ValueError("Gaussian well preset is 2-d")
    x, y = np.meshgrid(*grid.axes, indexing="ij")
    bump = np.exp(-(x**2 + y**2) / width**2)
    v = -depth * bump
    if quadrupole:
        v = v + quadrupole * (x**2 - y**2) * bump
    if satellite_depth:
        ox, oy = satellite_offset
        v = v - satellite_depth * np.exp(
            -((x - ox) ** 2 + (y - oy) ** 2) / satellite_width**2)
    return Potential(
        grid, v, "gaussian_well",
        {"depth": depth, "width": width, "quadrupole": quadrupole,
         "satellite_depth": satellite_depth,
         "satellite_offset": tuple(satellite_offset),
         "satellite_width": satellite_width},
    )


PRESETS = {
    "poschl_teller": poschl_teller,
    "gaussian_well": gaussian_well,
}


def make_potential(name: str, grid: Grid, **params) -> Potential:
    try:
        builder = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown potential preset {name!r}; have {sorted(PRESETS)}") from None
    return builder(grid, **params)
