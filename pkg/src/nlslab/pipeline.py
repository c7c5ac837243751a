"""End-to-end assembly: grid -> spectrum -> branch -> modes -> normal
form -> FGR, with a disk cache for the branch and one-stop bundles for
the evolution and reduced-model consumers."""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fgr import FgrData, gamma_matrices
from .grid import Grid
from .ground_state import GroundStateBranch, build_branch, load_branch, save_branch
from .linearization import (
    LinearizedOperator,
    NeutralModeSet,
    build_linearization,
    neutral_modes,
    riesz_projections,
)
from .normal_form import NormalFormData, build_normal_form
from .potentials import Potential, make_potential
from .reduced import ReducedModel
from .spectrum import LinearSpectrum, discrete_spectrum


@dataclass
class BranchPipeline:
    """Everything computed along one lam window of the branch."""

    spec: LinearSpectrum
    branch: GroundStateBranch
    sigma: float
    modes: dict[float, NeutralModeSet] = field(default_factory=dict)
    nf: dict[float, NormalFormData] = field(default_factory=dict)
    fgr: dict[float, FgrData] = field(default_factory=dict)
    linearizations: dict[float, LinearizedOperator] = field(default_factory=dict)
    projectors: dict[float, tuple] = field(default_factory=dict)

    @property
    def grid(self) -> Grid:
        return self.spec.grid

    def tables(self):
        from .evolution import ModulationTables
        return ModulationTables(self.branch, self.modes, self.nf)

    def reduced_model(self, interpolate_rates: bool = False) -> ReducedModel:
        energies = {l: self.modes[l].energy for l in self.branch.lams}
        return ReducedModel(self.branch, energies, self.fgr, self.sigma,
                            interpolate_rates=interpolate_rates)

    def point(self, lam: float):
        return self.branch.point(lam)


def build_spectrum(dimension: int, n: int, box: float, potential_name: str,
                   potential_params: dict, k: int = 2) -> LinearSpectrum:
    grid = Grid(dimension, n, box)
    pot = make_potential(potential_name, grid, **potential_params)
    return discrete_spectrum(pot, k=k)


def build_pipeline(spec: LinearSpectrum, sigma: float, offsets: np.ndarray,
                   cache_dir: str | Path | None = None,
                   with_fgr: bool = True, with_nf: bool = True) -> BranchPipeline:
    """Build (or load) the branch at lam = -e0 + offsets and attach the
    per-point linearization, modes, normal form and FGR data."""
    lams = sorted(-spec.e0 + float(m) for m in offsets)
    branch = None
    if cache_dir is not None:
        cached = load_branch(spec, sigma, cache_dir)
        if cached is not None and len(cached.lams) == len(lams) and \
                np.allclose(cached.lams, lams, rtol=0, atol=1e-12):
            branch = cached
    if branch is None:
        branch = build_branch(spec, sigma, lams)
        if cache_dir is not None:
            save_branch(branch, cache_dir)

    pipe = BranchPipeline(spec=spec, branch=branch, sigma=sigma)
    for pt in branch.points:
        lin = build_linearization(spec, pt)
        m = neutral_modes(lin, spec)
        pd, pc = riesz_projections(lin, m)
        pipe.linearizations[pt.lam] = lin
        pipe.projectors[pt.lam] = (pd, pc)
        pipe.modes[pt.lam] = m
        if with_nf:
            pipe.nf[pt.lam] = build_normal_form(spec, lin, pc, m)
        if with_fgr:
            pipe.fgr[pt.lam] = gamma_matrices(spec, pt.profile, m)
    return pipe


def equipartition_window(center_offset: float, halfwidth: float,
                         points: int = 5) -> np.ndarray:
    """lam-window offsets for a mass-transfer run: a short tail below the
    start point and room above for the predicted drift."""
    below = np.linspace(-0.3 * halfwidth, 0.0, max(2, points // 2 + 1))
    above = np.linspace(0.0, halfwidth, points - len(below) + 2)[1:]
    return center_offset + np.unique(np.concatenate([below, above]))
