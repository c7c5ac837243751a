"""Nonlinear ground-state branch bifurcating from the linear ground state.

Profiles solve -Lap phi + V phi + lam phi = phi^(2*sigma+1) with phi > 0.
Near the bifurcation the amplitude follows
delta(lam) = |e0 + lam|^(1/(2 sigma)) * (int phi_lin^(2 sigma + 2))^(-1/(2 sigma)),
which both seeds the Newton iteration and is audited by `amplitude_law`.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.interpolate import PchipInterpolator

from .grid import Field, Grid, inner_values, laplacian_values, load_field, norm2, save_field
from .resolvent import NonConvergenceError, ScalarShiftedOp, krylov_solve
from .spectrum import LinearSpectrum

PROFILE_TOL = 1e-10
DERIVATIVE_TOL = 1e-8


class NewtonError(NonConvergenceError):
    pass


@dataclass(frozen=True)
class GroundStateProfile:
    lam: float
    sigma: float
    phi: Field
    delta_measured: float          # <phi, phi_lin>
    delta_predicted: float         # bifurcation formula
    residual: float
    newton_iterations: int

    @property
    def grid(self) -> Grid:
        return self.phi.grid

    def mass(self) -> float:
        return norm2(self.phi) ** 2

    def nonlinear_mass(self, power: float) -> np.ndarray:
        """|phi|^power as a real array (phi is positive, power may be real)."""
        return np.abs(self.phi.values.real) ** power


def delta_prediction(spec: LinearSpectrum, lam: float, sigma: float) -> float:
    grid = spec.grid
    mu = abs(spec.e0 + lam)
    norm = grid.cell_volume * np.sum(spec.phi_lin.values.real ** (2 * sigma + 2))
    return mu ** (1.0 / (2 * sigma)) * norm ** (-1.0 / (2 * sigma))


def _profile_residual(grid: Grid, v: np.ndarray, lam: float, sigma: float,
                      phi: np.ndarray) -> np.ndarray:
    return (-laplacian_values(grid, phi.astype(complex)).real
            + (v + lam) * phi - np.abs(phi) ** (2 * sigma) * phi)


def solve_ground_state(spec: LinearSpectrum, lam: float, sigma: float = 1.0,
                       init: Field | None = None, tol: float = PROFILE_TOL,
                       max_newton: int = 40) -> GroundStateProfile:
    """Newton iteration on F(phi) = -Lap phi + (V + lam) phi - phi^(2s+1).

    The linear system of every step uses the matrix-free profile Jacobian
    (which is L+ at the root) with an FFT preconditioner.
    """
    grid = spec.grid
    v = spec.potential.values
    if lam + spec.e0 <= 0:
        raise ValueError(f"lam = {lam} is outside the bifurcation side (need lam > {-spec.e0})")
    if init is None:
        init = delta_prediction(spec, lam, sigma) * spec.phi_lin
    phi = init.values.real.copy()
    if not np.any(phi):
        raise ValueError("initial guess must be nonzero")

    res = None
    for it in range(1, max_newton + 1):
        f = _profile_residual(grid, v, lam, sigma, phi)
        res = float(np.sqrt(grid.cell_volume * np.sum(f**2)))
        if res <= tol:
            break
        jac = ScalarShiftedOp(
            grid, v + lam - (2 * sigma + 1) * np.abs(phi) ** (2 * sigma),
            shift=0.0, mass_inf=lam,
        )
        try:
            dphi = krylov_solve(jac, -f.astype(complex), rtol=1e-12).real
        except NonConvergenceError as exc:
            raise NewtonError(f"inner solve failed at Newton step {it}: {exc}") from exc
        step = 1.0
        # damp only when the full step would overshoot into sign changes
        while step > 1e-3 and np.min(phi + step * dphi) < -0.2 * np.max(np.abs(phi)):
            step *= 0.5
        phi = phi + step * dphi
    else:
        raise NewtonError(f"Newton stalled at residual {res:.3e} after {max_newton} steps")

    if np.min(phi) < -1e-8 * np.max(np.abs(phi)):
        raise NewtonError("converged solution changes sign: non-ground branch")
    phi = np.maximum(phi, 0.0) if np.min(phi) < 0 else phi
    field = Field(grid, phi.astype(complex))
    return GroundStateProfile(
        lam=lam,
        sigma=sigma,
        phi=field,
        delta_measured=float(inner_values(grid, field.values, spec.phi_lin.values).real),
        delta_predicted=delta_prediction(spec, lam, sigma),
        residual=res,
        newton_iterations=it,
    )


def amplitude_law(profile: GroundStateProfile) -> tuple[float, float]:
    """(measured, predicted) bifurcation amplitude of a converged profile."""
    return profile.delta_measured, profile.delta_predicted


def lplus_operator(spec: LinearSpectrum, profile: GroundStateProfile,
                   shift: complex = 0.0) -> ScalarShiftedOp:
    mass = (spec.potential.values + profile.lam
            - (2 * profile.sigma + 1) * profile.nonlinear_mass(2 * profile.sigma))
    return ScalarShiftedOp(profile.grid, mass, shift, profile.lam)


def lminus_operator(spec: LinearSpectrum, profile: GroundStateProfile,
                    shift: complex = 0.0) -> ScalarShiftedOp:
    mass = (spec.potential.values + profile.lam
            - profile.nonlinear_mass(2 * profile.sigma))
    return ScalarShiftedOp(profile.grid, mass, shift, profile.lam)


def branch_derivatives(spec: LinearSpectrum, profile: GroundStateProfile
                       ) -> tuple[Field, Field]:
    """(d phi / d lam, d^2 phi / d lam^2) from the differentiated profile
    equation:  L+ phi_lam = -phi  and
    L+ phi_lamlam = -2 phi_lam + 2s(2s+1) phi^(2s-1) phi_lam^2.
    """
    grid = profile.grid
    sigma = profile.sigma
    lp = lplus_operator(spec, profile)
    phi = profile.phi.values.real
    dphi = krylov_solve(lp, -phi.astype(complex), rtol=1e-12, maxiter=800).real
    res1 = lp.apply(dphi.astype(complex)).real + phi
    r1 = float(np.sqrt(grid.cell_volume * np.sum(res1**2)))
    if r1 > DERIVATIVE_TOL:
        raise NonConvergenceError(f"L+ solve for phi_lam has residual {r1:.2e}")
    rhs2 = (-2.0 * dphi
            + 2 * sigma * (2 * sigma + 1) * profile.nonlinear_mass(2 * sigma - 1) * dphi**2)
    d2phi = krylov_solve(lp, rhs2.astype(complex), rtol=1e-12, maxiter=800).real
    return Field(grid, dphi.astype(complex)), Field(grid, d2phi.astype(complex))


@dataclass(frozen=True)
class BranchPoint:
    profile: GroundStateProfile
    phi_lam: Field
    phi_lamlam: Field

    @property
    def lam(self) -> float:
        return self.profile.lam

    def mass_slope(self) -> float:
        return 2.0 * inner_values(
            self.profile.grid, self.profile.phi.values, self.phi_lam.values
        ).real


class GroundStateBranch:
    """Sorted family of profiles with lam derivatives and the mass curve."""

    def __init__(self, spec: LinearSpectrum, sigma: float, points: list[BranchPoint]):
        points = sorted(points, key=lambda p: p.lam)
        lams = np.array([p.lam for p in points])
        if len(points) < 2 or np.any(np.diff(lams) <= 0):
            raise ValueError("branch needs at least two strictly increasing lam values")
        masses = np.array([p.profile.mass() for p in points])
        slopes = np.array([p.mass_slope() for p in points])
        if not (np.all(np.diff(masses) > 0) or np.all(np.diff(masses) < 0)):
            raise ValueError("outside stable branch: mass curve is not monotone")
        if np.any(slopes <= 0):
            raise ValueError("outside stable branch: d/dlam ||phi||^2 <= 0")
        self.spec = spec
        self.sigma = sigma
        self.points = points
        self.lams = lams
        self.masses = masses
        self.mass_slopes = slopes
        self._mass_of_lam = PchipInterpolator(lams, masses)
        self._lam_of_mass = PchipInterpolator(masses, lams)

    @property
    def grid(self) -> Grid:
        return self.spec.grid

    def point(self, lam: float) -> BranchPoint:
        j = int(np.argmin(np.abs(self.lams - lam)))
        if abs(self.lams[j] - lam) > 1e-12 * max(1.0, abs(lam)):
            raise KeyError(f"lam = {lam} is not a tabulated branch point")
        return self.points[j]

    def mass(self, lam) -> np.ndarray | float:
        return self._mass_of_lam(lam)

    def lam_of_mass(self, mass) -> np.ndarray | float:
        lo, hi = self.masses[0], self.masses[-1]
        if np.any(np.asarray(mass) < lo - 1e-12) or np.any(np.asarray(mass) > hi + 1e-12):
            raise ValueError(f"mass {mass} outside tabulated branch [{lo}, {hi}]")
        return self._lam_of_mass(mass)

    def mass_slope(self, lam) -> np.ndarray | float:
        return self._mass_of_lam.derivative()(lam)

    def deltas(self) -> np.ndarray:
        return np.array([p.profile.delta_measured for p in self.points])

    def mass_curve(self) -> np.ndarray:
        """Table (lam, N, dN/dlam) with dN from the inner-product identity."""
        if len(self.points) < 3:
            raise ValueError("mass curve wants at least three profiles")
        return np.column_stack([self.lams, self.masses, self.mass_slopes])

    def interp_fields(self, lam: float) -> tuple[np.ndarray, np.ndarray]:
        """(phi, phi_lam) linearly interpolated between branch points."""
        lam = float(lam)
        if lam <= self.lams[0]:
            j, t = 0, 0.0
        elif lam >= self.lams[-1]:
            j, t = len(self.lams) - 2, 1.0
        else:
            j = int(np.searchsorted(self.lams, lam) - 1)
            t = (lam - self.lams[j]) / (self.lams[j + 1] - self.lams[j])
        a, b = self.points[j], self.points[j + 1]
        phi = (1 - t) * a.profile.phi.values + t * b.profile.phi.values
        dphi = (1 - t) * a.phi_lam.values + t * b.phi_lam.values
        return phi, dphi


def build_branch(spec: LinearSpectrum, sigma: float, lams: np.ndarray,
                 newton_budget: int = 8) -> GroundStateBranch:
    """Natural-parameter continuation, previous profile as Newton seed.

    Steps where Newton needs more than `newton_budget` iterations insert a
    midpoint and retry (the branch is fold-free near bifurcation, so this
    terminates quickly).
    """
    lams = sorted(float(l) for l in lams)
    points: list[BranchPoint] = []
    prev: GroundStateProfile | None = None
    queue = list(lams)
    while queue:
        lam = queue.pop(0)
        if prev is None:
            init = None
        else:
            # rescale the seed by the predicted amplitude ratio
            ratio = delta_prediction(spec, lam, sigma) / max(prev.delta_predicted, 1e-300)
            init = Field(spec.grid, prev.phi.values * ratio)
        profile = solve_ground_state(spec, lam, sigma, init=init)
        if prev is not None and profile.newton_iterations > newton_budget:
            mid = 0.5 * (prev.lam + lam)
            if abs(mid - prev.lam) > 1e-12:
                queue.insert(0, lam)
                queue.insert(0, mid)
                continue
        dphi, d2phi = branch_derivatives(spec, profile)
        keep = lam in lams
        if keep or not points:
            points.append(BranchPoint(profile, dphi, d2phi))
        prev = profile
    return GroundStateBranch(spec, sigma, points)


# -- disk cache -------------------------------------------------------------


def potential_hash(spec: LinearSpectrum) -> str:
    digest = hashlib.sha256()
    digest.update(np.ascontiguousarray(spec.potential.values).tobytes())
    digest.update(json.dumps(spec.potential.params, sort_keys=True).encode())
    return digest.hexdigest()[:16]


def save_branch(branch: GroundStateBranch, directory: str | Path):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "sigma": branch.sigma,
        "potential_hash": potential_hash(branch.spec),
        "lams": branch.lams.tolist(),
        "points": [],
    }
    for j, pt in enumerate(branch.points):
        rec = {
            "lam": pt.lam,
            "residual": pt.profile.residual,
            "delta_measured": pt.profile.delta_measured,
            "delta_predicted": pt.profile.delta_predicted,
            "newton_iterations": pt.profile.newton_iterations,
            "files": {},
        }
        for tag, f in (("phi", pt.profile.phi), ("phi_lam", pt.phi_lam),
                       ("phi_lamlam", pt.phi_lamlam)):
            name = f"{tag}_{j:03d}.bin"
            save_field(f, directory / name)
            rec["files"][tag] = name
        manifest["points"].append(rec)
    (directory / "branch.json").write_text(json.dumps(manifest, indent=2))


def load_branch(spec: LinearSpectrum, sigma: float, directory: str | Path
                ) -> GroundStateBranch | None:
    """Load a cached branch; returns None on mismatch or corruption."""
    directory = Path(directory)
    manifest_path = directory / "branch.json"
    if not manifest_path.exists():
        return None
    try:
        manifest = json.loads(manifest_path.read_text())
        if manifest["sigma"] != sigma or manifest["potential_hash"] != potential_hash(spec):
            return None
        points = []
        for rec in manifest["points"]:
            fields = {tag: load_field(directory / name, spec.grid)
                      for tag, name in rec["files"].items()}
            profile = GroundStateProfile(
                lam=rec["lam"], sigma=sigma, phi=fields["phi"],
                delta_measured=rec["delta_measured"],
                delta_predicted=rec["delta_predicted"],
                residual=rec["residual"],
                newton_iterations=rec["newton_iterations"],
            )
            points.append(BranchPoint(profile, fields["phi_lam"], fields["phi_lamlam"]))
        return GroundStateBranch(spec, sigma, points)
    except (OSError, KeyError, ValueError, json.JSONDecodeError):
        return None
