"""Linearization L = JH about the ground state: neutral modes and the
Riesz projections onto discrete / continuous spectrum.

The block operator acts on stacked real pairs (u, v) as
L (u, v) = (L- v, -L+ u).  The neutral eigenproblem L (xi, i eta)^T =
iE (xi, i eta)^T collapses to the product form L- L+ xi = E^2 xi with
eta = L+ xi / E, which is solved by shift-and-invert iteration seeded at
the linear limit E -> e1 - e0, xi -> xi_lin.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator
from scipy.linalg import eigh

from .grid import Field, Grid, inner_values
from .ground_state import BranchPoint, lminus_operator, lplus_operator
from .resolvent import BlockShiftedOp, NonConvergenceError, ScalarShiftedOp, krylov_solve
from .spectrum import LinearSpectrum

ZERO_MODE_TOL = 1e-9
GENERALIZED_TOL = 1e-8
EIGEN_BLOCK_TOL = 1e-8
CLUSTER_RTOL = 1e-6


@dataclass(frozen=True)
class LinearizedOperator:
    """Matrix-free handles to L+, L- and the block map L = JH."""

    spec: LinearSpectrum
    point: BranchPoint
    mass_plus: np.ndarray
    mass_minus: np.ndarray

    @property
    def grid(self) -> Grid:
        return self.point.profile.grid

    @property
    def lam(self) -> float:
        return self.point.lam

    def lplus(self, u: np.ndarray) -> np.ndarray:
        return ScalarShiftedOp(self.grid, self.mass_plus, 0.0, self.lam).apply(u)

    def lminus(self, u: np.ndarray) -> np.ndarray:
        return ScalarShiftedOp(self.grid, self.mass_minus, 0.0, self.lam).apply(u)

    def block(self, w: np.ndarray) -> np.ndarray:
        """L (u, v) = (L- v, -L+ u) on shape (2,) + grid.shape arrays."""
        return BlockShiftedOp(self.grid, self.mass_plus, self.mass_minus,
                              0.0, self.lam).apply(w)

    def shifted_block(self, shift: complex) -> BlockShiftedOp:
        return BlockShiftedOp(self.grid, self.mass_plus, self.mass_minus,
                              shift, self.lam)


def build_linearization(spec: LinearSpectrum, point: BranchPoint) -> LinearizedOperator:
    """Assemble L+/L- and verify the gauge and generalized zero modes."""
    profile = point.profile
    grid = profile.grid
    vol = grid.cell_volume
    lp = lplus_operator(spec, profile)
    lm = lminus_operator(spec, profile)
    phi = profile.phi.values
    r_gauge = np.sqrt(vol * np.sum(np.abs(lm.apply(phi)) ** 2))
    if r_gauge > ZERO_MODE_TOL:
        raise NonConvergenceError(
            f"gauge zero mode violated: ||L- phi|| = {r_gauge:.2e} (profile not converged)")
    r_gen = np.sqrt(vol * np.sum(np.abs(lp.apply(point.phi_lam.values) + phi) ** 2))
    if r_gen > GENERALIZED_TOL:
        raise NonConvergenceError(
            f"generalized mode violated: ||L+ phi_lam + phi|| = {r_gen:.2e}")
    return LinearizedOperator(spec=spec, point=point,
                              mass_plus=lp.mass, mass_minus=lm.mass)


@dataclass(frozen=True)
class NeutralModeSet:
    """Frequencies E_n > 0 and biorthonormal real pairs (xi_n, eta_n)."""

    frequencies: np.ndarray
    xi: tuple[Field, ...]
    eta: tuple[Field, ...]
    block_residuals: np.ndarray

    @property
    def count(self) -> int:
        return len(self.xi)

    @property
    def energy(self) -> float:
        """Scalar frequency of a degenerate cluster."""
        return float(self.frequencies[0])

    def is_degenerate(self) -> bool:
        e = self.frequencies
        return bool(np.all(np.abs(e - e[0]) <= CLUSTER_RTOL * abs(e[0])))


class _ProductOp:
    """(L- L+ - shift) with the free fourth-order symbol preconditioner."""

    def __init__(self, lin: LinearizedOperator, shift: float):
        self.lin = lin
        self.shift = shift
        sym = (lin.grid.k2 + lin.lam) ** 2 - shift
        self.symbol = sym

    def apply(self, u: np.ndarray) -> np.ndarray:
        return self.lin.lminus(self.lin.lplus(u)) - self.shift * u

    def precondition(self, u: np.ndarray) -> np.ndarray:
        from scipy import fft as sfft
        return sfft.ifftn(sfft.fftn(u) / self.symbol)


def neutral_modes(lin: LinearizedOperator, spec: LinearSpectrum,
                  tol: float = EIGEN_BLOCK_TOL, max_sweeps: int = 30) -> NeutralModeSet:
    """Neutral modes of L via inverse iteration on L- L+.

    The four zero/generalized directions are removed by the oblique
    spectral projector |phi_lam><phi| of the product operator.  Within a
    cluster the small (A, B) pencil in the L+ metric fixes frequencies and
    the biorthonormalization <xi_m, eta_n> = delta_mn.
    """
    grid = lin.grid
    vol = grid.cell_volume
    nmodes = spec.multiplicity
    phi = lin.point.profile.phi.values
    phi_lam = lin.point.phi_lam.values
    denom = inner_values(grid, phi_lam, phi)

    def deflate(u: np.ndarray) -> np.ndarray:
        return u - (inner_values(grid, u, phi) / denom) * phi_lam

    e_guess = spec.e1 + lin.lam
    shift = 0.995 * e_guess**2
    xs = [deflate(x.values.copy()) for x in spec.xi_lin[:nmodes]]
    for sweep in range(max_sweeps):
        op = _ProductOp(lin, shift)
        new = []
        for x in xs:
            # near-singular solves stagnate along the target direction,
            # which is exactly what inverse iteration amplifies
            y = krylov_solve(op, x, project=deflate, rtol=1e-9, maxiter=1200,
                             strict=False)
            new.append(deflate(y) / np.sqrt(vol * np.sum(np.abs(y) ** 2)))
        # Gram-Schmidt inside the block keeps the iteration subspace full
        for i in range(len(new)):
            for j in range(i):
                new[i] = new[i] - inner_values(grid, new[i], new[j]) * new[j]
            new[i] /= np.sqrt(vol * np.sum(np.abs(new[i]) ** 2))
        xs = [x.real.astype(complex) for x in new]
        lpx = [lin.lplus(x) for x in xs]
        mx = [lin.lminus(y) for y in lpx]
        a = np.array([[inner_values(grid, mx[j], lpx[i]).real
                       for j in range(nmodes)] for i in range(nmodes)])
        b = np.array([[inner_values(grid, xs[j], lpx[i]).real
                       for j in range(nmodes)] for i in range(nmodes)])
        if nmodes > 1:
            e2s_sweep = np.linalg.eigvalsh(np.linalg.solve(b, a))
            e2 = float(np.min(e2s_sweep))
        else:
            e2 = a[0, 0] / b[0, 0]
        resid = max(
            float(np.sqrt(vol * np.sum(np.abs(mx[i] - e2 * xs[i]) ** 2)).real)
            for i in range(nmodes)
        ) if nmodes == 1 else None
        if nmodes > 1:
            # cluster residual against the per-vector Rayleigh quotients
            resid = max(
                float(np.sqrt(vol * np.sum(np.abs(
                    mx[i] - (a[i, i] / b[i, i]) * xs[i]) ** 2)).real)
                for i in range(nmodes)
            )
        if resid <= 0.2 * tol * np.sqrt(abs(e2)):
            break
        # tighten the shift toward the Rayleigh quotient as accuracy improves
        gap = max(min(1e-3, resid / abs(e2)), 1e-10)
        shift = float(e2) * (1.0 - gap)
    else:
        raise NonConvergenceError("neutral mode iteration did not converge")

    # small pencil in the L+ metric: frequencies + biorthonormal rotation
    a = np.array([[inner_values(grid, lin.lminus(lpx[j]), lpx[i]).real
                   for j in range(nmodes)] for i in range(nmodes)])
    b = np.array([[inner_values(grid, xs[j], lpx[i]).real
                   for j in range(nmodes)] for i in range(nmodes)])
    if np.any(np.linalg.eigvalsh(b) <= 0):
        raise NonConvergenceError("mode cluster has non-positive L+ metric (Krein sign)")
    e2s, rot = eigh(a, b)
    if np.any(e2s <= 0):
        raise NonConvergenceError("no positive squared frequency found")

    xis, etas, freqs, resids = [], [], [], []
    for m in range(nmodes):
        e = float(np.sqrt(e2s[m]))
        x = sum(rot[i, m] * xs[i] for i in range(nmodes)) * np.sqrt(e)
        x = deflate(x).real
        y = lin.lplus(x.astype(complex)).real / e
        c = vol * np.sum(x * y)
        if c < 0:
            x, y, c = -x, y, -c  # fix <xi, eta> > 0 before rescaling
        x /= np.sqrt(c)
        y /= np.sqrt(c)
        # block residual || L (xi, i eta) - iE (xi, i eta) ||
        w = np.stack([x.astype(complex), 1j * y])
        rw = lin.block(w) - 1j * e * w
        resids.append(np.sqrt(vol * np.sum(np.abs(rw) ** 2)))
        freqs.append(e)
        xis.append(Field(grid, x.astype(complex)))
        etas.append(Field(grid, y.astype(complex)))

    freqs = np.asarray(freqs)
    resids = np.asarray(resids)
    if np.any(2.0 * freqs <= lin.lam):
        raise NonConvergenceError(
            f"no neutral frequency with 2E > lam: E = {freqs}, lam = {lin.lam}")
    if resids.max() > tol * max(freqs.max(), 1.0):
        raise NonConvergenceError(f"block eigen-residual {resids.max():.2e} above {tol:.1e}")
    if nmodes != spec.multiplicity:
        raise NonConvergenceError("cluster dimension inconsistent with the linear spectrum")
    return NeutralModeSet(frequencies=freqs, xi=tuple(xis), eta=tuple(etas),
                          block_residuals=resids)


def riesz_projections(lin: LinearizedOperator, modes: NeutralModeSet):
    """(P_d, P_c) appliers on stacked 2-vector fields.

    P_d is the rank-(2N+2) Riesz projection: zero-mode dyads weighted by
    2 / d_lam ||phi||^2 plus one dyad per +-iE eigenvector, built from the
    adjoint eigenvectors (eta, +-i xi) so that P_d^2 = P_d and P_d L = L P_d.
    """
    grid = lin.grid
    point = lin.point
    slope = point.mass_slope()
    if abs(slope) < 1e-12:
        raise ZeroDivisionError("degenerate branch: d_lam ||phi||^2 below 1e-12")
    phi = point.profile.phi.values
    phi_lam = point.phi_lam.values
    pairs = [(x.values.real, y.values.real) for x, y in zip(modes.xi, modes.eta)]

    def pd(w: np.ndarray) -> np.ndarray:
        w = np.asarray(w, dtype=complex)
        out = np.zeros_like(w)
        c1 = inner_values(grid, w[1], phi_lam)
        c2 = inner_values(grid, w[0], phi)
        out[1] += (2.0 / slope) * c1 * phi
        out[0] += (2.0 / slope) * c2 * phi_lam
        for x, y in pairs:
            cp = inner_values(grid, w[0], y) - 1j * inner_values(grid, w[1], x)
            cm = inner_values(grid, w[0], y) + 1j * inner_values(grid, w[1], x)
            out[0] += 0.5 * (cp + cm) * x
            out[1] += 0.5j * (cp - cm) * y
        return out

    def pc(w: np.ndarray) -> np.ndarray:
        return np.asarray(w, dtype=complex) - pd(w)

    return pd, pc


@dataclass(frozen=True)
class ThresholdReport:
    checked: bool
    resonance_suspected: bool
    matching_value: float
    note: str = ""


def check_threshold_resonance(spec: LinearSpectrum, threshold: float = 1e-6
                              ) -> ThresholdReport:
    """Zero-energy resonance certificate for -Lap + V in one dimension.

    Integrates -u'' + V u = 0 from the left edge with the bounded Jost
    data (u, u') = (1, 0) and tests whether the continuation stays bounded
    on the right: a vanishing normalized slope there means both Jost
    solutions are bounded, i.e. a threshold resonance.
    """
    grid = spec.grid
    if grid.dimension != 1:
        return ThresholdReport(False, False, np.nan,
                               "threshold check implemented for d = 1 only")
    x = grid.axes[0]
    v_interp = PchipInterpolator(x, spec.potential.values)
    x0, x1 = 0.9 * x[0], 0.9 * x[-1]

    def rhs(t, y):
        return [y[1], v_interp(t) * y[0]]

    sol = solve_ivp(rhs, (x0, x1), [1.0, 0.0], rtol=1e-12, atol=1e-14,
                    dense_output=False, method="RK45")
    if not sol.success:
        return ThresholdReport(False, False, np.nan, "Jost integration failed")
    u, du = sol.y[0, -1], sol.y[1, -1]
    scale = abs(u) + abs(du) * grid.box
    match = abs(du) * grid.box / scale if scale > 0 else 0.0
    suspected = match < threshold
    if suspected:
        warnings.warn("threshold resonance suspected for -Lap + V", stacklevel=2)
    return ThresholdReport(True, suspected, float(match))
