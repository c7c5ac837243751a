"""Fermi-Golden-Rule machinery: resonant source vectors, the damping
matrices Z, Gamma, Lambda, and their leading small-amplitude form Gamma0.

The 2x2 matrix resolvent (L + 2iE - 0)^{-1} P_c is evaluated after
diagonalizing J with the unitary

        U = (1/sqrt 2) [[1, i], [i, 1]],      U* J U = i sigma_3,

which splits every entry of Z into one below-threshold real solve with
(A + 2E)^{-1} and one limiting-absorption solve with (A - 2E - i0)^{-1},
A = -Lap + V + lam.  The dropped coupling through the soliton potential
is O(delta^(2 sigma)) relative and is recorded as `reduction_bound`.

Sign conventions of the -0 prescription are pinned by positivity: the
builders verify z* Gamma z >= 0 on sampled z and raise otherwise.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .grid import Field, Grid, WeightedNormSpec, inner_values, weighted_norm
from .ground_state import GroundStateProfile, delta_prediction
from .linearization import NeutralModeSet
from .resolvent import (
    LimitingAbsorptionResult,
    ScalarShiftedOp,
    default_eps_schedule,
    krylov_solve,
    limiting_absorption,
)
from .spectrum import LinearSpectrum, project_continuous_values

U_DIAG = np.array([[1.0, 1.0j], [1.0j, 1.0]]) / np.sqrt(2.0)

# The source-vector quadratic forms (eq. Fk2 pairing) carry 4x the
# dynamical rates: the z^2 forcing slice of the quadratic nonlinearity is
# one quarter of sum_k z_k G_k.  The damping in d|z|^2/dt and the secular
# mass growth both rescale by this factor, leaving the half-split of the
# mode mass invariant; the *_dyn evaluators below are the rates the
# reduced model and the PDE measurements obey.
DYNAMICAL_SCALE = 0.25


class FgrSignConventionError(RuntimeError):
    """z* Gamma z came out negative: the -0 prescription is inconsistent."""


def source_vectors(profile: GroundStateProfile, modes: NeutralModeSet,
                   z: np.ndarray) -> list[np.ndarray]:
    """Resonant source 2-vectors G_k = (B(k), D(k)), linear in z.

    B(k) = -i s phi^(2s-1) [ (z.xi) eta_k + (z.eta) xi_k ]
    D(k) = -s phi^(2s-1) [ 3 (z.xi) xi_k - (z.eta) eta_k ]
           - 2 s (s-1) phi^(2s-1) (z.xi) xi_k
    """
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if z.size != modes.count:
        raise ValueError(f"z has {z.size} entries for {modes.count} modes")
    s = profile.sigma
    pw = profile.nonlinear_mass(2 * s - 1)
    zxi = sum(z[n] * modes.xi[n].values for n in range(modes.count))
    zeta = sum(z[n] * modes.eta[n].values for n in range(modes.count))
    out = []
    for k in range(modes.count):
        xi_k = modes.xi[k].values
        eta_k = modes.eta[k].values
        b = -1j * s * pw * (zxi * eta_k + zeta * xi_k)
        d = -s * pw * (3.0 * zxi * xi_k - zeta * eta_k) \
            - 2.0 * s * (s - 1.0) * pw * zxi * xi_k
        out.append(np.stack([b, d]))
    return out


def limiting_absorption_resolve(grid: Grid, mass: np.ndarray, mass_inf: float,
                                shift: float, f: np.ndarray,
                                eps: np.ndarray | None = None,
                                rtol: float = 1e-12) -> LimitingAbsorptionResult:
    """(A - shift - i0)^{-1} f for A = -Lap + mass(x), mass -> mass_inf.

    `shift` must exceed mass_inf so the resonance sits inside the
    continuous spectrum; the regulator schedule defaults to
    `default_eps_schedule` at that offset.
    """
    offset = shift - mass_inf
    if offset <= 0:
        raise ValueError(f"shift {shift} is below the continuum edge {mass_inf}")
    if eps is None:
        eps = default_eps_schedule(grid, offset)

    def solve_at(e: float) -> np.ndarray:
        op = ScalarShiftedOp(grid, mass, -shift - 1j * e, mass_inf)
        return krylov_solve(op, f, rtol=rtol, maxiter=2000)

    return limiting_absorption(solve_at, eps, weight=grid.weight(-4))


def _below_threshold_solve(grid: Grid, mass: np.ndarray, mass_inf: float,
                           shift: float, f: np.ndarray) -> np.ndarray:
    op = ScalarShiftedOp(grid, mass, shift, mass_inf)
    return krylov_solve(op, f, rtol=1e-12, maxiter=2000)


def _split_components(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """w = U^dagger g for a stacked 2-vector field."""
    w1 = (g[0] - 1j * g[1]) / np.sqrt(2.0)
    w2 = (-1j * g[0] + g[1]) / np.sqrt(2.0)
    return w1, w2


@dataclass
class FgrData:
    """Coefficient form of the damping matrices.

    zc[k, l, m, mp] is the coefficient of z_m * conj(z_mp) in Z^{(k,l)},
    so Z(z) is quadratic in (z, zbar) and Gamma(z) = (Z(z) + Z(z)^H)/2 is
    Hermitian for every z.  gamma0 holds the analogous tensor of the
    leading form on the linear eigenfunctions.
    """

    lam: float
    sigma: float
    delta: float
    frequencies: np.ndarray
    zc: np.ndarray
    gamma0_prefactor: float
    gamma0_c: np.ndarray            # C[a, b, c, d] = <i r_ab, q_cd>
    eps: np.ndarray
    eps_defects: np.ndarray
    reduction_bound: float
    u_matrix: np.ndarray = field(default_factory=lambda: U_DIAG.copy())

    @property
    def nmodes(self) -> int:
        return self.zc.shape[0]

    def z_matrix(self, z: np.ndarray) -> np.ndarray:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        return np.einsum("klmp,m,p->kl", self.zc, z, np.conj(z))

    def gamma_matrix(self, z: np.ndarray) -> np.ndarray:
        zm = self.z_matrix(z)
        return 0.5 * (zm + zm.conj().T)

    def lambda_matrix(self, z: np.ndarray) -> np.ndarray:
        zm = self.z_matrix(z)
        return 0.5 * (zm.conj().T - zm)

    def z_gamma_z(self, z: np.ndarray) -> float:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        return float(np.real(np.conj(z) @ self.gamma_matrix(z) @ z))

    def z_gamma0_z(self, z: np.ndarray) -> float:
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        quad = np.einsum("abcd,a,b,c,d->", self.gamma0_c, z, z, np.conj(z), np.conj(z))
        return float(self.gamma0_prefactor * np.real(1j * quad))

    def quartic_rate(self, z: np.ndarray) -> float:
        """z* Gamma z / |z|^4, the damping coefficient along direction z."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        zn = float(np.sum(np.abs(z) ** 2))
        return self.z_gamma_z(z) / zn**2

    # dynamical normalization (see DYNAMICAL_SCALE note)

    def gamma_matrix_dyn(self, z: np.ndarray) -> np.ndarray:
        return DYNAMICAL_SCALE * self.gamma_matrix(z)

    def lambda_matrix_dyn(self, z: np.ndarray) -> np.ndarray:
        return DYNAMICAL_SCALE * self.lambda_matrix(z)

    def z_gamma_z_dyn(self, z: np.ndarray) -> float:
        return DYNAMICAL_SCALE * self.z_gamma_z(z)

    def z_gamma0_z_dyn(self, z: np.ndarray) -> float:
        return DYNAMICAL_SCALE * self.z_gamma0_z(z)

    def quartic_rate_dyn(self, z: np.ndarray) -> float:
        return DYNAMICAL_SCALE * self.quartic_rate(z)

    def gamma0_damping_dyn(self, z: np.ndarray) -> np.ndarray:
        """Gradient damping vector D(z) = (1/2) d(z* Gamma0_dyn z)/dzbar,
        so dz/dt = -D(z) drains |z|^2 at exactly 2 z* Gamma0_dyn z
        (bidegree-(2,2) Euler identity); N = 1 reduces to gamma0 |z|^2 z."""
        z = np.atleast_1d(np.asarray(z, dtype=complex))
        zb = np.conj(z)
        c = self.gamma0_c
        cb = np.conj(c)
        dt_k = (np.einsum("abkd,a,b,d->k", c, z, z, zb)
                + np.einsum("abck,a,b,c->k", c, z, z, zb))
        dtb_k = (np.einsum("kbcd,b,c,d->k", cb, zb, z, z)
                 + np.einsum("akcd,a,c,d->k", cb, zb, z, z))
        scale = DYNAMICAL_SCALE * self.gamma0_prefactor
        return 0.25 * scale * (1j * dt_k - 1j * dtb_k)


def _certify_positivity(data: FgrData, nsamples: int = 32, seed: int = 7):
    rng = np.random.default_rng(seed)
    n = data.nmodes
    for _ in range(nsamples):
        z = rng.standard_normal(n) + 1j * rng.standard_normal(n)
        val = data.z_gamma_z(z)
        scale = abs(data.zc).max() * np.sum(np.abs(z) ** 2) ** 2
        if val < -1e-10 * max(scale, 1e-300):
            raise FgrSignConventionError(
                f"z* Gamma z = {val:.3e} < 0 at sampled z; check the -0 prescription")


def _gamma0_tensor(spec: LinearSpectrum, lam: float, freqs: np.ndarray,
                   sigma: float, eps: np.ndarray, pair_shift) -> np.ndarray:
    """C[a,b,c,d] = <i (A - shift(a,b) - i0)^{-1} P_c q_ab, q_cd> with
    q_ab = phi_lin^(2 sigma - 1) xi_a xi_b."""
    grid = spec.grid
    n = len(freqs)
    mass = spec.potential.values + lam
    pw = np.abs(spec.phi_lin.values.real) ** (2 * sigma - 1)
    basis = {}
    for a in range(n):
        for b in range(a, n):
            basis[a, b] = pw * spec.xi_lin[a].values * spec.xi_lin[b].values
    solves = {}
    for (a, b), q in basis.items():
        rhs = project_continuous_values(q, spec)
        res = limiting_absorption_resolve(grid, mass, lam, pair_shift(a, b), rhs, eps=eps)
        solves[a, b] = res.value
    c = np.zeros((n, n, n, n), dtype=complex)
    for a in range(n):
        for b in range(n):
            r = solves[min(a, b), max(a, b)]
            for cc in range(n):
                for d in range(n):
                    q = basis[min(cc, d), max(cc, d)]
                    c[a, b, cc, d] = inner_values(grid, r, q)
    return c


def gamma_matrices(spec: LinearSpectrum, profile: GroundStateProfile,
                   modes: NeutralModeSet, eps: np.ndarray | None = None) -> FgrData:
    """Z, Gamma, Lambda and Gamma0 for a degenerate cluster (single E).

    Z^{(k,l)} = -<(L + 2iE - 0)^{-1} P_c G_l, i J P_c G_k>, reduced per
    the J-diagonalization to one below-threshold and one resonant scalar
    solve per source component.
    """
    if not modes.is_degenerate():
        raise ValueError("gamma_matrices expects a degenerate cluster; "
                         "use gamma_near_degenerate for split frequencies")
    grid = profile.grid
    e = modes.energy
    lam = profile.lam
    sigma = profile.sigma
    offset = 2.0 * e - lam
    if offset <= 0:
        raise ValueError(f"2E = {2 * e} does not exceed lam = {lam}: no resonance")
    if eps is None:
        eps = default_eps_schedule(grid, offset)
    mass = spec.potential.values + lam
    n = modes.count

    # unit-coefficient sources G_k^{(m)} (z = e_m)
    basis = [source_vectors(profile, modes, np.eye(n)[m]) for m in range(n)]
    w1 = np.empty((n, n), dtype=object)   # [k, m]
    w2 = np.empty((n, n), dtype=object)
    for m in range(n):
        for k in range(n):
            g = basis[m][k]
            pg = np.stack([project_continuous_values(g[0], spec),
                           project_continuous_values(g[1], spec)])
            w1[k, m], w2[k, m] = _split_components(pg)

    defects = []
    u1 = np.empty((n, n), dtype=object)
    u2 = np.empty((n, n), dtype=object)
    for l in range(n):
        for m in range(n):
            u1[l, m] = _below_threshold_solve(grid, mass, lam, 2.0 * e, w1[l, m])
            res = limiting_absorption_resolve(grid, mass, lam, 2.0 * e, w2[l, m], eps=eps)
            defects.append(res.defect)
            u2[l, m] = res.value

    zc = np.zeros((n, n, n, n), dtype=complex)
    for k in range(n):
        for l in range(n):
            for m in range(n):
                for mp in range(n):
                    zc[k, l, m, mp] = (
                        -1j * inner_values(grid, u1[l, m], w1[k, mp])
                        - 1j * inner_values(grid, u2[l, m], w2[k, mp])
                    )

    delta = profile.delta_measured
    pref = -2.0 * sigma**2 * (sigma + 1.0) ** 2 * delta ** (4 * sigma - 2)
    gamma0_c = _gamma0_tensor(spec, lam, modes.frequencies, sigma, eps,
                              pair_shift=lambda a, b: 2.0 * e)
    data = FgrData(
        lam=lam, sigma=sigma, delta=delta, frequencies=modes.frequencies.copy(),
        zc=zc, gamma0_prefactor=pref, gamma0_c=gamma0_c,
        eps=np.asarray(eps), eps_defects=np.asarray(defects),
        reduction_bound=weighted_norm(profile.phi, WeightedNormSpec(2, 4)) ** (2 * sigma),
    )
    _certify_positivity(data)
    return data


def gamma_near_degenerate(spec: LinearSpectrum, profile: GroundStateProfile,
                          modes: NeutralModeSet, eps: np.ndarray | None = None,
                          max_split: float = 0.1) -> FgrData:
    """Near-degenerate variant (cubic nonlinearity): sources G(k, m) and
    pair shifts E_l + E_m replace the single 2E resonance."""
    if profile.sigma != 1.0:
        raise ValueError("near-degenerate damping matrices are built for sigma = 1")
    grid = profile.grid
    lam = profile.lam
    freqs = modes.frequencies
    n = modes.count
    split = float(freqs.max() - freqs.min())
    if split > max_split * freqs.min():
        warnings.warn(
            f"frequency split {split:.3e} outside the near-degenerate regime",
            stacklevel=2)
    mass = spec.potential.values + lam
    phi = profile.phi.values.real

    # ghat[k][m]: unit-coefficient source with B = -i phi (xi_m eta_k + eta_m xi_k)
    ghat = {}
    for k in range(n):
        for m in range(n):
            xi_m = modes.xi[m].values
            eta_m = modes.eta[m].values
            xi_k = modes.xi[k].values
            eta_k = modes.eta[k].values
            b = -1j * phi * (xi_m * eta_k + eta_m * xi_k)
            d = -phi * (3.0 * xi_m * xi_k - eta_m * eta_k)
            g = np.stack([b, d])
            ghat[k, m] = np.stack([project_continuous_values(g[0], spec),
                                   project_continuous_values(g[1], spec)])

    defects = []
    sol1, sol2 = {}, {}
    for l in range(n):
        for m in range(n):
            shift = freqs[l] + freqs[m]
            offset = shift - lam
            if offset <= 0:
                raise ValueError(f"E_{l} + E_{m} = {shift} below lam = {lam}")
            sched = eps if eps is not None else default_eps_schedule(grid, offset)
            v1, v2 = _split_components(ghat[l, m])
            sol1[l, m] = _below_threshold_solve(grid, mass, lam, shift, v1)
            res = limiting_absorption_resolve(grid, mass, lam, shift, v2, eps=sched)
            defects.append(res.defect)
            sol2[l, m] = res.value

    zc = np.zeros((n, n, n, n), dtype=complex)
    for k in range(n):
        for l in range(n):
            for m in range(n):
                for mp in range(n):
                    w1k, w2k = _split_components(ghat[k, mp])
                    zc[k, l, m, mp] = (
                        -1j * inner_values(grid, sol1[l, m], w1k)
                        - 1j * inner_values(grid, sol2[l, m], w2k)
                    )

    delta = profile.delta_measured
    gamma0_c = _gamma0_tensor(
        spec, lam, freqs, 1.0, eps if eps is not None else
        default_eps_schedule(grid, freqs.min() + freqs.max() - lam),
        pair_shift=lambda a, b: freqs[a] + freqs[b])
    data = FgrData(
        lam=lam, sigma=1.0, delta=delta, frequencies=freqs.copy(),
        zc=zc, gamma0_prefactor=-8.0 * delta**2, gamma0_c=gamma0_c,
        eps=np.asarray(eps if eps is not None else []),
        eps_defects=np.asarray(defects),
        reduction_bound=weighted_norm(profile.phi, WeightedNormSpec(2, 4)) ** 2,
    )
    _certify_positivity(data)
    return data


def gamma0_form(spec: LinearSpectrum, lam: float, energy: float, z: np.ndarray,
                sigma: float = 1.0, delta: float | None = None,
                eps: np.ndarray | None = None) -> float:
    """Leading FGR quadratic form
    -2 s^2 (s+1)^2 delta^(4s-2) Re <i (A - 2E - i0)^{-1} P_c f, f>,
    f = phi_lin^(2s-1) (z . xi_lin)^2, A = -Lap + V + lam.
    """
    grid = spec.grid
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if delta is None:
        delta = delta_prediction(spec, lam, sigma)
    offset = 2.0 * energy - lam
    if offset <= 0:
        raise ValueError(f"2E = {2 * energy} at or below the threshold lam = {lam}")
    zxi = sum(z[n] * spec.xi_lin[n].values for n in range(z.size))
    f = np.abs(spec.phi_lin.values.real) ** (2 * sigma - 1) * zxi**2
    f = project_continuous_values(f, spec)
    res = limiting_absorption_resolve(grid, spec.potential.values + lam, lam,
                                      2.0 * energy, f, eps=eps)
    val = np.real(1j * inner_values(grid, res.value, f))
    return float(-2.0 * sigma**2 * (sigma + 1.0) ** 2 * delta ** (4 * sigma - 2) * val)


def h22_identity_check(spec: LinearSpectrum, lam: float, energy: float,
                       z: np.ndarray, sigma: float = 1.0,
                       delta: float | None = None) -> float:
    """Below-threshold counterpart of Gamma0; identically zero because
    (A + 2E)^{-1} P_c is self-adjoint.  Returned for numeric verification.
    """
    grid = spec.grid
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    if delta is None:
        delta = delta_prediction(spec, lam, sigma)
    zxi = sum(z[n] * spec.xi_lin[n].values for n in range(z.size))
    f = np.abs(spec.phi_lin.values.real) ** (2 * sigma - 1) * zxi**2
    f = project_continuous_values(f, spec)
    u = _below_threshold_solve(grid, spec.potential.values + lam, lam, 2.0 * energy, f)
    val = np.real(1j * inner_values(grid, u, f))
    return float(-2.0 * delta ** (4 * sigma - 2) * sigma**2 * (sigma - 1.0) ** 2 * val)
