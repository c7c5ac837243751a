"""Normal-form expansion: nonlinearity blocks JN_mn, driven corrections
R_mn, polynomial coefficients a1, a2, p, q, and the quartic identities
tying the secular mass growth to the leading FGR form.

Everything is organized as polynomials in (z, zbar) with field- or
scalar-valued coefficients (see `multipoly`).  Removal relations are
solved monomial by monomial; conjugate closure keeps a1, a2, p, q
real-valued.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .grid import Grid, inner_values
from .ground_state import GroundStateProfile
from .linearization import LinearizedOperator, NeutralModeSet
from .multipoly import Poly, dot_modes, poly_inner, stack2
from .resolvent import (
    BlockShiftedOp,
    default_eps_schedule,
    krylov_solve,
    limiting_absorption,
)
from .spectrum import LinearSpectrum, project_continuous_values


@dataclass(frozen=True)
class QuarticConstants:
    """sigma-dependent constants of the fourth-order expansion.

    Only the cubic values are derived here: C1 = C2 = C3 = 1 and
    C4 = C5 = C6 = 0 at sigma = 1.  Other nonlinearities may override.
    """

    c1: float = 1.0
    c2: float = 1.0
    c3: float = 1.0
    c4: float = 0.0
    c5: float = 0.0
    c6: float = 0.0


def upsilon11(profile: GroundStateProfile, phi_lam: np.ndarray,
              modes: NeutralModeSet, z: np.ndarray) -> float:
    """<phi^(2s-1) [(2s^2+s)|z.xi|^2 + s|z.eta|^2], phi_lam>
       / (2 <phi, phi_lam>)."""
    grid = profile.grid
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    s = profile.sigma
    pw = profile.nonlinear_mass(2 * s - 1)
    zxi = sum(z[n] * modes.xi[n].values for n in range(modes.count))
    zeta = sum(z[n] * modes.eta[n].values for n in range(modes.count))
    num = pw * ((2 * s**2 + s) * np.abs(zxi) ** 2 + s * np.abs(zeta) ** 2)
    denom = 2.0 * inner_values(grid, profile.phi.values, phi_lam).real
    if abs(denom) < 1e-14:
        raise ZeroDivisionError("<phi, phi_lam> is numerically zero")
    return float(inner_values(grid, num.astype(complex), phi_lam).real / denom)


def upsilon_poly(profile: GroundStateProfile, phi_lam: np.ndarray,
                 modes: NeutralModeSet) -> Poly:
    """The (1,1) polynomial whose value at z is upsilon11."""
    grid = profile.grid
    n = modes.count
    s = profile.sigma
    pw = profile.nonlinear_mass(2 * s - 1)
    denom = 2.0 * inner_values(grid, profile.phi.values, phi_lam).real
    zxi = dot_modes([Poly.z_var(n, k) for k in range(n)],
                    [m.values for m in modes.xi])
    zeta = dot_modes([Poly.z_var(n, k) for k in range(n)],
                     [m.values for m in modes.eta])
    num = ((2 * s**2 + s) * (zxi * zxi.conjugate())
           + s * (zeta * zeta.conjugate())).map_coeff(lambda c: pw * c)
    return (1.0 / denom) * poly_inner(grid, num, phi_lam)


def _mode_polys(modes: NeutralModeSet):
    n = modes.count
    ax = dot_modes([Poly.alpha(n, k) for k in range(n)],
                   [m.values for m in modes.xi])
    bh = dot_modes([Poly.beta(n, k) for k in range(n)],
                   [m.values for m in modes.eta])
    return ax, bh


def assemble_jn2(profile: GroundStateProfile, modes: NeutralModeSet) -> Poly:
    """Quadratic block: JN_2 = s phi^(2s-1) (2 (a.xi)(b.eta),
    -(2s+1)(a.xi)^2 - (b.eta)^2)."""
    s = profile.sigma
    pw = profile.nonlinear_mass(2 * s - 1)
    ax, bh = _mode_polys(modes)
    nim = (2.0 * s) * (ax * bh)
    nre = s * ((2 * s + 1) * (ax * ax) + bh * bh)
    nim = nim.map_coeff(lambda c: pw * c)
    nre = nre.map_coeff(lambda c: pw * c)
    return stack2(nim, (-1.0) * nre)


@dataclass
class NfCoefficients:
    """Polynomials a1, a2 (orders 2-3, m != n) and p_k, q_k (orders 2-3)."""

    a1: Poly
    a2: Poly
    p: list[Poly]
    q: list[Poly]
    phi_lam: np.ndarray

    def values(self, z: np.ndarray):
        a1 = complex(self.a1(z))
        a2 = complex(self.a2(z))
        p = np.array([pk(z) for pk in self.p], dtype=complex)
        q = np.array([qk(z) for qk in self.q], dtype=complex)
        return a1, a2, p, q


def _component(poly: Poly, idx: int) -> Poly:
    return poly.map_coeff(lambda c: c[idx])


def _nim_nre(jn: Poly) -> tuple[Poly, Poly]:
    """JN = (N^Im, -N^Re) stacked; undo the stacking."""
    return _component(jn, 0), (-1.0) * _component(jn, 1)


def solve_quadratic_coefficients(grid: Grid, profile: GroundStateProfile,
                                 phi_lam: np.ndarray, modes: NeutralModeSet,
                                 jn2: Poly) -> NfCoefficients:
    """Order-2 removal relations for A, P, Q (degenerate cluster)."""
    e = modes.energy
    phi = profile.phi.values
    denom = inner_values(grid, phi, phi_lam).real
    nim, nre = _nim_nre(jn2)
    nim_phi = poly_inner(grid, nim, phi)
    nre_dphi = poly_inner(grid, nre, phi_lam)

    a1 = (1.0 / (2j * e * denom)) * nim_phi.order_slice(2, 0)
    a2_20 = (-1.0 / (2j * e)) * (
        (1.0 / denom) * nre_dphi.order_slice(2, 0) + a1)
    a1 = a1 + a1.conjugate()
    a2 = a2_20 + a2_20.conjugate()

    ps, qs = [], []
    for k in range(modes.count):
        eta_k = modes.eta[k].values
        xi_k = modes.xi[k].values
        rhs1 = (-1.0) * poly_inner(grid, nim, eta_k).order_slice(2, 0)
        rhs2 = poly_inner(grid, nre, xi_k).order_slice(2, 0)
        # [-2iE, -E; E, -2iE] (P, Q) = (rhs1, rhs2)
        det = -4.0 * e**2 + e**2
        p20 = Poly(modes.count)
        q20 = Poly(modes.count)
        for key in set(rhs1.terms) | set(rhs2.terms):
            b1 = rhs1.terms.get(key, 0.0)
            b2 = rhs2.terms.get(key, 0.0)
            p20.terms[key] = (-2j * e * b1 + e * b2) / det
            q20.terms[key] = (-e * b1 - 2j * e * b2) / det
        nim_eta = poly_inner(grid, nim, eta_k).order_slice(1, 1)
        nre_xi = poly_inner(grid, nre, xi_k).order_slice(1, 1)
        q11 = (1.0 / e) * nim_eta
        p11 = (1.0 / e) * nre_xi
        pk = p20 + p20.conjugate() + p11
        qk = q20 + q20.conjugate() + q11
        ps.append(pk)
        qs.append(qk)
    return NfCoefficients(a1=a1, a2=a2, p=ps, q=qs, phi_lam=phi_lam)


def _combo_fields(profile: GroundStateProfile, modes: NeutralModeSet,
                  coeffs: NfCoefficients, r_poly: Poly,
                  orders: tuple[int, ...]) -> tuple[Poly, Poly]:
    """S1 = a1 phi_lam + p . xi + R^(1),  S2 = a2 phi + q . eta + R^(2),
    restricted to the requested total orders."""
    phi = profile.phi.values
    phi_lam = coeffs.phi_lam
    s1 = Poly(modes.count)
    s2 = Poly(modes.count)
    for m, n in [(m, n) for m in range(4) for n in range(4) if m + n in orders]:
        s1 = s1 + coeffs.a1.order_slice(m, n).map_coeff(lambda c: c * phi_lam)
        s2 = s2 + coeffs.a2.order_slice(m, n).map_coeff(lambda c: c * phi)
        for k in range(modes.count):
            xi_k = modes.xi[k].values
            eta_k = modes.eta[k].values
            s1 = s1 + coeffs.p[k].order_slice(m, n).map_coeff(lambda c: c * xi_k)
            s2 = s2 + coeffs.q[k].order_slice(m, n).map_coeff(lambda c: c * eta_k)
        rs = r_poly.order_slice(m, n)
        s1 = s1 + _component(rs, 0)
        s2 = s2 + _component(rs, 1)
    return s1, s2


def assemble_jn3(profile: GroundStateProfile, modes: NeutralModeSet,
                 coeffs2: NfCoefficients, r2: Poly) -> Poly:
    """Cubic block from the order-2 corrections."""
    s = profile.sigma
    pw = profile.nonlinear_mass(2 * s - 1)
    pw2 = profile.nonlinear_mass(2 * s - 2)
    ax, bh = _mode_polys(modes)
    s1, s2 = _combo_fields(profile, modes, coeffs2, r2, (2,))

    nim = ((2.0 * s) * (ax * s2) + (2.0 * s) * (bh * s1)).map_coeff(lambda c: pw * c)
    nim = nim + (s * ((ax * ax + bh * bh) * bh)
                 + (2 * s * (s - 1)) * (ax * ax * bh)).map_coeff(lambda c: pw2 * c)
    nre = ((2 * s * (2 * s + 1)) * (ax * s1)
           + (2.0 * s) * (bh * s2)).map_coeff(lambda c: pw * c)
    c3 = s * (2 * s - 1 + 4.0 / 3.0 * (s - 1) * (s - 2))
    nre = nre + (c3 * (ax * ax * ax)
                 + (s * (2 * s - 1)) * (ax * bh * bh)).map_coeff(lambda c: pw2 * c)
    return stack2(nim, (-1.0) * nre).truncate(3)


def solve_cubic_coefficients(grid: Grid, profile: GroundStateProfile,
                             phi_lam: np.ndarray, modes: NeutralModeSet,
                             jn3: Poly, ups: Poly) -> NfCoefficients:
    """Order-3 removal relations, including the Upsilon corrections at
    (2,1) and (1,2); at (1,2) the resonant-free split P = s/2, Q = s/(2i)
    fixes the single combined equation."""
    e = modes.energy
    n = modes.count
    phi = profile.phi.values
    denom = inner_values(grid, phi, phi_lam).real
    nim, nre = _nim_nre(jn3)
    nim_phi = poly_inner(grid, nim, phi)
    nre_dphi = poly_inner(grid, nre, phi_lam)
    zeta = dot_modes([Poly.z_var(n, k) for k in range(n)],
                     [m.values for m in modes.eta])
    zxi = dot_modes([Poly.z_var(n, k) for k in range(n)],
                    [m.values for m in modes.xi])
    ups_zeta_phi = (ups * poly_inner(grid, zeta, phi)).order_slice(2, 1)
    ups_zxi_dphi = (ups * poly_inner(grid, zxi, phi_lam)).order_slice(2, 1)

    a1_30 = (1.0 / (3j * e * denom)) * nim_phi.order_slice(3, 0)
    a1_21 = (1.0 / (1j * e)) * (
        (1.0 / denom) * nim_phi.order_slice(2, 1)
        - (0.5j / denom) * ups_zeta_phi)
    a2_30 = (-1.0 / (3j * e)) * ((1.0 / denom) * nre_dphi.order_slice(3, 0) + a1_30)
    a2_21 = (-1.0 / (1j * e)) * (
        (1.0 / denom) * (nre_dphi.order_slice(2, 1) - 0.5 * ups_zxi_dphi) + a1_21)
    a1 = a1_30 + a1_30.conjugate() + a1_21 + a1_21.conjugate()
    a2 = a2_30 + a2_30.conjugate() + a2_21 + a2_21.conjugate()

    ps, qs = [], []
    for k in range(n):
        eta_k = modes.eta[k].values
        xi_k = modes.xi[k].values
        rhs1 = (-1.0) * poly_inner(grid, nim, eta_k).order_slice(3, 0)
        rhs2 = poly_inner(grid, nre, xi_k).order_slice(3, 0)
        det = -9.0 * e**2 + e**2
        p30 = Poly(n)
        q30 = Poly(n)
        for key in set(rhs1.terms) | set(rhs2.terms):
            b1 = rhs1.terms.get(key, 0.0)
            b2 = rhs2.terms.get(key, 0.0)
            # [-3iE, -E; E, -3iE] (P, Q) = (b1, b2)
            p30.terms[key] = (-3j * e * b1 + e * b2) / det
            q30.terms[key] = (-e * b1 - 3j * e * b2) / det
        # (1,2): 2iE (P + iQ) = -<NIm, eta> + i <NRe, xi> + Upsilon term
        cross = Poly(n)
        for kk in range(n):
            ck = (inner_values(grid, modes.eta[kk].values, eta_k).real
                  - inner_values(grid, modes.xi[kk].values, xi_k).real)
            cross = cross + ck * Poly.zbar_var(n, kk)
        rhs = ((-1.0) * poly_inner(grid, nim, eta_k).order_slice(1, 2)
               + 1j * poly_inner(grid, nre, xi_k).order_slice(1, 2)
               + (1j * (ups * cross)).order_slice(1, 2))
        s12 = (1.0 / (2j * e)) * rhs
        p12 = 0.5 * s12
        q12 = (-0.5j) * s12
        pk = p30 + p30.conjugate() + p12 + p12.conjugate()
        qk = q30 + q30.conjugate() + q12 + q12.conjugate()
        ps.append(pk)
        qs.append(qk)
    return NfCoefficients(a1=a1, a2=a2, p=ps, q=qs, phi_lam=phi_lam)


def assemble_jn4_inner_phi(profile: GroundStateProfile, modes: NeutralModeSet,
                           coeffs: NfCoefficients, r_poly: Poly,
                           constants: QuarticConstants = QuarticConstants()) -> Poly:
    """<JN_4, (phi, 0)> = <N^Im_4, phi> as a scalar (m + n = 4) polynomial.

    Pairing with phi first keeps every power of the profile nonnegative,
    so this form is defined for all sigma >= 1 (the bare quartic field is
    not, once 2 sigma - 3 < 0).
    """
    grid = profile.grid
    s = profile.sigma
    phi = profile.phi.values.real
    pw_phi = profile.nonlinear_mass(2 * s - 1) * phi
    pw2_phi = profile.nonlinear_mass(2 * s - 2) * phi
    pw3_phi = profile.nonlinear_mass(2 * s - 2)   # phi^(2s-3) * phi
    ax, bh = _mode_polys(modes)
    s1_2, s2_2 = _combo_fields(profile, modes, coeffs, r_poly, (2,))
    s1_3, s2_3 = _combo_fields(profile, modes, coeffs, r_poly, (3,))

    total = Poly.zero(modes.count)

    def add(poly: Poly, weight_field: np.ndarray):
        nonlocal total
        w = weight_field
        total = total + poly.map_coeff(
            lambda c: grid.cell_volume * np.sum(w * c))

    # phi is real, so <N^Im_4, phi> is the plain weighted quadrature
    add((2.0 * s) * (ax * s2_3) + (2.0 * s) * (bh * s1_3), pw_phi)
    add((2.0 * s) * (s1_2 * s2_2), pw_phi)
    add(((s * (2 * s - 1)) * (ax * ax) + (3.0 * s) * (bh * bh)) * s2_2, pw2_phi)
    add((2 * s * (2 * s - 1)) * (bh * ax * s1_2), pw2_phi)
    if s != 1.0:
        c = 2 * s * (s - 1)
        add(c * ((2 * s - 1) / 3.0) * (ax * ax * ax * bh) + c * (ax * bh * bh * bh),
            pw3_phi)
    return total.truncate(4)


def assemble_jn4(profile: GroundStateProfile, modes: NeutralModeSet,
                 coeffs: NfCoefficients, r_poly: Poly,
                 constants: QuarticConstants = QuarticConstants()) -> Poly:
    """Full quartic block; materialized only when every profile power is
    safe (integer sigma, or vanishing coefficients at sigma = 1)."""
    s = profile.sigma
    if s != 1.0 and abs(s - round(s)) > 1e-12:
        raise ValueError(
            "quartic block carries phi^(2 sigma - 3); for non-integer sigma "
            "use assemble_jn4_inner_phi (paired form) instead")
    pw = profile.nonlinear_mass(2 * s - 1)
    pw2 = profile.nonlinear_mass(2 * s - 2)
    ax, bh = _mode_polys(modes)
    s1_2, s2_2 = _combo_fields(profile, modes, coeffs, r_poly, (2,))
    s1_3, s2_3 = _combo_fields(profile, modes, coeffs, r_poly, (3,))

    nim = ((2.0 * s) * (ax * s2_3) + (2.0 * s) * (bh * s1_3)
           + (2.0 * s) * (s1_2 * s2_2)).map_coeff(lambda c: pw * c)
    nim = nim + (((s * (2 * s - 1)) * (ax * ax) + (3.0 * s) * (bh * bh)) * s2_2
                 + (2 * s * (2 * s - 1)) * (bh * ax * s1_2)).map_coeff(
                     lambda c: pw2 * c)
    if s != 1.0:
        pw3 = profile.nonlinear_mass(2 * s - 3)
        c = 2 * s * (s - 1)
        nim = nim + (c * ((2 * s - 1) / 3.0) * (ax * ax * ax * bh)
                     + c * (ax * bh * bh * bh)).map_coeff(lambda cc: pw3 * cc)

    nre = ((2 * s * (2 * s + 1)) * (ax * s1_3) + (2.0 * s) * (bh * s2_3)
           + (s * (2 * s + 1)) * (s1_2 * s1_2)
           + s * (s2_2 * s2_2)).map_coeff(lambda c: pw * c)
    nre = nre + ((s * 3 * constants.c1) * (ax * ax * s1_2)
                 + (s * constants.c2) * (bh * bh * s1_2)
                 + (2 * s * constants.c3) * (bh * ax * s2_2)).map_coeff(
                     lambda c: pw2 * c)
    if constants.c4 or constants.c5 or constants.c6:
        pw3 = profile.nonlinear_mass(2 * s - 3)
        nre = nre + (constants.c4 * (ax * ax * ax * ax)
                     + constants.c5 * (bh * bh * bh * bh)
                     + constants.c6 * (ax * ax * bh * bh)).map_coeff(
                         lambda c: pw3 * c)
    return stack2(nim, (-1.0) * nre).truncate(4)


@dataclass
class DrivenCorrections:
    """Driven fields R_mn for m + n = 2, 3 as vector-coefficient polys."""

    r2: Poly
    r3: Poly
    x3: Poly
    defects: dict = field(default_factory=dict)

    def r_sum(self, z: np.ndarray) -> np.ndarray:
        return self.r2(z) + self.r3(z)

    def r_tilde(self, rvec: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Remainder of the second-order expansion of a measured R."""
        return rvec - self.r2(z)

    def r_ge4(self, rvec: np.ndarray, z: np.ndarray) -> np.ndarray:
        """Remainder beyond third order of a measured R."""
        return rvec - self.r2(z) - self.r3(z)


def driven_corrections(lin: LinearizedOperator, pc, modes: NeutralModeSet,
                       jn2: Poly, jn3: Poly | None = None,
                       x3: Poly | None = None,
                       eps: np.ndarray | None = None) -> DrivenCorrections:
    """R_mn = [L + iE(m-n) - 0]^{-1} P_c (JN_mn + X_mn).

    Shifts with |m-n| E above the continuum edge get the regulated
    limiting-absorption solve; the others are plain deflated solves.
    m < n entries follow from conjugation of their (n, m) partners.
    """
    grid = lin.grid
    e = modes.energy
    lam = lin.lam
    defects = {}

    def solve_slice(src: Poly, m: int, n: int) -> Poly:
        out = Poly(src.nmodes)
        kappa = e * (m - n)
        resonant = abs(kappa) > lam
        for key, c in src.order_slice(m, n).terms.items():
            rhs = pc(np.asarray(c, dtype=complex))
            if resonant:
                sched = eps if eps is not None else \
                    default_eps_schedule(grid, abs(kappa) - lam)

                def solve_at(ev):
                    op = lin.shifted_block(1j * kappa - ev)
                    return krylov_solve(op, rhs, project=pc, rtol=1e-11,
                                        maxiter=3000)

                res = limiting_absorption(solve_at, sched,
                                          weight=grid.weight(-4))
                defects[m, n, key] = res.defect
                out.terms[key] = res.value
            else:
                op = lin.shifted_block(1j * kappa)
                out.terms[key] = krylov_solve(op, rhs, project=pc, rtol=1e-11,
                                              maxiter=3000)
        return out

    r2 = Poly(jn2.nmodes)
    for (m, n) in [(2, 0), (1, 1)]:
        part = solve_slice(jn2, m, n)
        r2 = r2 + part
        if m != n:
            r2 = r2 + part.conjugate()

    if jn3 is None:
        return DrivenCorrections(r2=r2, r3=Poly(jn2.nmodes),
                                 x3=Poly(jn2.nmodes), defects=defects)
    src3 = jn3 if x3 is None else jn3 + x3
    r3 = Poly(jn3.nmodes)
    for (m, n) in [(3, 0), (2, 1)]:
        part = solve_slice(src3, m, n)
        r3 = r3 + part + part.conjugate()
    return DrivenCorrections(r2=r2, r3=r3,
                             x3=x3 if x3 is not None else Poly(jn3.nmodes),
                             defects=defects)


@dataclass
class NormalFormData:
    """Complete order-2/3 normal form at one branch point."""

    lam: float
    sigma: float
    energy: float
    nmodes: int
    denom: float                       # <phi, phi_lam>
    ups: Poly
    coeffs: NfCoefficients
    corrections: DrivenCorrections
    jn2: Poly
    jn3: Poly
    jn4_inner_phi: Poly

    def values(self, z):
        return self.coeffs.values(z)


def x3_forcing(ups: Poly, modes: NeutralModeSet) -> Poly:
    """sum X_mn = Upsilon_11 (-beta.eta, alpha.xi)."""
    n = modes.count
    ax = dot_modes([Poly.alpha(n, k) for k in range(n)],
                   [m.values for m in modes.xi])
    bh = dot_modes([Poly.beta(n, k) for k in range(n)],
                   [m.values for m in modes.eta])
    return stack2((-1.0) * (ups * bh), ups * ax).truncate(3)


def build_normal_form(spec: LinearSpectrum, lin: LinearizedOperator,
                      pc, modes: NeutralModeSet,
                      eps: np.ndarray | None = None,
                      constants: QuarticConstants = QuarticConstants()
                      ) -> NormalFormData:
    """Orchestrate the full order-2 then order-3 expansion."""
    profile = lin.point.profile
    phi_lam = lin.point.phi_lam.values
    grid = profile.grid
    denom = inner_values(grid, profile.phi.values, phi_lam).real

    ups = upsilon_poly(profile, phi_lam, modes)
    jn2 = assemble_jn2(profile, modes)
    coeffs2 = solve_quadratic_coefficients(grid, profile, phi_lam, modes, jn2)
    corr2 = driven_corrections(lin, pc, modes, jn2, eps=eps)

    jn3 = assemble_jn3(profile, modes, coeffs2, corr2.r2)
    coeffs3 = solve_cubic_coefficients(grid, profile, phi_lam, modes, jn3, ups)
    merged = NfCoefficients(
        a1=coeffs2.a1 + coeffs3.a1,
        a2=coeffs2.a2 + coeffs3.a2,
        p=[p2 + p3 for p2, p3 in zip(coeffs2.p, coeffs3.p)],
        q=[q2 + q3 for q2, q3 in zip(coeffs2.q, coeffs3.q)],
        phi_lam=phi_lam,
    )
    x3 = x3_forcing(ups, modes)
    corr = driven_corrections(lin, pc, modes, jn2, jn3, x3, eps=eps)
    jn4_phi = assemble_jn4_inner_phi(profile, modes, merged, corr.r2, constants)
    return NormalFormData(
        lam=profile.lam, sigma=profile.sigma, energy=modes.energy,
        nmodes=modes.count, denom=denom, ups=ups, coeffs=merged,
        corrections=corr, jn2=jn2, jn3=jn3, jn4_inner_phi=jn4_phi,
    )


# -- near-degenerate corrections (sigma = 1, N = 2) --------------------------


def imn11_direct(profile: GroundStateProfile, modes: NeutralModeSet,
                 z: np.ndarray) -> complex:
    """<Im N_{1,1}, phi> by direct quadrature:
    (1/2i) sum_nm zbar_n z_m int phi^2 (xi_n eta_m - xi_m eta_n)."""
    grid = profile.grid
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    phi2 = profile.phi.values.real ** 2
    total = 0.0 + 0.0j
    for nn in range(modes.count):
        for mm in range(modes.count):
            w = phi2 * (modes.xi[nn].values.real * modes.eta[mm].values.real
                        - modes.xi[mm].values.real * modes.eta[nn].values.real)
            total += np.conj(z[nn]) * z[mm] * grid.cell_volume * np.sum(w)
    return complex(total / 2j)


def imn11_closed(profile: GroundStateProfile, modes: NeutralModeSet,
                 z: np.ndarray) -> complex:
    """Closed form (1/4i)(E1 - E2)(z1 zbar2 - z2 zbar1)(<eta1,eta2> + <xi1,xi2>)."""
    if modes.count != 2:
        raise ValueError("closed form applies to a two-mode cluster")
    grid = profile.grid
    z = np.asarray(z, dtype=complex)
    e1, e2 = modes.frequencies
    overlap = (inner_values(grid, modes.eta[0].values, modes.eta[1].values).real
               + inner_values(grid, modes.xi[0].values, modes.xi[1].values).real)
    return complex((e1 - e2) * (z[0] * np.conj(z[1]) - z[1] * np.conj(z[0]))
                   * overlap / 4j)


def near_degenerate_corrections(profile: GroundStateProfile, phi_lam: np.ndarray,
                                modes: NeutralModeSet, jn2: Poly) -> Poly:
    """Replacement a1 pieces for a split two-mode cluster:
    the (1,1) term that no longer vanishes plus the frequency-resolved
    (2,0) split (denominators 2E_1, E_1 + E_2, 2E_2) and conjugates."""
    if modes.count != 2:
        raise ValueError("near-degenerate corrections expect N = 2")
    grid = profile.grid
    denom = inner_values(grid, profile.phi.values, phi_lam).real
    e1, e2 = (float(x) for x in modes.frequencies)
    overlap = (inner_values(grid, modes.eta[0].values, modes.eta[1].values).real
               + inner_values(grid, modes.xi[0].values, modes.xi[1].values).real)
    a11 = Poly(2, {
        ((1, 0), (0, 1)): -overlap / (4.0 * denom),
        ((0, 1), (1, 0)): -overlap / (4.0 * denom),
    })
    nim, _ = _nim_nre(jn2)
    k_poly = (1.0 / denom) * poly_inner(grid, nim, profile.phi.values).order_slice(2, 0)
    divisors = {(2, 0): 2 * e1, (1, 1): e1 + e2, (0, 2): 2 * e2}
    a20 = Poly(2)
    for (a, b), c in k_poly.terms.items():
        a20.terms[(a, b)] = -1j * c / divisors[a]
    return a11 + a20 + a20.conjugate()


# -- quartic identities -------------------------------------------------------


@dataclass(frozen=True)
class Pi22Result:
    pi22: float                 # assembled from the (2,2) block
    pi22_k20: float             # independent -2 Re <R20, K20> route
    z_gamma0_z: float
    combo: float                # 2 pi22 - z* Gamma0 z
    combo_ratio: float          # |combo| / (delta^(4s-1) |z|^4)
    theta22: float


def pi22_identity(spec: LinearSpectrum, lin: LinearizedOperator,
                  modes: NeutralModeSet, nf: NormalFormData,
                  fgr_data, z: np.ndarray) -> Pi22Result:
    """Compare the secular (2,2) mass-growth coefficient with the leading
    FGR form.  The small combination is 2 Pi22 - z* Gamma0 z (mass grows
    at rate +z* Gamma0 z; the resolvent identities fix the sign).
    """
    profile = lin.point.profile
    grid = profile.grid
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    phi = profile.phi.values
    s = profile.sigma

    val_jn = complex(nf.jn4_inner_phi.order_slice(2, 2)(z))
    ups_val = float(np.real(nf.ups(z)))
    r11 = nf.corrections.r2.order_slice(1, 1)(z)
    r11_phi = inner_values(grid, r11[1], phi)
    q11_sum = 0.0 + 0.0j
    for k in range(modes.count):
        q11 = nf.coeffs.q[k].order_slice(1, 1)(z)
        q11_sum += q11 * inner_values(grid, phi, modes.eta[k].values).real
    pi22 = float(np.real(-val_jn + ups_val * r11_phi + ups_val * q11_sum))

    # independent route: K20 pairing with the resonant driven field
    rho = sum(z[k] * modes.xi[k].values for k in range(modes.count))
    omega = sum(z[k] * modes.eta[k].values for k in range(modes.count))
    pw = profile.nonlinear_mass(2 * s - 1)
    k20 = np.stack([
        -0.5j * (2 * s - 1) * s * pw * rho * omega,
        s * pw * (-0.75 * omega**2 + 0.25 * (2 * s - 1) * rho**2),
    ])
    r20 = nf.corrections.r2.order_slice(2, 0)(z)
    pi22_k20 = float(-2.0 * np.real(
        inner_values(grid, r20[0], k20[0]) + inner_values(grid, r20[1], k20[1])))

    zg0 = fgr_data.z_gamma0_z(z)
    combo = 2.0 * pi22 - zg0
    zn = float(np.sum(np.abs(z) ** 2))
    ratio = abs(combo) / (fgr_data.delta ** (4 * s - 1) * zn**2) if zn else 0.0

    theta22 = theta22_check(spec, profile, modes, z)
    return Pi22Result(pi22=pi22, pi22_k20=pi22_k20, z_gamma0_z=zg0,
                      combo=combo, combo_ratio=ratio, theta22=theta22)


def theta22_check(spec: LinearSpectrum, profile: GroundStateProfile,
                  modes: NeutralModeSet, z: np.ndarray) -> float:
    """Below-threshold quartic term
    -(1/2) <[(A J + iE)]^{-1} P_c rho^2 rhobar (i,1), phi^2 rho (-i,1)>;
    vanishes because the two U-frame components are disjoint."""
    grid = profile.grid
    z = np.atleast_1d(np.asarray(z, dtype=complex))
    lam = profile.lam
    e = modes.energy
    rho = sum(z[k] * modes.xi[k].values for k in range(modes.count))
    f = rho**2 * np.conj(rho)
    f = project_continuous_values(f, spec)
    rhs = np.stack([1j * f, f])
    mass = spec.potential.values + lam
    op = BlockShiftedOp(grid, mass, mass, 1j * e, lam)
    w = krylov_solve(op, rhs, rtol=1e-12, maxiter=3000, refine=1)
    phi2rho = profile.phi.values.real ** 2 * rho
    val = (inner_values(grid, w[0], -1j * phi2rho)
           + inner_values(grid, w[1], phi2rho))
    return float(-0.5 * np.real(val))


# -- scaling audit ------------------------------------------------------------


@dataclass(frozen=True)
class ScalingFit:
    name: str
    expected: float
    fitted: float
    ok: bool


@dataclass(frozen=True)
class ScalingAudit:
    fits: tuple[ScalingFit, ...]

    @property
    def ok(self) -> bool:
        return all(f.ok for f in self.fits)


def scaling_audit(deltas: np.ndarray, quantities: dict[str, tuple[np.ndarray, float]],
                  tol: float = 0.25) -> ScalingAudit:
    """Fit log-log slopes of |quantity| against delta across a sweep and
    compare with the expected exponents (within +-tol).

    Quantities expected flat (exponent 0) are judged on the fitted slope
    directly; vanishing data fails loudly rather than silently passing.
    """
    deltas = np.asarray(deltas, dtype=float)
    fits = []
    for name, (values, expected) in quantities.items():
        vals = np.abs(np.asarray(values, dtype=float))
        if np.any(vals <= 0):
            fits.append(ScalingFit(name, expected, np.nan, False))
            continue
        slope = float(np.polyfit(np.log(deltas), np.log(vals), 1)[0])
        fits.append(ScalingFit(name, expected, slope, abs(slope - expected) <= tol))
    return ScalingAudit(tuple(fits))
