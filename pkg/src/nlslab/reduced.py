"""Reduced modulation system: the (lam, z) ODE carrying the mass
transfer, its exact bookkeeping invariant, and the decay envelopes.

    dz/dt = -i E(lam) z - Gamma(z, zbar) z + Lambda(z, zbar) z
    dN/dt = z* Gamma0(z, zbar) z,            lam = N^{-1}(N)

with the dynamical FGR rates.  Mass is the primary variable so the
combination 2N + |z|^2 is conserved exactly when Gamma is replaced by
Gamma0.  The integrator works in the frame rotating with exp(i Phi),
Phi' = E(lam): for a (near-)degenerate cluster every form above is
phase-covariant, so the rotated system is non-stiff and a high-order
explicit integrator takes long steps without resolving the carrier.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.integrate import solve_ivp
from scipy.interpolate import PchipInterpolator

from .fgr import FgrData
from .ground_state import GroundStateBranch


@dataclass(frozen=True)
class ReducedState:
    t: float
    lam: float
    z: np.ndarray


class ReducedModel:
    """Mass curve, frequency table and FGR forms along the branch."""

    def __init__(self, branch: GroundStateBranch, energies: dict[float, float],
                 fgr: dict[float, FgrData], sigma: float = 1.0,
                 interpolate_rates: bool = False):
        self.branch = branch
        self.sigma = sigma
        self.lams = branch.lams
        evals = np.array([energies[l] for l in self.lams])
        self._energy = PchipInterpolator(self.lams, evals)
        self.fgr = [fgr[l] for l in self.lams]
        self.interpolate_rates = interpolate_rates
        for data in self.fgr:
            if data.z_gamma_z(np.ones(data.nmodes)) < 0:
                raise ValueError("Gamma form not positive semidefinite on the branch")
        self.frozen_at: float | None = None

    @property
    def nmodes(self) -> int:
        return self.fgr[0].nmodes

    def mass(self, lam):
        return self.branch.mass(lam)

    def lam_of_mass(self, n):
        return self.branch.lam_of_mass(n)

    def energy(self, lam) -> float:
        return float(self._energy(lam))

    def delta_inf(self, lam) -> float:
        """||phi^lam||_2, the soliton-amplitude convention of the bounds."""
        return float(np.sqrt(self.branch.mass(lam)))

    def freeze(self, lam: float) -> "ReducedModel":
        """Pin the Gamma/Lambda forms at one branch point (default use)."""
        self.frozen_at = lam
        return self

    def _fgr_at(self, lam: float) -> tuple[FgrData, FgrData, float]:
        lams = self.lams
        if self.frozen_at is not None and not self.interpolate_rates:
            lam = self.frozen_at
        j = int(np.clip(np.searchsorted(lams, lam) - 1, 0, len(lams) - 2))
        t = np.clip((lam - lams[j]) / (lams[j + 1] - lams[j]), 0.0, 1.0)
        if not self.interpolate_rates:
            t = round(t)
        return self.fgr[j], self.fgr[j + 1], float(t)

    def damping_terms(self, lam: float, z: np.ndarray) -> np.ndarray:
        """(-Gamma + Lambda) z with the dynamical normalization."""
        a, b, t = self._fgr_at(lam)
        ma = -a.gamma_matrix_dyn(z) + a.lambda_matrix_dyn(z)
        if t == 0.0:
            return ma @ z
        mb = -b.gamma_matrix_dyn(z) + b.lambda_matrix_dyn(z)
        return ((1 - t) * ma + t * mb) @ z

    def growth_rate(self, lam: float, z: np.ndarray, use_gamma0: bool = True) -> float:
        a, b, t = self._fgr_at(lam)
        va = a.z_gamma0_z_dyn(z) if use_gamma0 else a.z_gamma_z_dyn(z)
        if t == 0.0:
            return va
        vb = b.z_gamma0_z_dyn(z) if use_gamma0 else b.z_gamma_z_dyn(z)
        return (1 - t) * va + t * vb


@dataclass
class ReducedTrajectory:
    times: np.ndarray
    lam: np.ndarray
    mass: np.ndarray
    z: np.ndarray            # (nt, N) complex, lab frame

    @property
    def z_abs(self) -> np.ndarray:
        return np.sqrt(np.sum(np.abs(self.z) ** 2, axis=1))


def integrate_reduced(model: ReducedModel, state0: ReducedState, t_end: float,
                      dt: float, z_damping: str = "gamma",
                      rtol: float = 1e-11, atol: float = 1e-13,
                      enforce_phase_resolution: bool = True) -> ReducedTrajectory:
    """Integrate the reduced system, sampling every `dt`.

    `dt` is the output stride and must resolve the fast phase
    (dt * E <= 0.1 is the documented contract: coarser sampling aliases
    the returned lab-frame phases).  Internally the rotating-frame system
    is smooth and DOP853 controls its own step, so phase-free studies of
    very long horizons may disable the check.  `z_damping` selects Gamma
    (default) or Gamma0 in the z equation.
    """
    e0 = model.energy(state0.lam)
    if enforce_phase_resolution and dt * e0 > 0.1 + 1e-12:
        raise ValueError(f"dt = {dt} does not resolve the phase: dt*E = {dt * e0:.3f} > 0.1")
    n0 = float(model.mass(state0.lam))
    nm = model.nmodes
    use_g0 = z_damping == "gamma0"

    def rhs(t, y):
        n, _phi = y[0], y[1]
        w = y[2:2 + nm] + 1j * y[2 + nm:]
        lam = float(model.lam_of_mass(np.clip(n, model.branch.masses[0],
                                              model.branch.masses[-1])))
        if use_g0:
            a, b, tt = model._fgr_at(lam)
            dw = -(1 - tt) * a.gamma0_damping_dyn(w)
            if tt:
                dw = dw - tt * b.gamma0_damping_dyn(w)
        else:
            dw = model.damping_terms(lam, w)
        dn = model.growth_rate(lam, w, use_gamma0=True)
        out = np.empty_like(y)
        out[0] = dn
        out[1] = model.energy(lam)
        out[2:2 + nm] = dw.real
        out[2 + nm:] = dw.imag
        return out

    y0 = np.concatenate([[n0, 0.0], state0.z.real, state0.z.imag])
    times = np.minimum(np.arange(0.0, t_end + 0.5 * dt, dt), t_end)
    sol = solve_ivp(rhs, (0.0, t_end), y0, t_eval=times, method="DOP853",
                    rtol=rtol, atol=atol)
    if not sol.success:
        raise RuntimeError(f"reduced integration failed: {sol.message}")
    n = sol.y[0]
    if np.any(n < model.branch.masses[0] - 1e-12) or \
       np.any(n > model.branch.masses[-1] + 1e-12):
        raise ValueError("lam exited the tabulated branch range")
    phi = sol.y[1]
    w = sol.y[2:2 + nm] + 1j * sol.y[2 + nm:]
    z = (w * np.exp(-1j * phi)).T
    lam = np.asarray(model.lam_of_mass(np.clip(n, model.branch.masses[0],
                                               model.branch.masses[-1])))
    return ReducedTrajectory(times=sol.t, lam=lam, mass=n, z=z)


def equipartition_invariant(traj: ReducedTrajectory) -> np.ndarray:
    """Drift of 2 N(lam(t)) + |z(t)|^2 relative to its initial value."""
    inv = 2.0 * traj.mass + traj.z_abs**2
    return inv - inv[0]


def envelopes(model: ReducedModel, lam0: float, z0_abs: float,
              nsamples: int = 64, seed: int = 3):
    """Upper/lower decay envelopes z_pm(t) from the extremes of the
    quartic damping form, normalized by delta_inf^(2(2s-1))."""
    rng = np.random.default_rng(seed)
    nm = model.nmodes
    dinf = model.delta_inf(lam0)
    power = dinf ** (2 * (2 * model.sigma - 1))
    vals = []
    for _ in range(nsamples):
        z = rng.standard_normal(nm) + 1j * rng.standard_normal(nm)
        vals.append(2.0 * model.growth_rate(lam0, z, use_gamma0=False)
                    / np.sum(np.abs(z) ** 2) ** 2)
    c_plus = min(vals) / power    # slowest decay -> upper envelope
    c_minus = max(vals) / power   # fastest decay -> lower envelope
    if c_plus <= 0:
        raise ValueError("FGR positivity failure: fitted C_+ <= 0")

    def z_plus(t):
        return (z0_abs**-2 + c_plus * power * np.asarray(t)) ** -0.5

    def z_minus(t):
        return (z0_abs**-2 + c_minus * power * np.asarray(t)) ** -0.5

    return z_plus, z_minus, c_plus, c_minus


@dataclass(frozen=True)
class EquipartitionPrediction:
    lam0: float
    lam_inf: float
    mass0: float
    mass_inf: float
    gain: float


def predict_equipartition(model: ReducedModel, lam0: float,
                          z0: np.ndarray) -> EquipartitionPrediction:
    """N_inf = N(lam0) + |z0|^2 / 2 and the corresponding lam_inf."""
    z0 = np.atleast_1d(np.asarray(z0, dtype=complex))
    n0 = float(model.mass(lam0))
    gain = 0.5 * float(np.sum(np.abs(z0) ** 2))
    n_inf = n0 + gain
    if n_inf > model.branch.masses[-1] + 1e-12:
        raise ValueError("predicted final mass exits the tabulated branch")
    return EquipartitionPrediction(
        lam0=lam0, lam_inf=float(model.lam_of_mass(n_inf)),
        mass0=n0, mass_inf=n_inf, gain=gain,
    )
