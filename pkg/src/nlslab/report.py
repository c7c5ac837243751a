"""Tidy plot-data CSVs and figures from recorded runs.

The report path renders matplotlib figures next to the delimited output:
decay fits in log-log, the mass curve with the measured excursion, source
integrals, and the envelope band around |z(t)|.  Output is deterministic
(fixed float formatting, no timestamps) so re-emits are byte-identical.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .artifacts import RunArtifacts

_PNG_META = {"metadata": {"Software": "nlslab", "Date": None}}


def fit_decay_exponent(times: np.ndarray, z_abs: np.ndarray,
                       window: tuple[float, float] = (0.1, 0.8)
                       ) -> tuple[float, np.ndarray]:
    """log-log slope of |z(t)| over the window where
    window[0] <= |z|/|z0| <= window[1]; returns (slope, mask)."""
    rel = z_abs / z_abs[0]
    mask = (rel >= window[0]) & (rel <= window[1]) & (times > 0)
    if mask.sum() < 8:
        raise ValueError("decay window too short for a fit")
    slope = float(np.polyfit(np.log(times[mask]), np.log(z_abs[mask]), 1)[0])
    return slope, mask


def fit_quartic_rate(times: np.ndarray, z_abs: np.ndarray,
                     window: tuple[float, float] = (0.1, 0.8)) -> float:
    """Fitted gamma-hat of 1/|z|^2 = 1/|z0|^2 + 2 gamma-hat t."""
    rel = z_abs**2 / z_abs[0] ** 2
    mask = (rel >= window[0]) & (rel <= window[1])
    slope = np.polyfit(times[mask], z_abs[mask] ** -2.0, 1)[0]
    return float(0.5 * slope)


def _save(fig, art: RunArtifacts, name: str):
    path = art.path(name)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(path, dpi=110, **_PNG_META)
    plt.close(fig)
    art.register(path)


def report_run(art: RunArtifacts, diag, branch, envelopes=None,
               reduced=None, prefix: str = "run") -> dict:
    """Emit the tidy CSVs + figures for one tracked run; returns the fit
    summary that also lands in JSON."""
    t = diag.times
    za = diag.z_abs
    nser = np.asarray(branch.mass(diag.lam), dtype=float)

    slope, mask = fit_decay_exponent(t, za)
    gamma_hat = fit_quartic_rate(t, za)
    rows = []
    for j in range(len(t)):
        row = [t[j], diag.lam[j], nser[j]]
        row += [diag.z[j, k].real for k in range(diag.z.shape[1])]
        row += [diag.z[j, k].imag for k in range(diag.z.shape[1])]
        row += [za[j] ** 2, 2.0 * nser[j] + za[j] ** 2,
                diag.norm_r[j], diag.wnorm_r_h2[j], diag.norm_r_inf[j],
                diag.wnorm_r_tilde[j], diag.wnorm_r_ge4[j],
                diag.mass[j], diag.absorbed[j], diag.budget_error[j],
                int(mask[j])]
        rows.append(row)
    nmodes = diag.z.shape[1]
    header = (["t", "lam", "mass"]
              + [f"re_z{k}" for k in range(nmodes)]
              + [f"im_z{k}" for k in range(nmodes)]
              + ["z_sq", "two_n_plus_zsq", "norm_r", "wnorm_r_h2",
                 "norm_r_inf", "wnorm_r_tilde", "wnorm_r_ge4",
                 "mass_total", "absorbed", "budget_error", "fit_window"])
    art.add_csv(f"{prefix}_trajectory.csv", header, rows)

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.loglog(t[1:], za[1:], lw=1.0, label="|z(t)|")
    if envelopes is not None:
        z_plus, z_minus = envelopes[:2]
        ax.loglog(t[1:], 5.0 * z_plus(t[1:]), "--", lw=0.8, label="5 z+")
        ax.loglog(t[1:], 0.2 * z_minus(t[1:]), "--", lw=0.8, label="z-/5")
    tw = t[mask]
    ax.loglog(tw, np.exp(np.polyval(
        np.polyfit(np.log(t[mask]), np.log(za[mask]), 1), np.log(tw))),
        "k:", label=f"fit slope {slope:.3f}")
    ax.set_xlabel("t")
    ax.set_ylabel("|z|")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, art, f"{prefix}_z_decay.png")

    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    lgrid = np.linspace(branch.lams[0], branch.lams[-1], 200)
    ax.plot(lgrid, branch.mass(lgrid), lw=1.0, label="N(lam)")
    ax.plot(diag.lam, nser, ".", ms=2, label="run")
    ax.set_xlabel("lam")
    ax.set_ylabel("N")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, art, f"{prefix}_mass_curve.png")

    if reduced is not None:
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        ax.plot(t, diag.lam, lw=1.0, label="PDE")
        ax.plot(reduced.times, reduced.lam, "--", lw=1.0, label="reduced")
        ax.set_xlabel("t")
        ax.set_ylabel("lam(t)")
        ax.legend(frameon=False, fontsize=8)
        fig.tight_layout()
        _save(fig, art, f"{prefix}_lam_overlay.png")
        art.add_csv(
            f"{prefix}_lam_overlay.csv", ["t", "lam_pde", "lam_reduced"],
            [[tt, lp, lr] for tt, lp, lr in zip(
                t, diag.lam, np.interp(t, reduced.times, reduced.lam))])

    return {"decay_exponent": slope, "fitted_gamma_hat": gamma_hat}


def report_sources(art: RunArtifacts, sources, z0_sq: float, prefix: str = "run"):
    rows = list(zip(sources.times, sources.s_lam, sources.s_z))
    art.add_csv(f"{prefix}_sources.csv", ["t", "s_lam", "s_z"], rows)
    fig, ax = plt.subplots(figsize=(6.0, 4.0))
    ax.plot(sources.times, sources.s_lam, lw=0.8, label="S_lam")
    ax.plot(sources.times, sources.s_z, lw=0.8, label="S_z")
    ax.set_xlabel("t")
    ax.set_ylabel("residual sources")
    ax.legend(frameon=False, fontsize=8)
    fig.tight_layout()
    _save(fig, art, f"{prefix}_sources.png")
    r_lam, r_z = sources.ratios(z0_sq)
    return {"int_s_lam_over_z0sq": r_lam, "int_s_z_over_z0sq": r_z}
