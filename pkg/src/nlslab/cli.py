"""Command-line harness: configuration in, hashed artifacts out.

Subcommands: spectrum | branch | modes | fgr | reduce | evolve |
equipartition | report.  Exit codes: 0 success, 2 assumption-check
failure, 3 numerical non-convergence, 4 usage error.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import evolution, fgr, normal_form, reduced, report
from .artifacts import RunArtifacts
from .config import ConfigError, ExperimentConfig, load_config
from .ground_state import NewtonError
from .linearization import check_threshold_resonance
from .pipeline import build_pipeline, build_spectrum, equipartition_window
from .resolvent import NonConvergenceError
from .spectrum import InsufficientBoundStatesError, check_assumptions

EXIT_OK = 0
EXIT_ASSUMPTION = 2
EXIT_NUMERICAL = 3
EXIT_USAGE = 4


def _spectrum(cfg: ExperimentConfig):
    g = cfg["grid"]
    pot = cfg.potential_params()
    name = pot.pop("name")
    return build_spectrum(g["dimension"], g["points_per_axis"],
                          g["box_half_length_space"], name, pot,
                          k=cfg["model"]["bound_states"])


def _artifacts(cfg: ExperimentConfig, command: str) -> RunArtifacts:
    return RunArtifacts(root=cfg.outdir / command, config_hash=cfg.digest,
                        command=command)


def cmd_spectrum(cfg: ExperimentConfig) -> int:
    art = _artifacts(cfg, "spectrum")
    spec = _spectrum(cfg)
    rep = check_assumptions(spec)
    thresh = check_threshold_resonance(spec)
    doc = spec.export_json(art.path("spectrum.json"), art.path("fields"))
    art.register(art.path("spectrum.json"))
    for state in doc["states"]:
        if "field" in state:
            art.register(Path(state["field"]))
            art.register(Path(state["field"] + ".json"))
    art.add_json("assumptions.json", {
        "two_trapped_levels": rep.two_trapped_levels,
        "coupling_condition": rep.coupling_condition,
        "coupling_margin": rep.coupling_margin,
        "excited_margin": rep.excited_margin,
        "messages": list(rep.messages),
        "threshold_checked": thresh.checked,
        "threshold_resonance_suspected": thresh.resonance_suspected,
        "threshold_matching_value": thresh.matching_value,
    })
    art.finalize()
    if not rep.ok:
        print("assumption check FAILED:", "; ".join(rep.messages))
        return EXIT_ASSUMPTION
    print(f"spectrum ok: e0={spec.e0:.8f} e1={spec.e1:.8f} "
          f"2e1-e0={rep.coupling_margin:.6f} N={spec.multiplicity}")
    return EXIT_OK


def cmd_branch(cfg: ExperimentConfig) -> int:
    art = _artifacts(cfg, "branch")
    spec = _spectrum(cfg)
    offsets = np.asarray(cfg["branch"]["offsets_energy"], dtype=float)
    pipe = build_pipeline(spec, cfg["model"]["sigma"], offsets,
                          cache_dir=cfg.outdir / "branch_cache",
                          with_fgr=False, with_nf=False)
    rows = []
    for pt in pipe.branch.points:
        p = pt.profile
        rows.append([p.lam, p.lam + spec.e0, p.delta_measured, p.delta_predicted,
                     p.mass(), pt.mass_slope(), p.residual, p.newton_iterations])
    art.add_csv("branch.csv",
                ["lam", "offset", "delta_measured", "delta_predicted",
                 "mass", "mass_slope", "residual", "newton_iterations"], rows)
    mus = offsets
    deltas = pipe.branch.deltas()
    slope = float(np.polyfit(np.log(mus), np.log(deltas), 1)[0])
    art.add_json("amplitude_law.json", {
        "fitted_exponent": slope,
        "expected_exponent": 1.0 / (2.0 * cfg["model"]["sigma"]),
    })
    art.finalize()
    print(f"branch built: {len(rows)} points, delta-law exponent {slope:.4f}")
    return EXIT_OK


def _full_pipeline(cfg: ExperimentConfig, offsets=None, with_fgr=True,
                   with_nf=True):
    spec = _spectrum(cfg)
    if offsets is None:
        offsets = np.asarray(cfg["branch"]["offsets_energy"], dtype=float)
    return build_pipeline(spec, cfg["model"]["sigma"], offsets,
                          cache_dir=cfg.outdir / "branch_cache",
                          with_fgr=with_fgr, with_nf=with_nf)


def cmd_modes(cfg: ExperimentConfig) -> int:
    art = _artifacts(cfg, "modes")
    pipe = _full_pipeline(cfg, with_fgr=False, with_nf=False)
    rows = []
    for lam in pipe.branch.lams:
        m = pipe.modes[lam]
        for k in range(m.count):
            rows.append([lam, k, m.frequencies[k], m.block_residuals[k]])
    art.add_csv("modes.csv", ["lam", "mode", "energy", "block_residual"], rows)
    art.finalize()
    e1e0 = pipe.spec.e1 - pipe.spec.e0
    print(f"modes: E range [{rows[0][2]:.6f}, {rows[-1][2]:.6f}], e1-e0={e1e0:.6f}")
    return EXIT_OK


def cmd_fgr(cfg: ExperimentConfig) -> int:
    art = _artifacts(cfg, "fgr")
    pipe = _full_pipeline(cfg)
    rng = np.random.default_rng(cfg.seed)
    summary = []
    for lam in pipe.branch.lams:
        data = pipe.fgr[lam]
        nm = data.nmodes
        samples = rng.standard_normal((16, nm)) + 1j * rng.standard_normal((16, nm))
        vals = [data.z_gamma_z(z) for z in samples]
        pt = pipe.branch.point(lam)
        modes = pipe.modes[lam]
        z1 = np.ones(nm)
        h22 = fgr.h22_identity_check(pipe.spec, lam, modes.energy, z1,
                                     pipe.sigma, delta=data.delta)
        pi = normal_form.pi22_identity(pipe.spec, pipe.linearizations[lam],
                                       modes, pipe.nf[lam], data, z1)
        summary.append({
            "lam": lam, "delta": data.delta,
            "gamma_positive": bool(min(vals) > 0),
            "min_sampled_z_gamma_z": float(min(vals)),
            "eps": data.eps.tolist(),
            "max_eps_defect": float(data.eps_defects.max()),
            "h22": h22,
            "pi22": pi.pi22,
            "pi22_combo_ratio": pi.combo_ratio,
            "theta22": pi.theta22,
            "z_coeff": {"re": data.zc.real.tolist(), "im": data.zc.imag.tolist()},
            "gamma0_prefactor": data.gamma0_prefactor,
            "reduction_bound": data.reduction_bound,
        })
    art.add_json("fgr.json", {"points": summary})
    rows = [[s["lam"], s["delta"], s["min_sampled_z_gamma_z"],
             s["max_eps_defect"], s["h22"], s["pi22"], s["theta22"]]
            for s in summary]
    art.add_csv("fgr.csv", ["lam", "delta", "min_z_gamma_z", "max_eps_defect",
                            "h22", "pi22", "theta22"], rows)
    art.finalize()
    ok = all(s["gamma_positive"] for s in summary)
    print(f"fgr: positivity {'certified' if ok else 'FAILED'} on "
          f"{len(summary)} branch points")
    return EXIT_OK if ok else EXIT_ASSUMPTION


def cmd_reduce(cfg: ExperimentConfig) -> int:
    art = _artifacts(cfg, "reduce")
    sec = cfg["equipartition"]
    offsets = equipartition_window(sec["center_offset_energy"],
                                   sec["window_halfwidth_energy"],
                                   sec["window_points"])
    pipe = _full_pipeline(cfg, offsets=offsets)
    lam0 = -pipe.spec.e0 + sec["center_offset_energy"]
    model = pipe.reduced_model().freeze(lam0)
    rsec = cfg["reduce"]
    delta = pipe.point(lam0).profile.delta_measured
    z0 = np.array([rsec["amplitude"] * delta + 0.0j])
    state0 = reduced.ReducedState(t=0.0, lam=lam0, z=z0)
    traj = reduced.integrate_reduced(model, state0, rsec["t_end_time"],
                                     rsec["dt_time"])
    drift = reduced.equipartition_invariant(traj)
    rows = [[traj.times[j], traj.lam[j], traj.mass[j],
             traj.z[j, 0].real, traj.z[j, 0].imag,
             traj.z_abs[j] ** 2, drift[j]] for j in range(len(traj.times))]
    art.add_csv("reduced_trajectory.csv",
                ["t", "lam", "mass", "re_z0", "im_z0", "z_sq", "invariant_drift"],
                rows)
    pred = reduced.predict_equipartition(model, lam0, z0)
    art.add_json("reduced_summary.json", {
        "lam0": lam0, "z0_abs": float(np.abs(z0[0])),
        "predicted_lam_inf": pred.lam_inf,
        "predicted_mass_gain": pred.gain,
        "max_invariant_drift": float(np.abs(drift).max()),
    })
    art.finalize()
    print(f"reduced run: drift {np.abs(drift).max():.3e}, "
          f"predicted lam_inf {pred.lam_inf:.6f}")
    return EXIT_OK


def _evolution_config(cfg: ExperimentConfig, t_end=None) -> evolution.EvolutionConfig:
    e = cfg["evolution"]
    return evolution.EvolutionConfig(
        dt=e["dt_time"], t_end=t_end if t_end is not None else e["t_end_time"],
        sponge_strength=e["sponge_strength_rate"],
        sponge_fraction=e["sponge_fraction"],
        record_every=e["record_every_steps"],
    )


def _single_run(pipe, cfg: ExperimentConfig, amplitude_ratio: float,
                t_end=None):
    sec = cfg["equipartition"]
    lam0 = -pipe.spec.e0 + sec["center_offset_energy"]
    tables = pipe.tables()
    delta = pipe.point(lam0).profile.delta_measured
    z0 = amplitude_ratio * delta
    psi0 = evolution.synthesize_initial_data(
        tables, lam0, sec["initial_phase"], np.array([z0]), np.array([0.0]))
    if t_end is None:
        model = pipe.reduced_model().freeze(lam0)
        rate = model.growth_rate(lam0, np.array([1.0 + 0j]), use_gamma0=False) \
            / 1.0
        t_end = 1.1 / (sec["decay_target"] * rate * z0**2) * \
            (1.0 - sec["decay_target"])
    econf = _evolution_config(cfg, t_end=t_end)
    diag = evolution.track_run(psi0, econf, tables,
                               pipe.spec.potential.values, pipe.sigma)
    return lam0, diag


def cmd_evolve(cfg: ExperimentConfig) -> int:
    art = _artifacts(cfg, "evolve")
    sec = cfg["equipartition"]
    offsets = equipartition_window(sec["center_offset_energy"],
                                   sec["window_halfwidth_energy"],
                                   sec["window_points"])
    pipe = _full_pipeline(cfg, offsets=offsets)
    ratio = sec["amplitude_ratios"][-1]
    lam0, diag = _single_run(pipe, cfg, ratio,
                             t_end=cfg["evolution"]["t_end_time"])
    model = pipe.reduced_model().freeze(lam0)
    env = reduced.envelopes(model, lam0, float(diag.z_abs[0]))
    fits = report.report_run(art, diag, pipe.branch, envelopes=env)
    srcs = evolution.residual_sources(diag, pipe.branch, pipe.fgr[lam0])
    fits.update(report.report_sources(art, srcs, float(diag.z_abs[0] ** 2)))
    art.add_json("evolve_summary.json", {
        "lam0": lam0, "z0_abs": float(diag.z_abs[0]),
        "max_budget_error": float(np.abs(diag.budget_error).max()),
        **fits,
    })
    art.finalize()
    print(f"evolve: fits {fits}")
    return EXIT_OK


_POOL_PIPE = {}


def _sweep_member(args):
    cfg, ratio = args
    pipe = _POOL_PIPE["pipe"]
    lam0, diag = _single_run(pipe, cfg, ratio)
    eq = evolution.measure_equipartition(diag, pipe.branch,
                                         cfg["equipartition"]["decay_target"])
    srcs = evolution.residual_sources(diag, pipe.branch, pipe.fgr[lam0])
    r_lam, r_z = srcs.ratios(eq.z0_sq)
    return ratio, diag, eq, (r_lam, r_z)


def cmd_equipartition(cfg: ExperimentConfig) -> int:
    art = _artifacts(cfg, "equipartition")
    sec = cfg["equipartition"]
    offsets = equipartition_window(sec["center_offset_energy"],
                                   sec["window_halfwidth_energy"],
                                   sec["window_points"])
    pipe = _full_pipeline(cfg, offsets=offsets)
    lam0 = -pipe.spec.e0 + sec["center_offset_energy"]
    model = pipe.reduced_model().freeze(lam0)
    _POOL_PIPE["pipe"] = pipe
    jobs = [(cfg, r) for r in sec["amplitude_ratios"]]
    workers = int(sec["workers"])
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_sweep_member, jobs))
    else:
        results = [_sweep_member(j) for j in jobs]

    summary = []
    for ratio, diag, eq, (r_lam, r_z) in sorted(results, key=lambda r: r[0]):
        prefix = f"run_r{ratio:g}".replace(".", "p")
        state0 = reduced.ReducedState(t=0.0, lam=eq.lam0, z=diag.z[0])
        red = reduced.integrate_reduced(
            model, state0, float(diag.times[-1]),
            dt=min(0.09 / model.energy(lam0), diag.times[1] - diag.times[0]))
        fits = report.report_run(art, diag, pipe.branch, reduced=red,
                                 prefix=prefix)
        pred = reduced.predict_equipartition(model, eq.lam0, diag.z[0])
        lam_err = float(np.abs(np.interp(diag.times, red.times, red.lam)
                               - diag.lam).max())
        excursion = float(abs(eq.lam_inf - eq.lam0))
        summary.append({
            "amplitude_ratio": ratio,
            "z0_abs": float(np.sqrt(eq.z0_sq)),
            "ratio": eq.ratio, "radiated_ratio": eq.radiated_ratio,
            "lam0": eq.lam0, "lam_inf": eq.lam_inf,
            "predicted_lam_inf": pred.lam_inf,
            "reduced_vs_full_lam_err": lam_err,
            "lam_excursion": excursion,
            "int_s_lam_over_z0sq": r_lam, "int_s_z_over_z0sq": r_z,
            **fits,
        })
    art.add_json("equipartition.json", {"sweep": summary})
    art.add_csv("equipartition.csv",
                ["amplitude_ratio", "ratio", "radiated_ratio",
                 "decay_exponent", "int_s_lam_over_z0sq", "int_s_z_over_z0sq"],
                [[s["amplitude_ratio"], s["ratio"], s["radiated_ratio"],
                  s["decay_exponent"], s["int_s_lam_over_z0sq"],
                  s["int_s_z_over_z0sq"]] for s in summary])
    art.finalize()
    for s in summary:
        print(f"  r={s['amplitude_ratio']}: ratio={s['ratio']:.4f} "
              f"radiated={s['radiated_ratio']:.4f} slope={s['decay_exponent']:.3f}")
    return EXIT_OK


def cmd_report(cfg: ExperimentConfig, rundir: str) -> int:
    import csv as _csv
    src = Path(rundir)
    trajs = sorted(src.glob("*_trajectory.csv"))
    if not trajs:
        print(f"no trajectory CSVs under {src}", file=sys.stderr)
        return EXIT_USAGE
    art = RunArtifacts(root=src / "report", config_hash=cfg.digest,
                       command="report")
    for traj in trajs:
        with traj.open() as fh:
            reader = _csv.reader(fh)
            header = next(reader)
            data = np.array([[float(c) if not c.endswith("j") else 0.0
                              for c in row] for row in reader])
        cols = {name: data[:, j] for j, name in enumerate(header)}
        t, za = cols["t"], np.sqrt(cols["z_sq"])
        slope, mask = report.fit_decay_exponent(t, za)
        gamma_hat = report.fit_quartic_rate(t, za)
        art.add_csv(f"{traj.stem}_fit.csv",
                    ["t", "z_abs", "in_window", "fit_slope", "fitted_gamma_hat"],
                    [[t[j], za[j], int(mask[j]), slope, gamma_hat]
                     for j in range(len(t))])
        import matplotlib.pyplot as plt
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        ax.loglog(t[1:], za[1:], lw=1.0)
        ax.set_xlabel("t")
        ax.set_ylabel("|z|")
        ax.set_title(f"slope {slope:.3f}")
        fig.tight_layout()
        fig.savefig(art.path(f"{traj.stem}_loglog.png"), dpi=110,
                    metadata={"Software": "nlslab", "Date": None})
        plt.close(fig)
        art.register(art.path(f"{traj.stem}_loglog.png"))
    art.finalize()
    print(f"report: {len(trajs)} trajectories -> {art.root}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(
        prog="nlslab",
        description="soliton mass-transfer laboratory for NLS/GP equations")
    parser.add_argument("-c", "--config", default=None,
                        help="TOML experiment configuration")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("spectrum", "branch", "modes", "fgr", "reduce", "evolve",
                 "equipartition"):
        sub.add_parser(name)
    rep = sub.add_parser("report")
    rep.add_argument("rundir", help="directory holding *_trajectory.csv outputs")

    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code not in (0, None) else 0

    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    handlers = {
        "spectrum": cmd_spectrum,
        "branch": cmd_branch,
        "modes": cmd_modes,
        "fgr": cmd_fgr,
        "reduce": cmd_reduce,
        "evolve": cmd_evolve,
        "equipartition": cmd_equipartition,
    }
    try:
        if args.command == "report":
            return cmd_report(cfg, args.rundir)
        return handlers[args.command](cfg)
    except (InsufficientBoundStatesError, NonConvergenceError, NewtonError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
