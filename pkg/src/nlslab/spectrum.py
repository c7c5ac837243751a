"""Discrete spectrum of -Lap + V and the continuous-spectrum projector.

Bound states are computed matrix-free: Lanczos only ever sees the action
of the spectral Laplacian plus the pointwise potential.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigsh

from .grid import Field, Grid, inner_values, laplacian_values, save_field
from .potentials import Potential

THRESHOLD_BUFFER = 1e-6
DEGENERACY_RTOL = 1e-7


class InsufficientBoundStatesError(RuntimeError):
    pass


@dataclass(frozen=True)
class LinearSpectrum:
    """Lowest eigenpairs of -Lap + V.

    `phi_lin` is the positive unit-L2 ground state; `xi_lin` holds the
    excited eigenfunctions (unit L2, mutually orthogonal).  `multiplicity`
    is the size of the first excited cluster.
    """

    potential: Potential
    eigenvalues: np.ndarray
    phi_lin: Field
    xi_lin: tuple[Field, ...]
    residuals: np.ndarray
    multiplicity: int = field(default=1)

    @property
    def e0(self) -> float:
        return float(self.eigenvalues[0])

    @property
    def e1(self) -> float:
        return float(self.eigenvalues[1])

    @property
    def grid(self) -> Grid:
        return self.potential.grid

    def bound_states(self) -> list[Field]:
        return [self.phi_lin, *self.xi_lin]

    def export_json(self, path: str | Path, fields_dir: str | Path | None = None) -> dict:
        path = Path(path)
        entries = []
        refs = []
        if fields_dir is not None:
            fields_dir = Path(fields_dir)
            fields_dir.mkdir(parents=True, exist_ok=True)
            for j, u in enumerate(self.bound_states()):
                ref = fields_dir / f"bound_state_{j}.bin"
                save_field(u, ref)
                refs.append(str(ref))
        for j, (ev, res) in enumerate(zip(self.eigenvalues, self.residuals)):
            entry = {"eigenvalue": float(ev), "residual": float(res)}
            if refs:
                entry["field"] = refs[j]
            entries.append(entry)
        doc = {
            "potential": self.potential.name,
            "params": self.potential.params,
            "multiplicity": self.multiplicity,
            "states": entries,
        }
        path.write_text(json.dumps(doc, indent=2))
        return doc


def hamiltonian_apply(grid: Grid, v: np.ndarray):
    def apply(u: np.ndarray) -> np.ndarray:
        return -laplacian_values(grid, u) + v * u
    return apply


def discrete_spectrum(potential: Potential, k: int = 2, tol: float = 1e-12,
                      maxiter: int | None = None,
                      cluster_rtol: float = DEGENERACY_RTOL) -> LinearSpectrum:
    """k lowest eigenpairs of -Lap + V via matrix-free Lanczos ('SA').

    Raises InsufficientBoundStatesError when fewer than k eigenvalues sit
    below the continuum edge (buffer 1e-6); warns on near-threshold states.
    `cluster_rtol` sets how close excited levels must be to count as one
    multiplicity class; widen it to treat a nearly degenerate pair as a
    single N = 2 cluster.
    """
    if k < 2:
        raise ValueError("need at least the ground and one excited state")
    grid = potential.grid
    v = potential.values
    npts = grid.npoints
    ham = hamiltonian_apply(grid, v)

    def matvec(u):
        return ham(u.reshape(grid.shape).astype(complex)).real.ravel()

    op = LinearOperator((npts, npts), matvec=matvec, dtype=float)
    # a couple of extra Ritz pairs stabilizes clustered excited levels
    vals, vecs = eigsh(op, k=k + 2, which="SA", tol=tol, maxiter=maxiter)
    order = np.argsort(vals)
    vals, vecs = vals[order], vecs[:, order]

    bound = vals < -THRESHOLD_BUFFER
    if bound[:k].sum() < k:
        raise InsufficientBoundStatesError(
            f"only {int(bound.sum())} bound states below threshold, requested {k}"
        )
    near = (vals >= -THRESHOLD_BUFFER) & (vals < THRESHOLD_BUFFER)
    if near.any():
        warnings.warn("near-threshold eigenvalue detected; resolvent estimates degrade",
                      stacklevel=2)
    vals, vecs = vals[:k], vecs[:, :k]

    fields, residuals = [], []
    scale = 1.0 / np.sqrt(grid.cell_volume)
    for j in range(k):
        u = vecs[:, j].reshape(grid.shape) * scale  # unit L2 on the grid measure
        hu = ham(u.astype(complex)).real
        residuals.append(np.sqrt(grid.cell_volume * np.sum((hu - vals[j] * u) ** 2)))
        fields.append(u)
    residuals = np.asarray(residuals)
    if residuals.max() > 1e-9:
        raise RuntimeError(f"eigensolver residual {residuals.max():.2e} above 1e-9")

    # Perron ground state: fix the overall sign to make it positive
    ground = fields[0]
    if ground[np.unravel_index(np.argmax(np.abs(ground)), grid.shape)] < 0:
        ground = -ground
    excited = [Field(grid, f.astype(complex)) for f in fields[1:]]

    # degeneracy of the first excited level
    multiplicity = 1
    for j in range(2, k):
        if abs(vals[j] - vals[1]) <= cluster_rtol * max(abs(vals[1]), 1.0):
            multiplicity += 1
        else:
            break

    return LinearSpectrum(
        potential=potential,
        eigenvalues=vals,
        phi_lin=Field(grid, ground.astype(complex)),
        xi_lin=tuple(excited),
        residuals=residuals,
        multiplicity=multiplicity,
    )


@dataclass(frozen=True)
class AssumptionReport:
    two_trapped_levels: bool
    coupling_condition: bool      # 2 e1 - e0 > 0
    coupling_margin: float
    excited_margin: float         # -e1, distance of e1 below the continuum
    messages: tuple[str, ...]

    @property
    def ok(self) -> bool:
        return self.two_trapped_levels and self.coupling_condition


def check_assumptions(spec: LinearSpectrum) -> AssumptionReport:
    """Certify the trapped-level and second-order coupling hypotheses."""
    messages = []
    two_levels = spec.eigenvalues.size >= 2 and spec.e0 < spec.e1 < -THRESHOLD_BUFFER
    if not two_levels:
        if spec.eigenvalues.size < 2 or spec.e1 >= -THRESHOLD_BUFFER:
            messages.append("no trapped excited state")
        else:
            messages.append("eigenvalue ordering violated")
    margin = 2.0 * spec.e1 - spec.e0
    if margin <= 0:
        messages.append(f"second-order coupling fails: 2*e1 - e0 = {margin:.6g} <= 0")
    return AssumptionReport(
        two_trapped_levels=bool(two_levels),
        coupling_condition=bool(margin > 0),
        coupling_margin=float(margin),
        excited_margin=float(-spec.e1),
        messages=tuple(messages),
    )


def project_continuous_lin(f: Field, spec: LinearSpectrum) -> Field:
    """f minus its components along all computed bound states."""
    out = f.values.copy()
    grid = spec.grid
    for u in spec.bound_states():
        out -= inner_values(grid, f.values, u.values) * u.values
    return Field(grid, out)


def project_continuous_values(values: np.ndarray, spec: LinearSpectrum) -> np.ndarray:
    out = values.copy()
    grid = spec.grid
    for u in spec.bound_states():
        out -= inner_values(grid, values, u.values) * u.values
    return out
