"""Experiment configuration: one TOML file with nested sections, all
physical quantities carrying explicit units in the key names.  Configs
are hashed (canonical JSON of the parsed tree) so run manifests can
assert reproducibility.
"""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import dataclass, field
from pathlib import Path

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


DEFAULTS = {
    "grid": {
        "dimension": 1,
        "points_per_axis": 4096,
        "box_half_length_space": 200.0,
    },
    "potential": {
        "preset": "poschl_teller",
        "nu": 1.3,
        "width_space": 1.0,
    },
    "model": {
        "sigma": 1.0,
        "bound_states": 2,
    },
    "branch": {
        "offsets_energy": [1e-3, 2e-3, 5e-3, 1e-2],
    },
    "evolution": {
        "dt_time": 0.05,
        "t_end_time": 1000.0,
        "sponge_strength_rate": 0.5,
        "sponge_fraction": 0.15,
        "record_every_steps": 10,
    },
    "equipartition": {
        "center_offset_energy": 0.4,
        "window_halfwidth_energy": 0.03,
        "window_points": 5,
        "amplitude_ratios": [0.05, 0.1, 0.2],
        "initial_phase": 0.3,
        "decay_target": 0.05,
        "workers": 1,
    },
    "reduce": {
        "dt_time": 0.05,
        "t_end_time": 2000.0,
        "amplitude": 0.05,
    },
    "output": {
        "directory": "runs/default",
        "seed": 20250810,
    },
}


@dataclass(frozen=True)
class ExperimentConfig:
    tree: dict
    path: Path | None = None
    digest: str = field(default="")

    def section(self, name: str) -> dict:
        return self.tree[name]

    def __getitem__(self, name: str) -> dict:
        return self.tree[name]

    @property
    def outdir(self) -> Path:
        return Path(self.tree["output"]["directory"])

    @property
    def seed(self) -> int:
        return int(self.tree["output"]["seed"])

    def potential_params(self) -> dict:
        sec = dict(self.tree["potential"])
        preset = sec.pop("preset")
        rename = {"width_space": "width", "depth_energy": "depth",
                  "quadrupole_energy": "quadrupole"}
        params = {rename.get(k, k): v for k, v in sec.items()}
        return {"name": preset, **params}


def _merge(base: dict, override: dict, where: str = "") -> dict:
    out = dict(base)
    for key, val in override.items():
        if key not in base:
            raise ConfigError(f"unknown config key {where}{key!r}")
        if isinstance(base[key], dict):
            if not isinstance(val, dict):
                raise ConfigError(f"section {where}{key!r} must be a table")
            out[key] = _merge(base[key], val, where=f"{where}{key}.")
        else:
            out[key] = val
    return out


def config_hash(tree: dict) -> str:
    blob = json.dumps(tree, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


def load_config(path: str | Path | None = None,
                overrides: dict | None = None) -> ExperimentConfig:
    """Defaults, overlaid with the TOML file and then explicit overrides.

    Unknown keys are usage errors: experiment definitions stay diffable
    against the documented schema.
    """
    tree = json.loads(json.dumps(DEFAULTS))  # deep copy
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} not found")
        with path.open("rb") as fh:
            user = tomllib.load(fh)
        tree = _merge(tree, user)
    if overrides:
        tree = _merge(tree, overrides)
    return ExperimentConfig(tree=tree, path=path, digest=config_hash(tree))
