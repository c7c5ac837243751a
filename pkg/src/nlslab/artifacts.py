"""Run outputs: hashed manifests, RFC-4180 CSV and JSON writers."""

from __future__ import annotations

import csv
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


def _sha256(path: Path) -> str:
    digest = hashlib.sha256()
    with path.open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()


def write_csv(path: Path, header: list[str], rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)      # default CRLF line terminator (RFC 4180)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(x) for x in row])
    return path


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return np.format_float_scientific(x, precision=12)
    if isinstance(x, (complex, np.complexfloating)):
        return f"{x.real:.12e}{x.imag:+.12e}j"
    return x


def write_json(path: Path, payload: dict) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2, sort_keys=True, default=_json_default))
    return path


def _json_default(x):
    if isinstance(x, (np.floating, np.integer, np.bool_)):
        return x.item()
    if isinstance(x, np.ndarray):
        return x.tolist()
    raise TypeError(f"not JSON serializable: {type(x)}")


@dataclass
class RunArtifacts:
    """Manifest of every file one command produced, with content hashes."""

    root: Path
    config_hash: str
    command: str
    code_version: str = ""
    files: list[dict] = field(default_factory=list)

    def __post_init__(self):
        self.root = Path(self.root)
        self.root.mkdir(parents=True, exist_ok=True)
        if not self.code_version:
            try:
                from importlib.metadata import version
                self.code_version = version("nlslab")
            except Exception:
                self.code_version = "unknown"

    def path(self, name: str) -> Path:
        return self.root / name

    def register(self, path: Path) -> Path:
        path = Path(path)
        self.files.append({
            "path": str(path.relative_to(self.root)),
            "sha256": _sha256(path),
        })
        return path

    def add_csv(self, name: str, header: list[str], rows) -> Path:
        return self.register(write_csv(self.path(name), header, rows))

    def add_json(self, name: str, payload: dict) -> Path:
        return self.register(write_json(self.path(name), payload))

    def finalize(self) -> Path:
        manifest = {
            "command": self.command,
            "config_hash": self.config_hash,
            "code_version": self.code_version,
            "created_unix": time.time(),
            "files": sorted(self.files, key=lambda f: f["path"]),
        }
        out = self.root / "manifest.json"
        out.write_text(json.dumps(manifest, indent=2, sort_keys=True))
        return out
