"""Run manifests: reproducibility sidecars written next to every artifact.

A manifest records the command, its configuration snapshot, SHA-256
digests of the input files and of the artifact itself, the seed and the
toolkit version; wall-clock timings are kept in the sidecar only so the
artifacts themselves stay byte-identical across reruns.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

from . import __version__


def file_digest(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def build_manifest(command: str, config: dict, inputs: list[str | Path],
                   seed: int | None, artifact: str | Path,
                   seconds: float) -> dict:
    return {
        "command": command,
        "version": __version__,
        "seed": seed,
        "config": config,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "artifact": {str(artifact): file_digest(artifact)},
        "seconds": seconds,
    }


def write_sidecar(manifest: dict, artifact: str | Path) -> Path:
    path = Path(str(artifact) + ".manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path
