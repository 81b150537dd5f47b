"""Run manifest: what was read, what was written, and how long each stage took."""

from __future__ import annotations

import hashlib
import json
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from . import FORMAT_VERSION, __version__


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json_atomic(path, doc) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(json.dumps(doc, indent=1, sort_keys=False) + "\n", encoding="utf-8")
    os.replace(tmp, path)


@dataclass
class RunManifest:
    command: str
    config: dict
    inputs: dict = field(default_factory=dict)
    stages: dict = field(default_factory=dict)
    outputs: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def add_input(self, path) -> None:
        self.inputs[str(path)] = sha256_file(path)

    def add_output(self, path) -> None:
        p = str(path)
        if p not in self.outputs:
            self.outputs.append(p)

    @contextmanager
    def stage(self, name: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.stages[name] = self.stages.get(name, 0.0) + time.perf_counter() - t0

    def to_json(self) -> dict:
        return {
            "tool": "surfdraw",
            "version": __version__,
            "format_version": FORMAT_VERSION,
            "command": self.command,
            "status": "ok" if not self.failures else "failed",
            "config": self.config,
            "inputs": self.inputs,
            "stage_seconds": self.stages,
            "outputs": [{"path": p, "sha256": sha256_file(p)} for p in self.outputs if Path(p).exists()],
            "failures": self.failures,
        }

    def write(self, path) -> None:
        write_json_atomic(path, self.to_json())


def verify_manifest(path) -> bool:
    """Recompute every recorded hash; True when all inputs and outputs still match."""
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    for p, digest in doc.get("inputs", {}).items():
        if not Path(p).exists() or sha256_file(p) != digest:
            return False
    for item in doc.get("outputs", []):
        if not Path(item["path"]).exists() or sha256_file(item["path"]) != item["sha256"]:
            return False
    return True
