"""Run manifests: enough provenance to reproduce any pipeline output."""

from __future__ import annotations

import json
import sys
import time
from dataclasses import dataclass, field

from . import __version__
from .datagen import load_prompt
from .util import sha256_text

PROMPT_NAMES = ("qa_text", "qa_multimodal", "refine", "options")


def prompt_hashes() -> dict:
    return {name: sha256_text(load_prompt(name)) for name in PROMPT_NAMES}


@dataclass
class RunManifest:
    command: list = field(default_factory=lambda: list(sys.argv))
    seeds: dict = field(default_factory=dict)
    endpoints: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)
    config_hashes: dict = field(default_factory=dict)
    outputs: dict = field(default_factory=dict)  # path -> sha256
    started_at: float = field(default_factory=time.time)
    duration_s: float = 0.0
    artifact_version: str = __version__

    def finish(self) -> "RunManifest":
        self.duration_s = time.time() - self.started_at
        return self

    def to_obj(self) -> dict:
        return {
            "command": self.command,
            "artifact_version": self.artifact_version,
            "seeds": self.seeds,
            "endpoints": self.endpoints,
            "config": self.config,
            "config_hashes": self.config_hashes,
            "prompt_hashes": prompt_hashes(),
            "outputs": self.outputs,
            "started_at": self.started_at,
            "duration_s": self.duration_s,
        }

    def write(self, path: str) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as f:
            f.write(json.dumps(self.to_obj(), ensure_ascii=False, indent=2) + "\n")


def manifest_path_for(output_path: str) -> str:
    return output_path + ".manifest.json"
