"""Run manifest and CSV output with a provenance column on every row."""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
import time
from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .. import __version__
from ..sequence import load_direction_table


def _fmt(value) -> str:
    if value is None:
        return "-"
    if isinstance(value, (bool, np.bool_)):
        return "true" if value else "false"
    if isinstance(value, np.integer):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        value = float(value)
        if math.isnan(value):
            return "nan"
        return repr(value)
    return str(value)


def file_sha256(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


@dataclass
class RunManifest:
    config_hash: str
    table_hash: str = field(default_factory=lambda: load_direction_table().sha256)
    version: str = __version__
    outputs: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    @property
    def run_id(self) -> str:
        """Short hash of everything that determines the numbers."""
        blob = f"{self.config_hash}:{self.table_hash}:{self.version}"
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    @contextmanager
    def timed(self, stage: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[stage] = self.timings.get(stage, 0.0) + time.perf_counter() - t0

    def write_csv(self, directory: str, name: str, header, rows) -> str:
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, name)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["run_id", *header])
            for row in rows:
                writer.writerow([self.run_id, *(_fmt(v) for v in row)])
        self.outputs[name] = file_sha256(path)
        return path

    def as_dict(self) -> dict:
        return {"run_id": self.run_id, "config_hash": self.config_hash, "direction_table_sha256": self.table_hash,
                "version": self.version, "outputs": dict(sorted(self.outputs.items())),
                "timings_s": {k: round(v, 3) for k, v in sorted(self.timings.items())}}

    def write(self, directory: str) -> str:
        os.makedirs(directory, exist_ok=True)
        path = os.path.join(directory, "manifest.json")
        with open(path, "w") as fh:
            json.dump(self.as_dict(), fh, indent=2)
            fh.write("\n")
        return path
