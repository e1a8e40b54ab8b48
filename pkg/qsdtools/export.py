"""
qsdtools export utilities
Writes CSV and JSON artifacts with the version, seed and resolved config embedded
"""
from __future__ import annotations

import json
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, Optional, Sequence

import numpy as np
import pandas as pd

from .measures import EmpiricalMeasure


def _jsonable(value: Any):
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.integer,)):
        return int(value)
    if isinstance(value, (np.floating,)):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (set, tuple)):
        return list(value)
    raise TypeError(f"cannot serialize {type(value).__name__}")


class ExportManager:
    """Manages artifact export for one command invocation"""

    def __init__(self, out_dir: Path, meta: Dict[str, Any], stamp: bool = True):
        """
        Args:
            out_dir: directory receiving the artifacts (created on first write)
            meta: version, seed and resolved config of the run
            stamp: add a creation timestamp; off for bit-identical reruns
        """
        self.out_dir = Path(out_dir)
        self.meta = dict(meta)
        if stamp:
            self.meta["created"] = datetime.now().strftime("%Y-%m-%dT%H:%M:%S")
        self.written: list[Path] = []

    def _path(self, name: str) -> Path:
        self.out_dir.mkdir(parents=True, exist_ok=True)
        path = self.out_dir / name
        self.written.append(path)
        return path

    def header_lines(self) -> list[str]:
        return [f"# {k}: {json.dumps(v, sort_keys=True, default=_jsonable)}" for k, v in self.meta.items()]

    def write_csv(self, df: pd.DataFrame, name: str) -> Path:
        """CSV with '#' metadata lines on top; read back with pd.read_csv(path, comment='#')."""
        path = self._path(name)
        with path.open("w", newline="") as fh:
            fh.write("\n".join(self.header_lines()) + "\n")
            df.to_csv(fh, index=False)
        return path

    def write_json(self, payload: Dict[str, Any], name: str) -> Path:
        path = self._path(name)
        body = {"meta": self.meta, **payload}
        path.write_text(json.dumps(body, indent=2, sort_keys=False, default=_jsonable))
        return path

    def export_measure(self, measure: EmpiricalMeasure, name: str) -> Path:
        """Histogram dump (state, weight)."""
        return self.write_csv(measure.to_frame(), name)

    def export_snapshots(self, snapshots: Sequence[tuple[float, EmpiricalMeasure]], name: str) -> Path:
        frames = []
        for t, mu in snapshots:
            f = mu.to_frame()
            f.insert(0, "t", t)
            frames.append(f)
        df = pd.concat(frames, ignore_index=True) if frames else pd.DataFrame(columns=["t", "state", "weight"])
        return self.write_csv(df, name)

    def export_events(self, events: Iterable, name: str) -> Path:
        rows = [(e.time, e.particle, e.kind, e.origin, e.target) for e in events]
        df = pd.DataFrame(rows, columns=["time", "particle", "kind", "from", "to"])
        return self.write_csv(df, name)

    def export_report(self, stem: str, frame: Optional[pd.DataFrame], payload: Dict[str, Any]) -> list[Path]:
        """Paired <stem>.csv (when a table exists) and <stem>.json."""
        paths = []
        if frame is not None:
            paths.append(self.write_csv(frame, f"{stem}.csv"))
        paths.append(self.write_json(payload, f"{stem}.json"))
        return paths


def read_csv_meta(path: Path) -> Dict[str, Any]:
    """Metadata header of a CSV artifact written by ExportManager."""
    meta = {}
    with Path(path).open() as fh:
        for line in fh:
            if not line.startswith("# "):
                break
            key, _, value = line[2:].rstrip("\n").partition(": ")
            meta[key] = json.loads(value)
    return meta
