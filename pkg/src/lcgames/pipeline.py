"""Pipeline plumbing: configuration, deterministic seeding, and the manifest.

All stage randomness derives from one master seed through named substreams,
so reruns with the same configuration are byte-identical. Every stage
records its input and output file hashes in ``manifest.json``, forming a
verifiable chain between consecutive stages.
"""

from __future__ import annotations

import configparser
import hashlib
import json
import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import DataError

PACKAGE_VERSION = "0.1.0"
MANIFEST_NAME = "manifest.json"


def stage_seed_sequence(master_seed: int, stage: str) -> np.random.SeedSequence:
    """Named substream of the master seed, stable across runs."""
    return np.random.SeedSequence([master_seed, zlib.crc32(stage.encode("utf-8"))])


def stage_seed(master_seed: int, stage: str) -> int:
    return int(stage_seed_sequence(master_seed, stage).generate_state(1)[0])


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_json(path: str | Path, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path: str | Path) -> dict:
    path = Path(path)
    if not path.exists():
        raise DataError(f"missing file {path}")
    with open(path) as fh:
        return json.load(fh)


@dataclass
class Manifest:
    """Per-stage provenance, keyed by stage name and rewritten atomically."""

    path: Path
    entries: dict[str, dict] = field(default_factory=dict)

    @classmethod
    def load(cls, out_dir: str | Path) -> "Manifest":
        path = Path(out_dir) / MANIFEST_NAME
        entries: dict[str, dict] = {}
        if path.exists():
            entries = json.loads(path.read_text()).get("stages", {})
        return cls(path=path, entries=entries)

    def record(self, stage: str, inputs: list[str | Path],
               outputs: list[str | Path], seed: int) -> None:
        self.entries[stage] = {
            "stage": stage,
            "version": PACKAGE_VERSION,
            "seed": seed,
            "inputs": {Path(p).name: sha256_file(p) for p in inputs},
            "outputs": {Path(p).name: sha256_file(p) for p in outputs},
        }
        write_json(self.path, {"stages": self.entries})

    def verify_chain(self) -> list[str]:
        """Check recorded input hashes against producing stages' outputs.

        Returns a list of mismatch descriptions (empty when consistent).
        """
        produced: dict[str, str] = {}
        for entry in self.entries.values():
            produced.update(entry["outputs"])
        problems = []
        for stage, entry in self.entries.items():
            for name, digest in entry["inputs"].items():
                if name in produced and produced[name] != digest:
                    problems.append(
                        f"stage {stage}: input {name} hash does not match its producer")
        return problems


# ---------------------------------------------------------------------------
# Configuration file (INI sections with key=value pairs)

def _parse_list(text: str, cast) -> list:
    return [cast(part) for part in text.replace(",", " ").split()]


@dataclass
class PipelineConfig:
    """Parsed configuration with per-stage sections and common settings."""

    seed: int = 0
    out: Path = Path("out")
    trajectories: Path | None = None
    lane_map: Path | None = None
    events: Path | None = None
    cluster_restarts: int = 10
    l1_weight: float = 0.1
    fit_max_iter: int = 5000
    fp_tol: float = 1e-10
    classify_eps: float = 1e-9
    neighbor_sizes: list[int] = field(default_factory=lambda: [2])
    noise_ks: list[float] = field(default_factory=lambda: [2.0])
    mprs: list[float] = field(default_factory=lambda: [0.5])
    contact_freqs: list[float] = field(default_factory=lambda: [0.0])
    steps: int = 200
    reps: int = 20
    grid_rows: int = 20
    grid_cols: int = 20
    init_coop_av: float = 0.51
    init_coop_hdv: float = 0.42
    synth_n: int = 10000
    synth_beta_norm: float = 1.6
    synth_lambda: float = 10.0


def load_config(path: str | Path | None, overrides: dict | None = None) -> PipelineConfig:
    cfg = PipelineConfig()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise DataError(f"config file {path} does not exist")
        parser = configparser.ConfigParser()
        parser.read(path)

        def get(section, key, cast, current):
            if parser.has_option(section, key):
                raw = parser.get(section, key)
                try:
                    return cast(raw)
                except ValueError:
                    raise DataError(f"{path}: bad value for [{section}] {key}: {raw!r}")
            return current

        cfg.seed = get("pipeline", "seed", int, cfg.seed)
        cfg.out = Path(get("pipeline", "out", str, str(cfg.out)))
        traj = get("extract", "trajectories", str, None)
        cfg.trajectories = Path(traj) if traj else cfg.trajectories
        lmap = get("extract", "map", str, None)
        cfg.lane_map = Path(lmap) if lmap else cfg.lane_map
        events = get("extract", "events", str, None)
        cfg.events = Path(events) if events else cfg.events
        cfg.cluster_restarts = get("cluster", "restarts", int, cfg.cluster_restarts)
        cfg.l1_weight = get("fit", "l1_weight", float, cfg.l1_weight)
        cfg.fit_max_iter = get("fit", "max_iter", int, cfg.fit_max_iter)
        cfg.fp_tol = get("fit", "fp_tol", float, cfg.fp_tol)
        cfg.classify_eps = get("games", "eps", float, cfg.classify_eps)
        cfg.neighbor_sizes = get("simulate", "neighbor_sizes",
                                 lambda s: _parse_list(s, int), cfg.neighbor_sizes)
        cfg.noise_ks = get("simulate", "noise_ks",
                           lambda s: _parse_list(s, float), cfg.noise_ks)
        cfg.mprs = get("simulate", "mprs",
                       lambda s: _parse_list(s, float), cfg.mprs)
        cfg.contact_freqs = get("simulate", "contact_freqs",
                                lambda s: _parse_list(s, float), cfg.contact_freqs)
        cfg.steps = get("simulate", "steps", int, cfg.steps)
        cfg.reps = get("simulate", "reps", int, cfg.reps)
        cfg.grid_rows = get("simulate", "rows", int, cfg.grid_rows)
        cfg.grid_cols = get("simulate", "cols", int, cfg.grid_cols)
        cfg.init_coop_av = get("simulate", "init_coop_av", float, cfg.init_coop_av)
        cfg.init_coop_hdv = get("simulate", "init_coop_hdv", float, cfg.init_coop_hdv)
        cfg.synth_n = get("synth", "n", int, cfg.synth_n)
        cfg.synth_beta_norm = get("synth", "beta_norm", float, cfg.synth_beta_norm)
        cfg.synth_lambda = get("synth", "lambda", float, cfg.synth_lambda)

    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(cfg, key, value)
    return cfg


def require_artifact(path: Path, producer_command: str) -> Path:
    if not path.exists():
        raise DataError(
            f"missing artifact {path}; run `lcgames {producer_command}` first")
    return path
