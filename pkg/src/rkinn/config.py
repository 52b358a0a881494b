"""Run configuration (strict JSON schema) and the run manifest.

A run directory is driven by one JSON config document. Unknown keys are
rejected anywhere in the document so typos fail loudly, and every source of
randomness must carry an explicit seed. The manifest records the effective
config snapshot, per-command timings, and a checksum for every emitted file;
re-running any command from the same manifest reproduces metrics and
checkpoints byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .integrate import ExperimentSpec, hidden_gamma_log_uniform
from .mle import TrainConfig
from .stoich import ReactionNetwork, load_bundled_network, load_network

SCHEMA_VERSION = 1


class ConfigError(ValueError):
    """Invalid or inconsistent run configuration."""


def _require_keys(doc: dict, allowed: set[str], required: set[str], where: str):
    unknown = set(doc) - allowed
    if unknown:
        raise ConfigError(f"unknown keys in {where}: {sorted(unknown)}")
    missing = required - set(doc)
    if missing:
        raise ConfigError(f"missing keys in {where}: {sorted(missing)}")


@dataclass
class RunConfig:
    raw: dict
    network_ref: str
    mode: str
    experiments: list[dict]
    p_true: np.ndarray | None
    surrogate: dict
    train: TrainConfig
    naive_alpha: float
    sweep: dict
    calibration: dict
    trainable_nullspace: bool
    _network: ReactionNetwork = field(default=None, repr=False)

    @property
    def network(self) -> ReactionNetwork:
        if self._network is None:
            if self.network_ref == "builtin:dcs":
                self._network = load_bundled_network()
            else:
                self._network = load_network(self.network_ref)
        return self._network

    def experiment_specs(self) -> list[ExperimentSpec]:
        net = self.network
        specs = []
        for e in self.experiments:
            gamma = e.get("hidden_gamma")
            if isinstance(gamma, dict):
                gamma = hidden_gamma_log_uniform(
                    net.n_latent, seed=gamma["seed"],
                    low=gamma["low"], high=gamma["high"])
            elif gamma is not None:
                gamma = np.asarray(gamma, dtype=float)
            specs.append(ExperimentSpec(
                x0=np.asarray(e["x0"], dtype=float),
                t_min=float(e["t_min"]), t_max=float(e["t_max"]),
                n_points=int(e["n_points"]),
                noise_sigma=float(e["noise_sigma"]),
                seed=int(e["seed"]), hidden_gamma=gamma, name=e["name"]))
        return specs

    def resolved_p_true(self) -> np.ndarray | None:
        if self.p_true is None:
            return None
        return self.p_true


_TOP_KEYS = {"schema_version", "network", "mode", "experiments", "p_true",
             "surrogate", "train", "naive_alpha", "sweep", "calibration",
             "trainable_nullspace"}
_EXP_KEYS = {"name", "x0", "t_min", "t_max", "n_points", "noise_sigma",
             "seed", "hidden_gamma"}
_SURR_KEYS = {"hidden", "activations", "seed"}
_TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
_SWEEP_KEYS = {"alpha_min", "alpha_max", "n_alpha", "epochs_per_alpha"}
_CALIB_KEYS = {"eigen_cutoff", "relative_cutoff"}
_GAMMA_KEYS = {"low", "high", "seed"}


def parse_config(doc: dict, source: str = "config") -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    _require_keys(doc, _TOP_KEYS,
                  {"schema_version", "network", "mode", "experiments"}, source)
    if doc["schema_version"] != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {doc['schema_version']}")
    mode = doc["mode"]
    if mode not in ("rkinn", "naive", "sweep"):
        raise ConfigError(f"mode must be rkinn, naive or sweep, got {mode!r}")

    experiments = doc["experiments"]
    if not isinstance(experiments, list) or not experiments:
        raise ConfigError("experiments must be a non-empty list")
    names = set()
    for i, e in enumerate(experiments):
        _require_keys(e, _EXP_KEYS,
                      {"name", "x0", "t_min", "t_max", "n_points",
                       "noise_sigma", "seed"}, f"experiments[{i}]")
        if e["name"] in names:
            raise ConfigError(f"duplicate experiment name {e['name']!r}")
        names.add(e["name"])
        gamma = e.get("hidden_gamma")
        if isinstance(gamma, dict):
            _require_keys(gamma, _GAMMA_KEYS, _GAMMA_KEYS,
                          f"experiments[{i}].hidden_gamma")

    surrogate = dict(doc.get("surrogate", {}))
    _require_keys(surrogate, _SURR_KEYS, set(), "surrogate")
    surrogate.setdefault("hidden", [20, 20, 20])
    surrogate.setdefault("activations", ["tanh", "swish", "tanh"])
    surrogate.setdefault("seed", 0)

    train_doc = dict(doc.get("train", {}))
    _require_keys(train_doc, _TRAIN_KEYS, set(), "train")
    train = TrainConfig(**train_doc)

    sweep = dict(doc.get("sweep", {}))
    _require_keys(sweep, _SWEEP_KEYS, set(), "sweep")
    sweep.setdefault("alpha_min", 1e-4)
    sweep.setdefault("alpha_max", 1e4)
    sweep.setdefault("n_alpha", 17)
    sweep.setdefault("epochs_per_alpha", 50)

    calibration = dict(doc.get("calibration", {}))
    _require_keys(calibration, _CALIB_KEYS, set(), "calibration")
    calibration.setdefault("eigen_cutoff", 5e-3)
    calibration.setdefault("relative_cutoff", True)

    p_true = doc.get("p_true")
    network_ref = doc["network"]

    cfg = RunConfig(
        raw=doc, network_ref=network_ref, mode=mode, experiments=experiments,
        p_true=None, surrogate=surrogate, train=train,
        naive_alpha=float(doc.get("naive_alpha", 1.0)), sweep=sweep,
        calibration=calibration,
        trainable_nullspace=bool(doc.get("trainable_nullspace", False)))

    if p_true is not None:
        if p_true == "ln_k0":
            if cfg.network.ln_k0 is None:
                raise ConfigError("network file carries no ln_k0 vector")
            cfg.p_true = cfg.network.ln_k0.copy()
        else:
            cfg.p_true = np.asarray(p_true, dtype=float)
            if cfg.p_true.shape != (cfg.network.n_reactions,):
                raise ConfigError("p_true length does not match the network")
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return parse_config(doc, source=str(path))


def apply_overrides(cfg: RunConfig, seed: int | None = None,
                    epochs: int | None = None) -> RunConfig:
    """CLI overrides, rewritten into the config snapshot so the manifest
    stays self-contained: --seed reseeds the surrogate (seed), training
    (seed+1), and experiments (seed+100+i, gamma draws seed+200+i)."""
    doc = json.loads(json.dumps(cfg.raw))
    if seed is not None:
        doc.setdefault("surrogate", {})["seed"] = seed
        doc.setdefault("train", {})["seed"] = seed + 1
        for i, e in enumerate(doc["experiments"]):
            e["seed"] = seed + 100 + i
            if isinstance(e.get("hidden_gamma"), dict):
                e["hidden_gamma"]["seed"] = seed + 200 + i
    if epochs is not None:
        doc.setdefault("train", {})["max_epochs"] = epochs
    return parse_config(doc)


# ---------------------------------------------------------------------------
# manifest


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class Manifest:
    """Accumulating record of a run directory."""

    def __init__(self, run_dir: Path):
        self.run_dir = Path(run_dir)
        self.path = self.run_dir / "manifest.json"
        if self.path.exists():
            self.doc = json.loads(self.path.read_text())
        else:
            self.doc = {
                "schema_version": SCHEMA_VERSION,
                "library_version": __version__,
                "config": None,
                "commands": [],
                "files": {},
            }

    def set_config(self, cfg: RunConfig) -> None:
        self.doc["config"] = cfg.raw

    def record_command(self, name: str, wall_time_s: float,
                       files: list[Path], extra: dict | None = None) -> None:
        rels = []
        for f in files:
            rel = str(Path(f).relative_to(self.run_dir))
            self.doc["files"][rel] = sha256_file(f)
            rels.append(rel)
        entry = {"command": name, "wall_time_s": wall_time_s, "files": rels}
        if extra:
            entry.update(extra)
        self.doc["commands"].append(entry)

    def verify(self) -> list[str]:
        """Re-hash every recorded file; returns the mismatched/missing ones."""
        bad = []
        for rel, digest in self.doc["files"].items():
            f = self.run_dir / rel
            if not f.exists():
                bad.append(f"{rel}: missing")
            elif sha256_file(f) != digest:
                bad.append(f"{rel}: checksum mismatch")
        return bad

    def save(self) -> None:
        self.path.write_text(json.dumps(self.doc, indent=1) + "\n")


class run_lock:
    """Exclusive lock on a run directory (no concurrent writers)."""

    def __init__(self, run_dir: Path):
        self.lock_path = Path(run_dir) / ".lock"

    def __enter__(self):
        try:
            self.lock_path.parent.mkdir(parents=True, exist_ok=True)
            self._fd = open(self.lock_path, "x")
        except FileExistsError:
            raise ConfigError(
                f"run directory is locked ({self.lock_path}); remove the "
                "stale lock if no other process is writing") from None
        self._fd.write(f"pid={time.time()}\n")
        self._fd.flush()
        return self

    def __exit__(self, *exc):
        self._fd.close()
        self.lock_path.unlink(missing_ok=True)
        return False
