"""Experiment configuration: one JSON file per run.

Complex matrices are nested lists whose scalars are ``[re, im]`` pairs (a
bare number is read as real).  Any table may instead be given as
``{"file": "relative/path.json"}``, resolved against the config's folder.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigError, ValidationError

MODES = ("classical", "imprecise", "quantum", "halting", "verify", "cost")


@dataclass(frozen=True)
class ExperimentConfig:
    mode: str
    seed: int
    raw: dict = field(repr=False)
    base_dir: Path = Path(".")
    output_dir: Path | None = None

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def require(self, key):
        if key not in self.raw:
            raise ConfigError(key, f"required for mode '{self.mode}'")
        return self.raw[key]

    @property
    def config_hash(self) -> str:
        return config_hash(self.raw)


def config_hash(raw: dict) -> str:
    """SHA-256 of the canonical JSON form, ignoring where outputs go."""
    body = {k: v for k, v in raw.items() if k != "output_dir"}
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _resolve_files(node, base: Path, path: str):
    if isinstance(node, dict):
        if set(node) == {"file"}:
            target = base / node["file"]
            if not target.is_file():
                raise ConfigError(path, f"referenced file {target} does not exist")
            try:
                return _resolve_files(json.loads(target.read_text()), target.parent, path)
            except json.JSONDecodeError as exc:
                raise ConfigError(path, f"invalid JSON in {target}: {exc}") from None
        return {k: _resolve_files(v, base, f"{path}.{k}" if path else k) for k, v in node.items()}
    if isinstance(node, list):
        return [_resolve_files(v, base, f"{path}[{i}]") for i, v in enumerate(node)]
    return node


def load_config(path, mode: str | None = None, seed: int | None = None,
                output_dir=None) -> ExperimentConfig:
    """Read, resolve file references and validate a config file."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError("<config>", f"file {path} does not exist")
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError("<config>", f"invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError("<config>", "top level must be an object")
    return config_from_dict(raw, path.parent, mode, seed, output_dir)


def config_from_dict(raw: dict, base_dir=".", mode: str | None = None, seed: int | None = None,
                     output_dir=None) -> ExperimentConfig:
    base_dir = Path(base_dir)
    raw = _resolve_files(dict(raw), base_dir, "")
    if mode is not None:
        raw["mode"] = mode
    if seed is not None:
        raw["seed"] = seed
    m = raw.get("mode")
    if m not in MODES:
        raise ConfigError("mode", f"must be one of {', '.join(MODES)}")
    if "seed" not in raw:
        raise ConfigError("seed", "an explicit seed is required")
    s = raw["seed"]
    if not isinstance(s, int) or isinstance(s, bool) or not 0 <= s < 2 ** 64:
        raise ConfigError("seed", "must be an integer in [0, 2^64)")
    out = output_dir if output_dir is not None else raw.get("output_dir")
    out_path = None
    if out is not None:
        out_path = Path(out)
        if not out_path.is_absolute():
            out_path = (base_dir / out_path) if output_dir is None else out_path
    cfg = ExperimentConfig(m, s, raw, base_dir, out_path)
    _validate_mode(cfg)
    return cfg


def _positive_int(cfg: ExperimentConfig, key: str, default=None, minimum: int = 1) -> int:
    v = cfg.get(key, default)
    if v is None:
        raise ConfigError(key, f"required for mode '{cfg.mode}'")
    if not isinstance(v, int) or isinstance(v, bool) or v < minimum:
        raise ConfigError(key, f"must be an integer >= {minimum}")
    return v


def _validate_mode(cfg: ExperimentConfig) -> None:
    if cfg.mode in ("classical", "imprecise", "quantum"):
        _positive_int(cfg, "steps")
        _positive_int(cfg, "burn_in", 0, minimum=0)
        _positive_int(cfg, "chains", 1)
        model = cfg.require("model")
        if not (cfg.mode == "quantum" and isinstance(model, dict) and "hamiltonian" in model):
            model_energies(cfg)
        model_beta(cfg)
    if cfg.mode in ("imprecise", "quantum"):
        _positive_int(cfg, "n_max")
        sigma(cfg)
    if cfg.mode == "halting":
        h = cfg.require("halting")
        if not isinstance(h, dict) or "delta" not in h:
            raise ConfigError("halting.delta", "required")
    if cfg.mode == "cost":
        c = cfg.require("cost")
        for key in ("beta", "sigma", "eps_tilde", "omega_tilde"):
            if key not in c:
                raise ConfigError(f"cost.{key}", "required")


# ----------------------------------------------------------------------------
# field readers
# ----------------------------------------------------------------------------

def model_energies(cfg: ExperimentConfig) -> np.ndarray:
    model = cfg.require("model")
    if not isinstance(model, dict):
        raise ConfigError("model", "must be an object")
    if "energies" not in model:
        raise ConfigError("model.energies", "required")
    try:
        e = np.asarray(model["energies"], dtype=float)
    except (TypeError, ValueError):
        raise ConfigError("model.energies", "must be a list of numbers") from None
    if e.ndim != 1 or e.size == 0 or not np.all(np.isfinite(e)):
        raise ConfigError("model.energies", "must be a non-empty list of finite numbers")
    return e


def model_beta(cfg: ExperimentConfig) -> float:
    model = cfg.require("model")
    b = model.get("beta") if isinstance(model, dict) else None
    if not isinstance(b, (int, float)) or isinstance(b, bool) or b < 0:
        raise ConfigError("model.beta", "must be a number >= 0")
    return float(b)


def sigma(cfg: ExperimentConfig) -> float:
    s = cfg.get("sigma")
    if not isinstance(s, (int, float)) or isinstance(s, bool) or s < 0:
        raise ConfigError("sigma", "must be a number >= 0")
    return float(s)


def real_matrix(value, path: str, size: int | None = None) -> np.ndarray:
    if value == "uniform":
        if size is None:
            raise ConfigError(path, "'uniform' needs a known size")
        return np.full((size, size), 1.0 / size)
    try:
        m = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ConfigError(path, "must be a numeric matrix") from None
    if m.ndim != 2:
        raise ConfigError(path, "must be a matrix")
    return m


def complex_array(value, path: str, ndim: int) -> np.ndarray:
    """Read an ``ndim``-dimensional complex array; scalars are numbers or ``[re, im]``."""
    def conv(node, depth):
        if depth == ndim:
            if isinstance(node, (int, float)) and not isinstance(node, bool):
                return complex(node)
            if isinstance(node, list) and len(node) == 2 and all(
                    isinstance(x, (int, float)) and not isinstance(x, bool) for x in node):
                return complex(node[0], node[1])
            raise ConfigError(path, "complex entries must be numbers or [re, im] pairs")
        if not isinstance(node, list):
            raise ConfigError(path, f"expected a {ndim}-dimensional nested list")
        return [conv(x, depth + 1) for x in node]
    try:
        return np.asarray(conv(value, 0), dtype=complex)
    except ValueError:
        raise ConfigError(path, "ragged complex array") from None


def driver_matrix(cfg: ExperimentConfig, size: int) -> np.ndarray:
    return real_matrix(cfg.get("driver", "uniform"), "driver", size)


def wrap(path: str, fn, *args):
    """Call ``fn`` and re-raise validation failures as config errors at ``path``."""
    try:
        return fn(*args)
    except ValidationError as exc:
        raise ConfigError(path, str(exc)) from None
