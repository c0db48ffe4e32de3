"""Channel configuration files (YAML).

Grammar::

    n: 2                      # optional, checked against Vhat
    noise:
      F: [[[0.5, 0.0], [0.0, 0.2]]]   # list of n x n matrices (row lists); may be omitted
      G: []                           # same for the MA side
      Vhat: [[1.0, 0.0], [0.0, 2.0]]  # full matrix, or
      # Vhat: {U: [[...], ...], eigenvalues: [...]}
    budget: 3.0
    options:                  # all optional
      sign: auto              # auto | + | -
      steps: 1000000
      seed: 0
      nodes: 4096
      restarts: 0
      controller: innovation  # innovation | literal

A single-channel shorthand ``noise: {f: [0.5], g: [], var: 1.0}`` is also
accepted. Optional ``p`` and ``q`` keys in the noise block are checked
against the coefficient lists.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import yaml

from .noise import ArmaNoiseModel, require_valid

__all__ = ["ConfigError", "ChannelConfig", "parse_config", "load_config", "dump_config"]

SIGNS = {"auto": "auto", "+": "+", "-": "-", "plus": "+", "minus": "-", "+1": "+", "-1": "-",
         "1": "+", "global": "global", "per_channel": "per_channel"}
CONTROLLERS = ("innovation", "literal")


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ChannelConfig:
    noise: ArmaNoiseModel
    budget: float
    sign: str = "auto"
    steps: int = 1_000_000
    seed: int = 0
    nodes: int = 4096
    restarts: int = 0
    controller: str = "innovation"

    @property
    def n(self) -> int:
        return self.noise.n

    def to_dict(self) -> dict:
        nz = self.noise
        return {
            "n": nz.n,
            "noise": {
                "p": nz.p,
                "q": nz.q,
                "F": [m.tolist() for m in nz.F],
                "G": [m.tolist() for m in nz.G],
                "Vhat": nz.Vhat.tolist(),
            },
            "budget": float(self.budget),
            "options": {
                "sign": self.sign,
                "steps": int(self.steps),
                "seed": int(self.seed),
                "nodes": int(self.nodes),
                "restarts": int(self.restarts),
                "controller": self.controller,
            },
        }

    def with_overrides(self, **kw) -> "ChannelConfig":
        kw = {k: v for k, v in kw.items() if v is not None}
        out = replace(self, **kw)
        _check_options(out)
        return out


def _matrix(obj, name):
    try:
        m = np.array(obj, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{name} is not a numeric matrix") from exc
    if m.ndim == 0:
        m = m.reshape(1, 1)
    if m.ndim != 2:
        raise ConfigError(f"{name} must be a matrix given as a list of rows")
    return m


def _vhat(obj):
    if isinstance(obj, dict):
        if set(obj) != {"U", "eigenvalues"}:
            raise ConfigError("Vhat block needs exactly the keys U and eigenvalues")
        U = _matrix(obj["U"], "Vhat.U")
        lam = np.atleast_1d(np.array(obj["eigenvalues"], dtype=float))
        if U.shape != (lam.size, lam.size):
            raise ConfigError("Vhat.U and Vhat.eigenvalues sizes differ")
        if np.max(np.abs(U.T @ U - np.eye(lam.size))) > 1e-9:
            raise ConfigError("Vhat.U is not orthogonal")
        V = (U * lam) @ U.T
        return 0.5 * (V + V.T)
    return _matrix(obj, "Vhat")


def _noise(block) -> ArmaNoiseModel:
    if not isinstance(block, dict):
        raise ConfigError("noise block must be a mapping")
    if "var" in block:
        extra = set(block) - {"f", "g", "var"}
        if extra:
            raise ConfigError(f"unknown keys in scalar noise block: {sorted(extra)}")
        f = [float(c) for c in block.get("f") or []]
        g = [float(c) for c in block.get("g") or []]
        return ArmaNoiseModel.scalar(f, g, float(block["var"]))
    extra = set(block) - {"F", "G", "Vhat", "p", "q"}
    if extra:
        raise ConfigError(f"unknown keys in noise block: {sorted(extra)}")
    if "Vhat" not in block:
        raise ConfigError("noise block needs Vhat")
    V = _vhat(block["Vhat"])
    F = [_matrix(m, f"F[{i}]") for i, m in enumerate(block.get("F") or [])]
    G = [_matrix(m, f"G[{j}]") for j, m in enumerate(block.get("G") or [])]
    for key, lst in (("p", F), ("q", G)):
        if key in block and int(block[key]) != len(lst):
            raise ConfigError(f"{key}={block[key]} but {len(lst)} coefficient matrices given")
    try:
        return ArmaNoiseModel(F=tuple(F), G=tuple(G), Vhat=V)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _check_options(cfg: ChannelConfig):
    if not (isinstance(cfg.budget, (int, float)) and np.isfinite(cfg.budget) and cfg.budget > 0):
        raise ConfigError("budget must be positive")
    if cfg.sign not in SIGNS.values():
        raise ConfigError(f"sign must be auto, + or -, got {cfg.sign!r}")
    if cfg.controller not in CONTROLLERS:
        raise ConfigError(f"controller must be one of {CONTROLLERS}")
    if cfg.steps <= 0 or cfg.nodes < 2 or cfg.restarts < 0 or cfg.seed < 0:
        raise ConfigError("steps and nodes must be positive, seed and restarts nonnegative")


def parse_config(text: str) -> ChannelConfig:
    """Parse and validate a YAML channel description.

    Raises
    ------
    ConfigError
        Naming the violated requirement, including noise-model validity.
    """
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed YAML: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("config must be a mapping")
    extra = set(doc) - {"n", "noise", "budget", "options"}
    if extra:
        raise ConfigError(f"unknown top-level keys: {sorted(extra)}")
    if "noise" not in doc or "budget" not in doc:
        raise ConfigError("config needs noise and budget")
    noise = _noise(doc["noise"])
    if "n" in doc and int(doc["n"]) != noise.n:
        raise ConfigError(f"n={doc['n']} but Vhat is {noise.n}x{noise.n}")
    try:
        require_valid(noise)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    try:
        budget = float(doc["budget"])
    except (TypeError, ValueError) as exc:
        raise ConfigError("budget must be a number") from exc
    opts = doc.get("options") or {}
    extra = set(opts) - {"sign", "steps", "seed", "nodes", "restarts", "controller"}
    if extra:
        raise ConfigError(f"unknown options: {sorted(extra)}")
    sign = SIGNS.get(str(opts.get("sign", "auto")))
    if sign is None:
        raise ConfigError(f"sign must be auto, + or -, got {opts.get('sign')!r}")
    cfg = ChannelConfig(noise=noise, budget=budget, sign=sign,
                        steps=int(opts.get("steps", 1_000_000)), seed=int(opts.get("seed", 0)),
                        nodes=int(opts.get("nodes", 4096)), restarts=int(opts.get("restarts", 0)),
                        controller=str(opts.get("controller", "innovation")))
    _check_options(cfg)
    return cfg


def load_config(path) -> ChannelConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())


def dump_config(cfg: ChannelConfig) -> str:
    """YAML text that :func:`parse_config` maps back to an equal config."""
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False, default_flow_style=None)
