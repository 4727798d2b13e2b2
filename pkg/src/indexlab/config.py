"""Experiment configuration and model construction for the command line."""
from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from . import symbols as S

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


@dataclass
class ExperimentConfig:
    model: dict
    mu_end: float = 1.5
    mu_step: float = 0.02
    window: tuple[float, float] | None = None
    n_max: int | None = None
    buffer: int | None = None
    mesh_res: int | None = None
    epsilon: list[float] = field(default_factory=lambda: [1.0])
    seed: int = 0
    out: str = "out"
    gap_radii: list[float] = field(default_factory=lambda: [1.0, 2.0, 4.0])
    gap_samples: int = 1024

    def validate(self) -> None:
        if not isinstance(self.model, dict) or not self.model:
            raise ConfigError("config needs a [model] table")
        sources = [k for k in ("kind", "path") if k in self.model]
        if len(sources) != 1:
            raise ConfigError("model must name exactly one of 'kind' or 'path'")
        if not self.mu_end > 1:
            raise ConfigError("sweep.mu_end must exceed 1")
        if not 0 < self.mu_step <= 0.1:
            raise ConfigError("sweep.mu_step must lie in (0, 0.1]")
        if self.n_max is not None and self.n_max < 2:
            raise ConfigError("n_max must be at least 2")
        if self.mesh_res is not None and self.mesh_res < 3:
            raise ConfigError("mesh resolution must be at least 3")
        if not self.epsilon or any(e <= 0 for e in self.epsilon):
            raise ConfigError("epsilon values must be positive")
        if self.seed < 0 or self.seed >= 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if self.window is not None and not self.window[0] < 0 < self.window[1]:
            raise ConfigError("window must contain 0")

    def digest(self) -> str:
        doc = asdict(self)
        doc.pop("out")
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()


def parse_config_text(text: str, name: str = "<config>") -> dict:
    """TOML first, JSON as fallback."""
    try:
        return tomllib.loads(text)
    except tomllib.TOMLDecodeError as toml_exc:
        try:
            doc = json.loads(text)
        except json.JSONDecodeError:
            raise ConfigError(f"{name}: not valid TOML ({toml_exc}) or JSON") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{name}: top level must be a table")
        return doc


def config_from_dict(doc: dict) -> ExperimentConfig:
    doc = dict(doc)
    sweep = doc.pop("sweep", {}) or {}
    chern = doc.pop("chern", {}) or {}
    gap = doc.pop("gap", {}) or {}
    kw: dict[str, Any] = {"model": doc.pop("model", None)}
    try:
        for key in ("mu_end", "mu_step", "n_max", "buffer"):
            if key in sweep:
                kw[key] = sweep.pop(key)
        if "window" in sweep:
            kw["window"] = tuple(float(v) for v in sweep.pop("window"))
        if "mesh_res" in chern:
            kw["mesh_res"] = int(chern.pop("mesh_res"))
        if "radii" in gap:
            kw["gap_radii"] = [float(r) for r in gap.pop("radii")]
        if "samples" in gap:
            kw["gap_samples"] = int(gap.pop("samples"))
        for key in ("seed", "out"):
            if key in doc:
                kw[key] = doc.pop(key)
        if "epsilon" in doc:
            eps = doc.pop("epsilon")
            kw["epsilon"] = [float(e) for e in (eps if isinstance(eps, list) else [eps])]
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad config value: {exc}") from exc
    leftovers = list(doc) + [f"sweep.{k}" for k in sweep] + [f"chern.{k}" for k in chern] + [f"gap.{k}" for k in gap]
    if leftovers:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(leftovers))}")
    cfg = ExperimentConfig(**kw)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    doc = parse_config_text(text, str(path))
    model = doc.get("model")
    if isinstance(model, dict) and "path" in model:
        p = Path(model["path"])
        if not p.is_absolute():
            model["path"] = str(path.parent / p)
    return config_from_dict(doc)


def builtin_model(name: str) -> dict:
    """Shorthand model names: ``E``, ``E_n_C:<n>:<C>``, ``constant[:<n>]``."""
    parts = name.split(":")
    try:
        if parts[0] == "E" and len(parts) == 1:
            return {"kind": "E"}
        if parts[0] == "E_n_C" and len(parts) == 3:
            return {"kind": "E_n_C", "n": int(parts[1]), "chern": int(parts[2])}
        if parts[0] == "constant" and len(parts) <= 2:
            return {"kind": "constant", "dof": int(parts[1]) if len(parts) == 2 else 1}
    except ValueError:
        pass
    raise ConfigError(f"unknown model shorthand {name!r}")


# ------------------------------------------------------------------ models

@dataclass(frozen=True, eq=False)
class Model:
    symbol: S.Symbol
    rank: int
    gap_constant: float
    label: str

    @property
    def gap_spec(self) -> S.GapSpec:
        return S.GapSpec(self.rank, self.gap_constant)


def _constant_model(spec: dict) -> Model:
    dof = int(spec.get("dof", 1))
    diag = np.asarray(spec.get("diag", [-2.0, 2.0]), dtype=float)
    if np.any(diag == 0):
        raise ConfigError("constant model eigenvalues must be nonzero")
    rank = int(np.sum(diag < 0))
    return Model(S.constant(np.diag(diag), dof), rank, float(np.min(np.abs(diag))) / 2,
                 f"constant{diag.tolist()}")


def build_model(spec: dict, seed: int = 0) -> Model:
    """Turn a model table into a symbol with its lower-band rank and gap constant."""
    if "path" in spec:
        try:
            sym = S.load_symbol(spec["path"])
        except (OSError, ValueError) as exc:
            raise ConfigError(f"cannot load symbol {spec['path']}: {exc}") from exc
        if "rank" not in spec:
            raise ConfigError("a symbol file model needs 'rank'")
        return Model(sym, int(spec["rank"]), float(spec.get("gap_constant", 1.0)), str(spec["path"]))
    kind = spec.get("kind")
    if kind == "E":
        sym, gap = S.normal_form(1, 1)
        return Model(sym, gap.rank, gap.gap_constant, "E")
    if kind == "E_n_C":
        n, c = int(spec.get("n", 1)), int(spec.get("chern", 1))
        if n < 1:
            raise ConfigError("E_n_C needs n >= 1")
        sym, gap = S.normal_form(n, c)
        return Model(sym, gap.rank, gap.gap_constant, f"E^({n},{c})")
    if kind == "constant":
        return _constant_model(spec)
    if kind == "direct_sum":
        parts = [build_model(p, seed) for p in spec.get("parts", [])]
        if len(parts) < 2:
            raise ConfigError("direct_sum needs at least two parts")
        sym = parts[0].symbol
        for p in parts[1:]:
            if p.symbol.dof != sym.dof:
                raise ConfigError("direct_sum parts must share dof")
            sym = S.direct_sum(sym, p.symbol)
        return Model(sym, sum(p.rank for p in parts), min(p.gap_constant for p in parts),
                     " + ".join(p.label for p in parts))
    if kind == "perturbed":
        return perturbed_model(build_model(spec["base"], seed), float(spec.get("magnitude", 0.2)),
                               int(spec.get("seed", seed)), spec.get("gap_constant"),
                               int(spec.get("max_tries", 200)))
    raise ConfigError(f"unknown model kind {kind!r}")


def perturbed_model(base: Model, magnitude: float, seed: int, gap_constant: float | None = None,
                    max_tries: int = 200) -> Model:
    """``base + linear noise``, redrawn until the sampled gap certificate passes."""
    c = base.gap_constant / 2 if gap_constant is None else float(gap_constant)
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        sym = base.symbol + S.linear_noise(base.symbol.dof, base.symbol.dim, magnitude, rng)
        if S.check_gap(sym, S.GapSpec(base.rank, c)).passed:
            return Model(sym, base.rank, c, f"{base.label} ~ noise({magnitude}, seed={seed})")
    raise ConfigError(f"no gap-certified perturbation found in {max_tries} draws")
