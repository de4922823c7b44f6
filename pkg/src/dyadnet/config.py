"""Run configuration: one YAML file drives every CLI command.

CLI flags are overrides of config keys; anything not overridden keeps its
file value. The effective configuration is digested (sha256 of canonical
JSON) and stamped into every fit result for provenance.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import yaml

from .errors import ConfigError
from .estimator import OptimizerConfig
from .features import FeatureSpec
from .synth import CountrySpec, SynthConfig


@dataclass
class RunConfig:
    vertices: str = None
    edges: str = None
    delimiter: str = ","
    missing_numeric: str = "reject"
    seed: int = None
    workers: int = 1
    out_dir: str = "out"
    view: str = "directed"
    features: dict = field(default_factory=dict)
    distance_bins_km: tuple = None
    optimizer: dict = field(default_factory=dict)
    countries: tuple = ()
    margins: bool = False
    top_k: int = 10
    histogram_bins: int = 200
    tetrad: dict = field(default_factory=dict)
    synth: dict = None

    def feature_spec(self) -> FeatureSpec:
        kwargs = dict(self.features)
        kwargs["view"] = self.view
        if self.distance_bins_km is not None and "distance_bins_km" not in kwargs:
            kwargs["distance_bins_km"] = list(self.distance_bins_km)
        try:
            return FeatureSpec.from_dict(kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad features section: {exc}") from None

    def optimizer_config(self) -> OptimizerConfig:
        kwargs = dict(self.optimizer)
        kwargs.setdefault("seed", self.require_seed())
        try:
            return OptimizerConfig(**kwargs)
        except TypeError as exc:
            raise ConfigError(f"bad optimizer section: {exc}") from None

    def require_seed(self):
        if self.seed is None:
            raise ConfigError("this command is stochastic: set `seed` in the config or pass --seed")
        return int(self.seed)

    def require_inputs(self):
        for key, path in (("vertices", self.vertices), ("edges", self.edges)):
            if path is None:
                raise ConfigError(f"config key `{key}` is required for this command")
            if not os.path.exists(path):
                raise ConfigError(f"config key `{key}` points to a missing path: {path}")

    def synth_config(self) -> SynthConfig:
        if not self.synth:
            raise ConfigError("config key `synth` is required for simulate")
        raw = dict(self.synth)
        known = {"n", "countries", "beta", "features", "view", "alpha_sd_out",
                 "alpha_sd_in", "beta_by_src_country"}
        unknown = set(raw) - known
        if unknown:
            raise ConfigError(f"unknown synth keys: {sorted(unknown)}")
        if "n" not in raw or "countries" not in raw:
            raise ConfigError("synth section needs `n` and `countries`")
        try:
            countries = tuple(CountrySpec(**c) for c in raw["countries"])
        except TypeError as exc:
            raise ConfigError(f"bad synth countries: {exc}") from None
        spec_kwargs = dict(raw.get("features", {}))
        spec_kwargs.setdefault("popularity", "none")
        spec_kwargs.setdefault("activity", "none")
        spec_kwargs["view"] = raw.get("view", self.view)
        if self.distance_bins_km is not None and "distance_bins_km" not in spec_kwargs:
            spec_kwargs["distance_bins_km"] = list(self.distance_bins_km)
        try:
            return SynthConfig(
                n=raw["n"],
                countries=countries,
                beta=dict(raw.get("beta", {})),
                spec=FeatureSpec.from_dict(spec_kwargs),
                alpha_sd_out=raw.get("alpha_sd_out", 0.0),
                alpha_sd_in=raw.get("alpha_sd_in", 0.0),
                seed=self.require_seed(),
                beta_by_src_country=raw.get("beta_by_src_country"),
            )
        except TypeError as exc:
            raise ConfigError(f"bad synth section: {exc}") from None

    def to_dict(self):
        return {
            "vertices": self.vertices,
            "edges": self.edges,
            "delimiter": self.delimiter,
            "missing_numeric": self.missing_numeric,
            "seed": self.seed,
            "workers": self.workers,
            "out_dir": self.out_dir,
            "view": self.view,
            "features": dict(self.features),
            "distance_bins_km": list(self.distance_bins_km) if self.distance_bins_km else None,
            "optimizer": dict(self.optimizer),
            "countries": list(self.countries),
            "margins": self.margins,
            "top_k": self.top_k,
            "histogram_bins": self.histogram_bins,
            "tetrad": dict(self.tetrad),
            "synth": self.synth,
        }


_KNOWN_KEYS = {
    "vertices", "edges", "delimiter", "missing_numeric", "seed", "workers", "out_dir",
    "view", "features", "distance_bins_km", "optimizer", "countries", "margins",
    "top_k", "histogram_bins", "tetrad", "synth",
}


def load_run_config(path, overrides=None) -> RunConfig:
    """Parse the YAML config, apply CLI overrides, resolve relative paths."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    with open(path, encoding="utf-8") as fh:
        raw = yaml.safe_load(fh) or {}
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    for key, value in (overrides or {}).items():
        if value is not None:
            raw[key] = value
    cfg = RunConfig(**{k: raw[k] for k in raw})
    if cfg.countries:
        cfg.countries = tuple(cfg.countries)
    base = os.path.dirname(os.path.abspath(path))
    for key in ("vertices", "edges", "out_dir"):
        value = getattr(cfg, key)
        if value is not None and not os.path.isabs(value):
            setattr(cfg, key, os.path.join(base, value))
    if cfg.view not in ("directed", "mutual"):
        raise ConfigError(f"bad view {cfg.view!r}")
    if cfg.workers < 1:
        raise ConfigError("workers must be >= 1")
    return cfg


def config_digest(cfg: RunConfig) -> str:
    """sha256 of the canonical JSON encoding of the effective config."""
    blob = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()
