"""Flat key=value config files and the run manifest.

Config files are plain text: one ``key = value`` per line, ``#`` starts a
comment, blank lines are ignored. No nesting, so any language can parse
them. Each loader validates against its documented key set and rejects
unknown keys.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

from .errors import ConfigError
from .matching import MatcherConfig
from .synth import SynthConfig
from .training import TrainConfig


def parse_config_text(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key or not value:
            raise ConfigError(f"line {lineno}: empty key or value")
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = value
    return out


def load_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"))


def _typed(raw: dict[str, str], key: str, cast, default):
    if key not in raw:
        return default
    try:
        if cast is bool:
            value = raw[key].lower()
            if value in ("true", "1", "yes"):
                return True
            if value in ("false", "0", "no"):
                return False
            raise ValueError(value)
        return cast(raw[key])
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw[key]!r}") from None


def _reject_unknown(raw: dict[str, str], allowed: set[str], what: str) -> None:
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown {what} keys: {', '.join(unknown)}")


SYNTH_KEYS = {
    "num_instances",
    "templates_per_instance",
    "dim",
    "sigma",
    "distractors",
    "confusable_fraction",
    "seed",
    "grid_size",
    "image_size",
}


def synth_config(raw: dict[str, str]) -> SynthConfig:
    _reject_unknown(raw, SYNTH_KEYS, "synthetic-scene")
    for required in ("num_instances", "templates_per_instance", "dim"):
        if required not in raw:
            raise ConfigError(f"missing required key {required}")
    try:
        return SynthConfig(
            num_instances=_typed(raw, "num_instances", int, None),
            templates_per_instance=_typed(raw, "templates_per_instance", int, None),
            dim=_typed(raw, "dim", int, None),
            sigma=_typed(raw, "sigma", float, 0.1),
            distractors=_typed(raw, "distractors", int, 0),
            confusable_fraction=_typed(raw, "confusable_fraction", float, 0.0),
            seed=_typed(raw, "seed", int, 0),
            grid_size=_typed(raw, "grid_size", int, 4),
            image_size=_typed(raw, "image_size", int, 64),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


TRAIN_KEYS = {
    "learning_rate",
    "batch_size",
    "epochs",
    "temperature",
    "dropout_rate",
    "seed",
    "beta",
    "alpha",
}


def train_config(raw: dict[str, str]) -> tuple[TrainConfig, float, float]:
    """Parse training keys; returns (TrainConfig, beta, alpha)."""
    _reject_unknown(raw, TRAIN_KEYS, "training")
    try:
        cfg = TrainConfig(
            learning_rate=_typed(raw, "learning_rate", float, None),
            batch_size=_typed(raw, "batch_size", int, 1024),
            epochs=_typed(raw, "epochs", int, 40),
            temperature=_typed(raw, "temperature", float, 0.07),
            dropout_rate=_typed(raw, "dropout_rate", float, 0.5),
            seed=_typed(raw, "seed", int, 0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    beta = _typed(raw, "beta", float, 10.0)
    alpha = _typed(raw, "alpha", float, 0.6)
    return cfg, beta, alpha


MATCH_KEYS = {"aggregation", "avg_k", "assignment", "delta", "use_appearance_bonus"}


def matcher_config(raw: dict[str, str]) -> MatcherConfig:
    _reject_unknown(raw, MATCH_KEYS, "matcher")
    try:
        return MatcherConfig(
            aggregation=_typed(raw, "aggregation", str, "max"),
            avg_k=_typed(raw, "avg_k", int, 5),
            assignment=_typed(raw, "assignment", str, "stable"),
            delta=_typed(raw, "delta", float, 0.0),
            use_appearance_bonus=_typed(raw, "use_appearance_bonus", bool, False),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


@dataclass(frozen=True)
class RunManifest:
    """Everything needed to reproduce one matching run.

    Paths are stored relative to the manifest file when saved with
    ``save``; ``load`` resolves and checks them.
    """

    templates: str
    queries: str
    params: str | None
    aggregation: str = "max"
    avg_k: int = 5
    assignment: str = "stable"
    delta: float = 0.0
    use_appearance_bonus: bool = False
    beta: float | None = None
    alpha: float | None = None
    temperature: float | None = None
    seed: int = 0

    def matcher_config(self) -> MatcherConfig:
        return MatcherConfig(
            aggregation=self.aggregation,
            avg_k=self.avg_k,
            assignment=self.assignment,
            delta=self.delta,
            use_appearance_bonus=self.use_appearance_bonus,
        )

    def save(self, path) -> None:
        lines = [
            f"templates = {self.templates}",
            f"queries = {self.queries}",
        ]
        if self.params is not None:
            lines.append(f"params = {self.params}")
        lines += [
            f"aggregation = {self.aggregation}",
            f"avg_k = {self.avg_k}",
            f"assignment = {self.assignment}",
            f"delta = {self.delta}",
            f"use_appearance_bonus = {self.use_appearance_bonus}",
        ]
        for key in ("beta", "alpha", "temperature"):
            value = getattr(self, key)
            if value is not None:
                lines.append(f"{key} = {value}")
        lines.append(f"seed = {self.seed}")
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


MANIFEST_KEYS = MATCH_KEYS | {
    "templates",
    "queries",
    "params",
    "beta",
    "alpha",
    "temperature",
    "seed",
}


def load_manifest(path) -> RunManifest:
    path = Path(path)
    raw = load_config(path)
    _reject_unknown(raw, MANIFEST_KEYS, "manifest")
    for required in ("templates", "queries"):
        if required not in raw:
            raise ConfigError(f"manifest is missing {required}")
    base = path.parent

    def resolve(key):
        if key not in raw:
            return None
        p = base / raw[key]
        if not p.is_file():
            raise ConfigError(f"manifest references missing file: {p}")
        return str(p)

    try:
        manifest = RunManifest(
            templates=resolve("templates"),
            queries=resolve("queries"),
            params=resolve("params"),
            aggregation=_typed(raw, "aggregation", str, "max"),
            avg_k=_typed(raw, "avg_k", int, 5),
            assignment=_typed(raw, "assignment", str, "stable"),
            delta=_typed(raw, "delta", float, 0.0),
            use_appearance_bonus=_typed(raw, "use_appearance_bonus", bool, False),
            beta=_typed(raw, "beta", float, None),
            alpha=_typed(raw, "alpha", float, None),
            temperature=_typed(raw, "temperature", float, None),
            seed=_typed(raw, "seed", int, 0),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    try:
        manifest.matcher_config()  # range-check the matcher values
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    if manifest.beta is not None and manifest.beta <= 0:
        raise ConfigError("beta must be positive")
    if manifest.alpha is not None and not 0.0 <= manifest.alpha <= 1.0:
        raise ConfigError("alpha must lie in [0, 1]")
    return manifest
