"""
Functions about run configurations.

A run configuration is a JSON object with the sections ``model``, ``train``,
``eval``, ``synth`` and ``paths`` plus a top-level ``seed``.
The ``train`` and ``synth`` sections inherit that seed unless they set their
own.
Omitted keys take their documented defaults; unknown keys are errors.
Individual values can be overridden with dot paths, e.g.
``--model.d 64 --train.lam 0.7``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import pathlib as pl
from dataclasses import asdict, dataclass, field, fields

from .errors import ConfigError
from .evaluation import EvalConfig
from .model import ModelConfig
from .synthetic import SyntheticConfig
from .training import TrainConfig

logger = logging.getLogger(__name__)


@dataclass
class PathsConfig:
    """
    Locations of a run.

    - ``data``: dataset directory, written by ``synth`` and read by the other
      commands
    - ``out``: root under which run directories are created
    - ``train_manifest``, ``test_manifest``, ``lexicon``: file names inside
      ``data``
    """

    data: str = "data/synthetic"
    out: str = "out"
    train_manifest: str = "train.jsonl"
    test_manifest: str = "test.jsonl"
    lexicon: str = "lexicon.txt"

    @property
    def data_dir(self) -> pl.Path:
        return pl.Path(self.data)

    @property
    def train_manifest_path(self) -> pl.Path:
        return self.data_dir / self.train_manifest

    @property
    def test_manifest_path(self) -> pl.Path:
        return self.data_dir / self.test_manifest

    @property
    def lexicon_path(self) -> pl.Path:
        return self.data_dir / self.lexicon


def _default_model() -> ModelConfig:
    # Feature width of the default synthetic data
    return ModelConfig(d_in=SyntheticConfig().d_in)


SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "eval": EvalConfig,
    "synth": SyntheticConfig,
    "paths": PathsConfig,
}

#: Sections whose seed defaults to the top-level one
SEEDED_SECTIONS = ["train", "synth"]


@dataclass
class RunConfig:
    """
    Every setting of a run.
    The model section defaults to the published architecture with the input
    width of the default synthetic features.
    """

    model: ModelConfig = field(default_factory=_default_model)
    train: TrainConfig = field(default_factory=TrainConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    synth: SyntheticConfig = field(default_factory=SyntheticConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)
    seed: int = 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        unknown = set(d) - set(SECTIONS) - {"seed"}
        if unknown:
            raise ConfigError(f"Unknown config sections {sorted(unknown)}")
        seed = d.get("seed", 0)
        if not isinstance(seed, int) or isinstance(seed, bool) or seed < 0:
            raise ConfigError(f"seed must be a non-negative integer; got {seed!r}")
        kwargs = {}
        for name, kind in SECTIONS.items():
            section = d.get(name, {})
            if not isinstance(section, dict):
                raise ConfigError(f"Config section {name!r} must be an object")
            if name in SEEDED_SECTIONS and "seed" not in section:
                section = {**section, "seed": seed}
            allowed = {f.name for f in fields(kind)}
            bad = set(section) - allowed
            if bad:
                raise ConfigError(f"Unknown keys in section {name!r}: {sorted(bad)}")
            try:
                kwargs[name] = kind(**section)
            except TypeError as e:
                raise ConfigError(f"Invalid section {name!r}: {e}") from None
        return cls(seed=seed, **kwargs)


def parse_value(text: str):
    """
    Parse an override value as JSON, falling back to the raw string, so
    ``64`` is an integer, ``true`` a boolean and ``relu`` a string.
    """
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def parse_overrides(args: list[str]) -> dict[str, object]:
    """
    Turn ``['--model.d', '64', '--train.lam=0.7']`` into
    ``{'model.d': 64, 'train.lam': 0.7}``.
    Raise a ConfigError on anything else.
    """
    result = {}
    i = 0
    while i < len(args):
        arg = args[i]
        if not arg.startswith("--") or "." not in arg.split("=", 1)[0]:
            raise ConfigError(f"Unrecognized argument {arg!r}; overrides look like --a.b value")
        if "=" in arg:
            key, value = arg[2:].split("=", 1)
            i += 1
        else:
            if i + 1 >= len(args):
                raise ConfigError(f"Override {arg} lacks a value")
            key, value = arg[2:], args[i + 1]
            i += 2
        result[key] = parse_value(value)
    return result


def _is_section_seed(key: str) -> bool:
    return key in {f"{name}.seed" for name in SEEDED_SECTIONS}


def apply_overrides(d: dict, overrides: dict[str, object]) -> dict:
    """
    Set each dot-path key of ``overrides`` in the nested dictionary ``d``
    (in place) and return ``d``.
    Raise a ConfigError if a path does not name an existing key.
    """
    for key, value in overrides.items():
        *parents, leaf = key.split(".")
        node = d
        for p in parents:
            if not isinstance(node.get(p), dict):
                raise ConfigError(f"Unknown config key {key!r}")
            node = node[p]
        if leaf not in node and not _is_section_seed(key):
            raise ConfigError(f"Unknown config key {key!r}")
        node[leaf] = value
    return d


def _merge(base: dict, update: dict, prefix: str = "") -> None:
    for key, value in update.items():
        if key not in base and not _is_section_seed(prefix + key):
            raise ConfigError(f"Unknown config key {prefix + key!r}")
        if isinstance(base.get(key), dict) and isinstance(value, dict):
            _merge(base[key], value, f"{prefix}{key}.")
        else:
            base[key] = value


def load_run_config(
    path: str | pl.Path | None = None, overrides: dict[str, object] | None = None
) -> RunConfig:
    """
    Return the RunConfig made of the defaults, updated by the JSON file at the
    given path (if any), updated by the dot-path overrides (if any).
    The train and synth seeds follow the top-level seed unless set explicitly.
    Raise a ConfigError on an unknown key or an invalid value.
    """
    d = RunConfig().to_dict()
    for name in SEEDED_SECTIONS:
        del d[name]["seed"]
    if path is not None:
        try:
            update = json.loads(pl.Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as e:
            raise ConfigError(f"{path}: invalid JSON ({e.msg}, line {e.lineno})") from None
        if not isinstance(update, dict):
            raise ConfigError(f"{path}: expected a JSON object")
        _merge(d, update)
    if overrides:
        apply_overrides(d, overrides)
    return RunConfig.from_dict(d)


def config_hash(cfg: RunConfig) -> str:
    """
    Return the first 12 hex digits of the SHA-256 of the canonical JSON of
    the given config.
    """
    text = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()[:12]


def echo_config(cfg: RunConfig, run_dir: str | pl.Path) -> pl.Path:
    """
    Write the fully resolved config to ``config.json`` in the given directory
    and return its path.
    """
    path = pl.Path(run_dir) / "config.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return path
