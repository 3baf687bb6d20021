"""Run configuration: one flat dataclass, loadable from a flat TOML file."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Any, Mapping

import tomli

from .domain import LabelScheme, RoomType
from .errors import ConfigError
from .raster import RasterFrame


@dataclass(frozen=True)
class RunConfig:
    seed: int = 0
    dataset: str = "dataset.json"
    out_dir: str = "."
    resolution: int = 32
    frame_origin: float = -0.2
    frame_extent: float = 6.4
    latent_dim: int = 32
    slots: int = 8
    lambda_adv1: float = 0.01
    lambda_adv2: float = 0.01
    lambda_adv3: float = 0.01
    metric: str = "l2"
    learning_rate: float = 1e-3
    epochs: int = 200
    batch_size: int = 8
    detach_stages: bool = False
    condition_discriminators: bool = True
    instance_noise: float = 0.0
    disc_spectral_bound: float = 1.0
    checkpoint_every: int = 0
    split_seed: int = 0
    train_fraction: float = 0.9
    latent_salt: int = 0
    g1_hidden: tuple[int, ...] = (128, 128)
    d1_hidden: tuple[int, ...] = (64,)
    g3_hidden: tuple[int, ...] = (128, 128)
    d3_hidden: tuple[int, ...] = (64,)
    graph_hidden: int = 128
    graph_rounds: int = 3
    governing_side: str = "shorter"
    bedroom_thresholds: tuple[float, ...] = (2.7, 3.4)
    bathroom_thresholds: tuple[float, ...] = (1.8, 2.1, 2.4, 2.7, 3.0)
    study_thresholds: tuple[float, ...] = (2.4, 2.8, 3.2, 3.6)

    def __post_init__(self):
        for name in ("g1_hidden", "d1_hidden", "g3_hidden", "d3_hidden", "bedroom_thresholds", "bathroom_thresholds", "study_thresholds"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        checks = [
            (self.resolution >= 4, "resolution must be >= 4"),
            (self.frame_extent > 0, "frame_extent must be positive"),
            (self.latent_dim >= 1, "latent_dim must be >= 1"),
            (self.slots >= 1, "slots must be >= 1"),
            (all(v >= 0 for v in (self.lambda_adv1, self.lambda_adv2, self.lambda_adv3)), "lambda_adv* must be >= 0"),
            (self.metric in ("l1", "l2"), "metric must be 'l1' or 'l2'"),
            (self.learning_rate > 0, "learning_rate must be positive"),
            (self.instance_noise >= 0, "instance_noise must be >= 0"),
            (self.disc_spectral_bound >= 0, "disc_spectral_bound must be >= 0"),
            (self.epochs >= 0, "epochs must be >= 0"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.checkpoint_every >= 0, "checkpoint_every must be >= 0"),
            (0 < self.train_fraction < 1, "train_fraction must lie in (0, 1)"),
            (self.graph_hidden >= 1 and self.graph_rounds >= 1, "graph_hidden and graph_rounds must be >= 1"),
            (all(h >= 1 for h in self.g1_hidden + self.d1_hidden + self.g3_hidden + self.d3_hidden), "hidden widths must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.scheme
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def scheme(self) -> LabelScheme:
        return LabelScheme(
            {
                RoomType.BEDROOM: self.bedroom_thresholds,
                RoomType.BATHROOM: self.bathroom_thresholds,
                RoomType.STUDY: self.study_thresholds,
            },
            self.governing_side,
        )

    @property
    def frame(self) -> RasterFrame:
        return RasterFrame((self.frame_origin, self.frame_origin), self.frame_extent, self.resolution)

    def replace(self, **changes) -> RunConfig:
        return from_mapping({**dataclasses.asdict(self), **changes})


def from_mapping(values: Mapping[str, Any]) -> RunConfig:
    known = {f.name: f for f in fields(RunConfig)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    coerced = {}
    for key, value in values.items():
        default = known[key].default
        try:
            if isinstance(default, bool):
                if not isinstance(value, bool):
                    raise TypeError
                coerced[key] = value
            elif isinstance(default, int):
                if isinstance(value, bool) or int(value) != value:
                    raise TypeError
                coerced[key] = int(value)
            elif isinstance(default, float):
                coerced[key] = float(value)
            elif isinstance(default, tuple):
                coerced[key] = tuple(type(default[0])(v) for v in value)
            else:
                coerced[key] = str(value)
        except (TypeError, ValueError):
            raise ConfigError(f"config key {key!r} has invalid value {value!r}") from None
    return RunConfig(**coerced)


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> RunConfig:
    """Read a flat TOML file (if given) and apply ``overrides`` on top."""
    values: dict[str, Any] = {}
    if path is not None:
        try:
            values = tomli.loads(Path(path).read_text(encoding="utf-8"))
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        nested = [k for k, v in values.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"{path}: config must be flat; found tables {nested}")
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return from_mapping(values)


def dump_config(config: RunConfig) -> str:
    lines = []
    for f in fields(RunConfig):
        v = getattr(config, f.name)
        if isinstance(v, bool):
            text = "true" if v else "false"
        elif isinstance(v, str):
            text = '"' + v.replace("\\", "\\\\").replace('"', '\\"') + '"'
        elif isinstance(v, tuple):
            text = "[" + ", ".join(repr(x) for x in v) + "]"
        else:
            text = repr(v)
        lines.append(f"{f.name} = {text}")
    return "\n".join(lines) + "\n"
