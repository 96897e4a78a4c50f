"""Flat ``key = value`` configuration.

Every knob has a dotted key; unknown keys are errors so typos surface
instead of silently falling back to defaults. A ``preset`` key picks the
scenario base, and later keys override it::

    # moderate load, different seed
    preset = moderate
    gen.seed = 7
    attack.burst_size = 6, 20
    pipeline.t_star = 6
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .trafficgen import AttackProfile, BenignProfile, ConfigError, ScenarioConfig, scenario_presets


@dataclass(frozen=True)
class TrainParams:
    t_max: int = 10
    train_t: int = 6
    num_trees: int = 5
    max_depth: int = 5
    seed: int = 0
    test_fraction: float = 0.3


@dataclass(frozen=True)
class EncoderParams:
    code_cap: int = 256
    verify_trials: int = 20_000
    verify_seed: int = 0


@dataclass(frozen=True)
class PipelineParams:
    table_bits: int = 16
    t_star: int = 6
    provisional_enabled: bool = True
    fail_open: bool = True


@dataclass(frozen=True)
class ControllerParams:
    enabled: bool = True
    queue_capacity: int = 65_536


@dataclass(frozen=True)
class SweepParams:
    epsilon: Fraction = Fraction(1, 200)
    t_min: int = 2
    t_max: int = 10


@dataclass(frozen=True)
class BenchParams:
    repetitions: int = 3


@dataclass(frozen=True)
class RaidConfig:
    scenario: ScenarioConfig = field(default_factory=lambda: scenario_presets()["low"])
    train: TrainParams = TrainParams()
    encoder: EncoderParams = EncoderParams()
    pipeline: PipelineParams = PipelineParams()
    controller: ControllerParams = ControllerParams()
    sweep: SweepParams = SweepParams()
    bench: BenchParams = BenchParams()


def _bool(s: str) -> bool:
    low = s.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _range(s: str) -> tuple[int, int]:
    parts = [p.strip() for p in s.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected 'min, max', got {s!r}")
    return int(parts[0]), int(parts[1])


def _opt_int(s: str) -> int | None:
    return None if s.strip().lower() in ("none", "") else int(s)


def _parser_for(tp) -> callable:
    tp = str(tp)
    if "Range" in tp or "tuple[int, int]" in tp:
        return _range
    if tp == "bool":
        return _bool
    if "None" in tp:
        return _opt_int
    if tp == "int":
        return int
    if tp == "float":
        return float
    if tp == "Fraction":
        return Fraction
    raise TypeError(tp)


_SECTIONS = {
    "gen": ("scenario", ScenarioConfig, {"benign", "attack"}),
    "benign": ("scenario.benign", BenignProfile, set()),
    "attack": ("scenario.attack", AttackProfile, set()),
    "train": ("train", TrainParams, set()),
    "encoder": ("encoder", EncoderParams, set()),
    "pipeline": ("pipeline", PipelineParams, set()),
    "controller": ("controller", ControllerParams, set()),
    "sweep": ("sweep", SweepParams, set()),
    "bench": ("bench", BenchParams, set()),
}


def known_keys() -> list[str]:
    keys = ["preset"]
    for sec, (_, cls, skip) in _SECTIONS.items():
        keys += [f"{sec}.{f.name}" for f in dataclasses.fields(cls) if f.name not in skip]
    return keys


def _get(obj, path: str):
    for part in path.split("."):
        obj = getattr(obj, part)
    return obj


def _set(obj, path: str, value):
    head, _, rest = path.partition(".")
    if not rest:
        return dataclasses.replace(obj, **{head: value})
    return dataclasses.replace(obj, **{head: _set(getattr(obj, head), rest, value)})


def parse_config(text: str) -> RaidConfig:
    pairs: list[tuple[int, str, str]] = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, eq, value = line.partition("=")
        if not eq:
            raise ConfigError(f"line {lineno}: expected 'key = value'")
        pairs.append((lineno, key.strip(), value.strip()))

    cfg = RaidConfig()
    presets = scenario_presets()
    for lineno, key, value in pairs:
        if key == "preset":
            if value not in presets:
                raise ConfigError(f"line {lineno}: unknown preset {value!r}")
            cfg = dataclasses.replace(cfg, scenario=presets[value])
    valid = set(known_keys())
    for lineno, key, value in pairs:
        if key == "preset":
            continue
        if key not in valid:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        sec, name = key.split(".", 1)
        path, cls, _ = _SECTIONS[sec]
        ftype = {f.name: f.type for f in dataclasses.fields(cls)}[name]
        try:
            parsed = _parser_for(ftype)(value)
        except (ValueError, ZeroDivisionError) as exc:
            raise ConfigError(f"line {lineno}: {key}: {exc}") from None
        cfg = _set(cfg, f"{path}.{name}", parsed)
    validate(cfg)
    return cfg


def validate(cfg: RaidConfig) -> None:
    cfg.scenario.validate()
    t, p, s = cfg.train, cfg.pipeline, cfg.sweep
    if t.num_trees < 1 or t.num_trees % 2 == 0:
        raise ConfigError("train.num_trees must be a positive odd number")
    if t.max_depth < 1:
        raise ConfigError("train.max_depth must be >= 1")
    if not 2 <= t.train_t <= t.t_max:
        raise ConfigError("train.train_t must lie in [2, train.t_max]")
    if not 0 < t.test_fraction < 1:
        raise ConfigError("train.test_fraction must be in (0, 1)")
    if not 1 <= p.table_bits <= 24:
        raise ConfigError("pipeline.table_bits must be in [1, 24]")
    if p.t_star < 2:
        raise ConfigError("pipeline.t_star must be >= 2")
    if s.t_min < 2 or s.t_max < s.t_min:
        raise ConfigError("sweep range must satisfy 2 <= t_min <= t_max")
    if not 0 <= s.epsilon <= 1:
        raise ConfigError("sweep.epsilon must be in [0, 1]")
    if cfg.encoder.code_cap < 1:
        raise ConfigError("encoder.code_cap must be >= 1")
    if cfg.controller.queue_capacity < 1:
        raise ConfigError("controller.queue_capacity must be >= 1")
    if cfg.bench.repetitions < 1:
        raise ConfigError("bench.repetitions must be >= 1")


def load_config(path: str | Path | None) -> RaidConfig:
    if path is None:
        return RaidConfig()
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_config(text)


def dump_config(cfg: RaidConfig) -> str:
    """Render every key; parse_config(dump_config(c)) == c."""
    out = []
    for key in known_keys()[1:]:
        sec, name = key.split(".", 1)
        path, _, _ = _SECTIONS[sec]
        v = _get(cfg, f"{path}.{name}")
        if isinstance(v, tuple):
            v = f"{v[0]}, {v[1]}"
        elif v is None:
            v = "none"
        out.append(f"{key} = {v}")
    return "\n".join(out) + "\n"
