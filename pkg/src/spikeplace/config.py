"""Declarative run configuration (TOML) with strict schema validation."""

from __future__ import annotations

import dataclasses
import types
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

import tomli
import tomli_w

from .errors import ConfigError

# Default synthetic route: three training traverses spanning speed, lighting,
# camera height and start offset; the held-out query traverse sits inside that
# range but is shifted far enough that raw histogram differencing fails.
DEFAULT_TRAVERSES = (
    {"seed": 0},
    {"seed": 1, "speed": 7.0, "ambient": 0.1, "start_offset_m": 10.0},
    {"seed": 2, "speed": 13.0, "ambient": 0.02, "start_offset_m": -10.0, "vertical_offset": 2},
    {"seed": 3, "speed": 8.5, "ambient": 0.07, "start_offset_m": 7.0, "vertical_offset": -1},
)


@dataclass
class TraverseSection:
    seed: int = 0
    speed: float = 10.0
    speed_wobble: float = 0.0
    direction: str = "forward"
    ambient: float = 0.05
    vertical_offset: int = 0
    noise_rate: typing.Optional[float] = None
    start_offset_m: float = 0.0


@dataclass
class RouteSection:
    n_places: int = 20
    spacing_m: float = 50.0
    px_per_m: float = 1.0
    width: int = 32
    height: int = 32
    scene_seed: int = 0
    cell_px: int = 4
    contrast: float = 0.2
    noise_rate: float = 0.2
    max_vertical_offset: int = 4
    max_start_offset_m: float = 10.0
    pose_rate_hz: float = 50.0
    traverses: list[TraverseSection] = field(
        default_factory=lambda: [TraverseSection(**t) for t in DEFAULT_TRAVERSES])


@dataclass
class DataSection:
    dir: str = ""                  # dataset directory with manifest.json; empty = synthesize in memory
    half_window_us: int = 500_000
    spacing_m: float = 50.0        # place spacing when reading recorded traverses
    route: RouteSection = field(default_factory=RouteSection)


@dataclass
class SplitSection:
    train: list[int] = field(default_factory=lambda: [0, 1, 2])
    reference: int = 0
    queries: list[int] = field(default_factory=lambda: [3])


@dataclass
class ModelSection:
    preset: str = "default"        # "default": fields below; "small": only height/width used; "paper": none
    height: int = 32
    width: int = 32
    stem_channels: int = 32
    stem_kernel: int = 7
    stage_widths: list[int] = field(default_factory=lambda: [32, 64, 128])
    stage_blocks: list[int] = field(default_factory=lambda: [2, 2, 2])
    stage_strides: list[int] = field(default_factory=lambda: [1, 2, 2])
    g: str = "ADD"
    reduce_channels: int = 64
    mixer_depth: int = 2
    channel_proj: int = 256
    row_proj: int = 16
    v_th: float = 1.0
    alpha: float = 4.0


@dataclass
class AugmentSection:
    dilation: bool = False
    flip: bool = False
    drop: bool = False
    t_min_us: int = 500_000
    t_max_us: int = 1_500_000
    flip_prob: float = 0.5
    drop_mode: str = ""            # "", "random", "time-window", "spatial-region"; empty picks one per call
    drop_ratio: float = 0.2


@dataclass
class OptimSection:
    base_lr: float = 3e-2
    weight_decay: float = 1e-4
    betas: list[float] = field(default_factory=lambda: [0.9, 0.999])
    warmup_fraction: float = 0.05
    clip_norm: float = 0.0


@dataclass
class TrainSection:
    epochs: int = 100
    batches_per_epoch: int = 4
    n_pairs: int = 10
    tau: float = 0.07
    batch_size: int = 64


@dataclass
class EvalSection:
    theta_m: float = 30.0
    n_values: list[int] = field(default_factory=lambda: [1, 5, 10, 20])
    pca_components: int = 16


@dataclass
class EnergySection:
    ann_gamma: float = 0.0
    paper_scale: bool = True
    max_inputs: int = 64


@dataclass
class AblateSection:
    seeds: list[int] = field(default_factory=lambda: [0])
    labels: list[str] = field(default_factory=lambda: ["None", "D", "X", "E", "X+E", "D+E", "D+X", "D+X+E"])


@dataclass
class ReportSection:
    figures: bool = True


@dataclass
class RunConfig:
    seed: int = 0
    data: DataSection = field(default_factory=DataSection)
    split: SplitSection = field(default_factory=SplitSection)
    model: ModelSection = field(default_factory=ModelSection)
    augment: AugmentSection = field(default_factory=AugmentSection)
    optim: OptimSection = field(default_factory=OptimSection)
    train: TrainSection = field(default_factory=TrainSection)
    eval: EvalSection = field(default_factory=EvalSection)
    energy: EnergySection = field(default_factory=EnergySection)
    ablate: AblateSection = field(default_factory=AblateSection)
    report: ReportSection = field(default_factory=ReportSection)

    def to_dict(self) -> dict:
        return _strip_none(asdict(self))

    def to_toml(self) -> str:
        return tomli_w.dumps(self.to_dict())

    def write(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_toml())
        return path


def _strip_none(d):
    if isinstance(d, dict):
        return {k: _strip_none(v) for k, v in d.items() if v is not None}
    if isinstance(d, list):
        return [_strip_none(v) for v in d]
    return d


# --------------------------------------------------------------------------
# validation


def _type_name(tp) -> str:
    return getattr(tp, "__name__", str(tp))


def _coerce(value, tp, where: str):
    origin = typing.get_origin(tp)
    if origin in (typing.Union, types.UnionType):
        args = [a for a in typing.get_args(tp) if a is not type(None)]
        if value is None:
            return None
        return _coerce(value, args[0], where)
    if origin is list:
        (item,) = typing.get_args(tp)
        if not isinstance(value, list):
            raise ConfigError(f"{where}: expected a list, got {type(value).__name__}")
        return [_coerce(v, item, f"{where}[{i}]") for i, v in enumerate(value)]
    if dataclasses.is_dataclass(tp):
        if not isinstance(value, dict):
            raise ConfigError(f"{where}: expected a table, got {type(value).__name__}")
        return _build(tp, value, where)
    if tp is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{where}: expected true/false, got {value!r}")
        return value
    if tp is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{where}: expected an integer, got {value!r}")
        return value
    if tp is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{where}: expected a number, got {value!r}")
        return float(value)
    if tp is str:
        if not isinstance(value, str):
            raise ConfigError(f"{where}: expected a string, got {value!r}")
        return value
    raise ConfigError(f"{where}: unsupported type {_type_name(tp)}")


def _build(cls, table: dict, where: str):
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(table) - names)
    if unknown:
        prefix = f"{where}." if where else ""
        raise ConfigError(
            f"unknown key(s) {', '.join(prefix + k for k in unknown)}; allowed: {', '.join(sorted(names))}"
        )
    kwargs = {k: _coerce(v, hints[k], f"{where}.{k}" if where else k) for k, v in table.items()}
    return cls(**kwargs)


def _check(cfg: RunConfig) -> None:
    def need(cond, msg):
        if not cond:
            raise ConfigError(msg)

    need(cfg.data.half_window_us > 0, "data.half_window_us must be positive")
    need(cfg.model.preset in ("default", "small", "paper"), "model.preset must be 'default', 'small' or 'paper'")
    need(cfg.model.g in ("ADD", "AND", "IAND"), "model.g must be ADD, AND or IAND")
    need(len(cfg.model.stage_widths) == len(cfg.model.stage_blocks) == len(cfg.model.stage_strides),
         "model.stage_widths, stage_blocks and stage_strides must have equal length")
    need(0 < cfg.augment.t_min_us <= cfg.augment.t_max_us, "augment needs 0 < t_min_us <= t_max_us")
    need(cfg.augment.drop_mode in ("", "random", "time-window", "spatial-region"),
         "augment.drop_mode must be '', 'random', 'time-window' or 'spatial-region'")
    need(0.0 <= cfg.augment.drop_ratio <= 1.0, "augment.drop_ratio must lie in [0, 1]")
    need(0.0 <= cfg.augment.flip_prob <= 1.0, "augment.flip_prob must lie in [0, 1]")
    need(cfg.optim.base_lr > 0, "optim.base_lr must be positive")
    need(len(cfg.optim.betas) == 2 and all(0 <= b < 1 for b in cfg.optim.betas),
         "optim.betas must be two numbers in [0, 1)")
    need(0.0 <= cfg.optim.warmup_fraction < 1.0, "optim.warmup_fraction must lie in [0, 1)")
    need(cfg.train.epochs >= 1, "train.epochs must be at least 1")
    need(cfg.train.batches_per_epoch >= 1, "train.batches_per_epoch must be at least 1")
    need(cfg.train.n_pairs >= 2, "train.n_pairs must be at least 2")
    need(cfg.train.tau > 0, "train.tau must be positive")
    need(cfg.eval.theta_m > 0, "eval.theta_m must be positive")
    need(len(cfg.eval.n_values) > 0 and all(n >= 1 for n in cfg.eval.n_values),
         "eval.n_values must be a non-empty list of positive integers")
    need(0.0 <= cfg.energy.ann_gamma <= 1.0, "energy.ann_gamma must lie in [0, 1]")
    need(len(cfg.split.train) >= 2, "split.train needs at least two traverses")
    need(len(cfg.split.queries) >= 1, "split.queries needs at least one traverse")
    need(len(cfg.ablate.seeds) >= 1, "ablate.seeds must not be empty")
    for lab in cfg.ablate.labels:
        need(set(lab.split("+")) <= {"D", "X", "E"} or lab == "None", f"bad ablation label {lab!r}")


def from_dict(d: dict) -> RunConfig:
    cfg = _build(RunConfig, d, "")
    _check(cfg)
    return cfg


def load_config(path) -> RunConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        raw = tomli.loads(path.read_text())
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: invalid TOML ({exc})") from exc
    return from_dict(raw)
