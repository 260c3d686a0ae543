"""Run configuration: nested dataclasses loaded from YAML with located errors."""
from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import yaml

from .augment import AugConfig
from .model.config import ModelConfig
from .projection import ProjectionConfig


class ConfigError(ValueError):
    pass


@dataclass
class GroupOptim:
    lr: float
    weight_decay: float


@dataclass
class OptimConfig:
    backbone: GroupOptim = field(default_factory=lambda: GroupOptim(4e-4, 1e-3))
    head: GroupOptim = field(default_factory=lambda: GroupOptim(1e-3, 1e-4))
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8


@dataclass
class ScheduleConfig:
    epochs: int = 60
    warmup_fraction: float = 5 / 60
    steps_per_epoch: int = 0  # 0 -> ceil(dataset size / batch size)

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not 0.0 <= self.warmup_fraction <= 1.0:
            raise ValueError("warmup_fraction must lie in [0, 1]")


@dataclass
class LossConfig:
    lambdas: tuple = (1.0, 1.0, 1.0, 1.0)
    aux_weight: float = 0.4
    class_weights: str = "frequency"  # or "uniform"

    def __post_init__(self):
        self.lambdas = tuple(float(v) for v in self.lambdas)
        if len(self.lambdas) != 4:
            raise ValueError("lambdas needs four entries (wce, dice, boundary, iou)")
        if self.class_weights not in ("frequency", "uniform"):
            raise ValueError("class_weights must be 'frequency' or 'uniform'")


@dataclass
class DataConfig:
    root: str = ""            # empty -> $RANGESAM_DATA_ROOT
    split: str = "train"
    eval_split: str = "val"
    synthetic: bool = False
    synthetic_size: int = 8
    batch_size: int = 2
    prefetch: int = 2
    augment: bool = True
    # per-channel normalization for (range, x, y, z, remission); validity is left as is
    input_mean: tuple = (12.12, 10.88, 0.23, -1.04, 0.21)
    input_std: tuple = (12.32, 11.47, 6.91, 0.86, 0.16)


@dataclass
class RunConfig:
    projection: ProjectionConfig = field(default_factory=ProjectionConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    optimizer: OptimConfig = field(default_factory=OptimConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    aug: AugConfig = field(default_factory=AugConfig)
    data: DataConfig = field(default_factory=DataConfig)
    seed: int = 0
    out_dir: str = "runs/default"
    log_every: int = 1

    @classmethod
    def toy(cls, synthetic: bool = True) -> "RunConfig":
        """Desk-scale preset: toy model, 16x256 raster, fixed 8-scene synthetic set.

        300 steps (150 epochs of 2 batches). Learning rates are 5x/4x the
        full-scale ones and class weights uniform: with 6 of 19 classes present,
        frequency weights spend most of their mass on absent classes.
        """
        return cls(
            projection=ProjectionConfig(height=16, width=256, row_anchor="fov_down"),
            model=ModelConfig.toy(),
            optimizer=OptimConfig(backbone=GroupOptim(2e-3, 1e-3), head=GroupOptim(4e-3, 1e-4)),
            schedule=ScheduleConfig(epochs=150, warmup_fraction=0.05),
            loss=LossConfig(class_weights="uniform"),
            data=DataConfig(synthetic=synthetic, synthetic_size=8, batch_size=4, augment=False),
            out_dir="runs/toy",
        )

    def to_dict(self) -> dict:
        return _plain(dataclasses.asdict(self))


def _plain(v):
    if isinstance(v, dict):
        return {k: _plain(x) for k, x in v.items()}
    if isinstance(v, (list, tuple)):
        return [_plain(x) for x in v]
    return v


# ---------------------------------------------------------------------------
# YAML loading
# ---------------------------------------------------------------------------
def _line_index(node, path=(), out=None):
    """Map dot-paths to 1-based source lines by walking the YAML node tree."""
    out = {} if out is None else out
    out.setdefault(".".join(path), node.start_mark.line + 1)
    if isinstance(node, yaml.MappingNode):
        for k, v in node.value:
            key = str(k.value)
            out[".".join(path + (key,))] = k.start_mark.line + 1
            _line_index(v, path + (key,), out)
    elif isinstance(node, yaml.SequenceNode):
        for i, v in enumerate(node.value):
            _line_index(v, path + (str(i),), out)
    return out


def _where(lines, source, path):
    p = path
    while p and p not in lines:
        p = p.rpartition(".")[0]
    line = lines.get(p)
    return f"{source}:{line}" if line else source


def _coerce(value, default, path):
    """Convert a YAML value to the type implied by the field's default."""
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"field '{path}': expected true/false, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"field '{path}': expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"field '{path}': expected a number, got {value!r}")
        if not math.isfinite(value):
            raise ConfigError(f"field '{path}': must be finite")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"field '{path}': expected a string, got {value!r}")
        return value
    if isinstance(default, tuple):
        if not isinstance(value, (list, tuple)):
            raise ConfigError(f"field '{path}': expected a list, got {value!r}")
        return _tuplify(value)
    return value


def _tuplify(v):
    return tuple(_tuplify(x) for x in v) if isinstance(v, (list, tuple)) else v


def _build(cls, data, base, path, lines, source):
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ConfigError(f"{_where(lines, source, path)}: section '{path or '<root>'}' must be a mapping")
    names = {f.name for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        sub = f"{path}.{key}" if path else str(key)
        if key not in names:
            raise ConfigError(f"{_where(lines, source, sub)}: unknown field '{sub}'")
        default = getattr(base, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), value, default, sub, lines, source)
        else:
            try:
                kwargs[key] = _coerce(value, default, sub)
            except ConfigError as e:
                raise ConfigError(f"{_where(lines, source, sub)}: {e}") from None
    try:
        return dataclasses.replace(base, **kwargs)
    except (ValueError, TypeError) as e:
        raise ConfigError(f"{_where(lines, source, path)}: invalid '{path or '<root>'}': {e}") from None


def parse_run_config(text: str, source: str = "<config>", base: RunConfig | None = None) -> RunConfig:
    try:
        node = yaml.compose(text, Loader=yaml.SafeLoader)
        data = yaml.safe_load(text)
    except yaml.YAMLError as e:
        mark = getattr(e, "problem_mark", None)
        where = f"{source}:{mark.line + 1}" if mark else source
        raise ConfigError(f"{where}: YAML syntax error: {getattr(e, 'problem', e)}") from None
    lines = _line_index(node) if node is not None else {}
    return _build(RunConfig, data, base or RunConfig(), "", lines, source)


def load_run_config(path, base: RunConfig | None = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as f:
            text = f.read()
    except OSError as e:
        raise ConfigError(f"{path}: cannot read config: {e.strerror}") from None
    return parse_run_config(text, str(path), base)


def apply_overrides(cfg: RunConfig, items) -> RunConfig:
    """Apply ``a.b.c=value`` strings; values are parsed as YAML scalars/lists.

    All overrides are merged first and validated together, so interdependent
    fields (e.g. stem and stage widths) can change in one call.
    """
    merged = {}
    for item in items or ():
        key, sep, raw = item.partition("=")
        if not sep or not key:
            raise ConfigError(f"override {item!r}: expected dot.path=value")
        try:
            value = yaml.safe_load(raw)
        except yaml.YAMLError:
            raise ConfigError(f"override {item!r}: cannot parse value") from None
        node = merged
        *parents, leaf = key.split(".")
        for part in parents:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {item!r}: '{part}' already set to a value")
        node[leaf] = value
    if not merged:
        return cfg
    return _build(RunConfig, merged, cfg, "", {}, "--set")


def dump_run_config(cfg: RunConfig) -> str:
    return yaml.safe_dump(cfg.to_dict(), sort_keys=False)
