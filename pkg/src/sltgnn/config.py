"""Flat ``section.key = value`` run configuration.

Example::

    # lines starting with # are comments
    dataset.path = data/cora
    model.hidden = 256
    plan.sparsity = 0.5
    plan.coats = 3
    plan.threshold = adaptive-linear
    train.epochs = 400
    sweep.grid = 0.05, 0.5, 0.9

Defaults are the shallow-GNN settings: 2 layers of width 256, 400 epochs,
Adam with learning rate 0.01 and no weight decay. Leaving ``dataset.path``
empty selects the synthetic SBM graph described by the ``synthetic.*`` keys.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

from .data import SyntheticSpec, generate_synthetic, load_dataset
from .errors import ConfigError
from .graph import Graph
from .models import Architecture, FoldSpec, ModelSpec
from .supermask import DEFAULT_ALPHA, ThresholdMode
from .trainer import TrainConfig

__all__ = ["Method", "RunConfig", "parse_fold", "parse_method"]


@dataclass(frozen=True)
class DatasetSection:
    path: str = ""


@dataclass(frozen=True)
class ModelSection:
    architecture: str = "gcn"
    hidden: int = 256
    depth: int = 2
    fold: str = "none"
    masks: str = "shared"
    batch_norm: bool = False
    init: str = "sc"
    bn_sharing: str = "iteration"
    seed: int = 0


@dataclass(frozen=True)
class PlanSection:
    sparsity: float = 0.5
    coats: int = 3
    threshold: str = "adaptive-linear"
    alpha: float = DEFAULT_ALPHA
    scope: str = "auto"
    normalization: str = "rank"


@dataclass(frozen=True)
class SweepSection:
    grid: tuple[float, ...] = (0.05, 0.1, 0.3, 0.5, 0.7, 0.9)
    methods: tuple[str, ...] = ("s-sup", "m-sup:3")
    repeats: int = 5
    workers: int = 1


@dataclass(frozen=True)
class OutputSection:
    dir: str = "runs"


_SECTIONS = {
    "dataset": DatasetSection,
    "synthetic": SyntheticSpec,
    "model": ModelSection,
    "plan": PlanSection,
    "train": TrainConfig,
    "sweep": SweepSection,
    "output": OutputSection,
}


def _coerce(raw: str, default, key: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            if raw.lower() in ("1", "true", "yes", "on"):
                return True
            if raw.lower() in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw, 0)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            items = [t.strip() for t in raw.split(",") if t.strip()]
            if default and isinstance(default[0], float):
                return tuple(float(t) for t in items)
            return tuple(items)
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {type(default).__name__}") from None
    return raw


@dataclass(frozen=True)
class Method:
    """A sweep method: S-Sup is a single coat, M-Sup carries N coats."""

    name: str
    coats: int

    @property
    def label(self) -> str:
        return "S-Sup" if self.name == "s-sup" else f"M-Sup(N={self.coats})"


def parse_method(text: str) -> Method:
    name, _, n = text.strip().lower().partition(":")
    if name == "s-sup" and not n:
        return Method("s-sup", 1)
    if name == "m-sup":
        try:
            coats = int(n or 3)
        except ValueError:
            raise ConfigError(f"bad coat count in method {text!r}") from None
        if coats < 1:
            raise ConfigError("M-Sup needs at least one coat")
        return Method("m-sup", coats)
    raise ConfigError(f"unknown method {text!r} (use s-sup or m-sup:N)")


def parse_fold(text: str, depth: int, masks: str = "shared") -> FoldSpec | None:
    """``none``, ``ssf`` or ``msf:M`` to a fold over ``depth`` blocks."""
    if masks not in ("shared", "unshared"):
        raise ConfigError(f"masks must be shared or unshared, got {masks!r}")
    text = text.strip().lower()
    unshared = masks == "unshared"
    if text == "none":
        return None
    if text == "ssf":
        return FoldSpec(depth, 1, unshared)
    if text.startswith("msf:"):
        try:
            return FoldSpec(depth, int(text[4:]), unshared)
        except ValueError:
            raise ConfigError(f"bad stage count in {text!r}") from None
    raise ConfigError(f"unknown fold {text!r} (use none, ssf or msf:M)")


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetSection = field(default_factory=DatasetSection)
    synthetic: SyntheticSpec = field(default_factory=SyntheticSpec)
    model: ModelSection = field(default_factory=ModelSection)
    plan: PlanSection = field(default_factory=PlanSection)
    train: TrainConfig = field(default_factory=TrainConfig)
    sweep: SweepSection = field(default_factory=SweepSection)
    output: OutputSection = field(default_factory=OutputSection)

    def __post_init__(self):
        ThresholdMode(self.plan.threshold)
        Architecture(self.model.architecture)
        if not self.sweep.grid or not self.sweep.methods:
            raise ConfigError("sweep grid and method list must be non-empty")
        if any(not 0.0 <= k < 1.0 for k in self.sweep.grid):
            raise ConfigError("sweep sparsities must lie in [0, 1)")
        for m in self.sweep.methods:
            parse_method(m)
        if self.sweep.repeats < 1 or self.sweep.workers < 1:
            raise ConfigError("repeats and workers must be >= 1")
        if self.plan.scope not in ("auto", "layer", "global"):
            raise ConfigError(f"plan.scope must be auto, layer or global, got {self.plan.scope!r}")
        if self.dataset.path and not Path(self.dataset.path).is_dir():
            raise ConfigError(f"dataset directory {self.dataset.path} does not exist")

    def with_values(self, values: dict[str, str]) -> RunConfig:
        """Copy with ``section.key`` string values applied."""
        sections = {name: getattr(self, name) for name in _SECTIONS}
        for key, raw in values.items():
            section, _, name = key.partition(".")
            if section not in _SECTIONS or not name:
                raise ConfigError(f"unknown key {key!r}")
            current = sections[section]
            known = {f.name for f in dataclasses.fields(current)}
            if name not in known:
                raise ConfigError(f"unknown key {key!r}")
            value = _coerce(raw, getattr(current, name), key)
            try:
                sections[section] = dataclasses.replace(current, **{name: value})
            except ValueError as exc:
                raise ConfigError(f"{key}: {exc}") from None
        try:
            return RunConfig(**sections)
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(str(exc)) from None

    @classmethod
    def parse(cls, text: str) -> RunConfig:
        values = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            if not sep:
                raise ConfigError(f"line {lineno}: expected 'section.key = value'")
            values[key.strip()] = value
        return cls().with_values(values)

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            text = Path(path).read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc.strerror}") from None
        return cls.parse(text)

    def dump(self) -> str:
        lines = []
        for name in _SECTIONS:
            section = getattr(self, name)
            for f in dataclasses.fields(section):
                value = getattr(section, f.name)
                if isinstance(value, tuple):
                    value = ", ".join(str(v) for v in value)
                elif isinstance(value, bool):
                    value = str(value).lower()
                lines.append(f"{name}.{f.name} = {value}")
        return "\n".join(lines) + "\n"

    @property
    def threshold_scope(self) -> str:
        """``auto`` ranks per layer, except folded models which rank globally."""
        if self.plan.scope != "auto":
            return self.plan.scope
        return "layer" if self.model.fold.strip().lower() == "none" else "global"

    def load_graph(self) -> Graph:
        if self.dataset.path:
            return load_dataset(self.dataset.path)
        return generate_synthetic(self.synthetic)

    def model_spec(self, graph: Graph, seed: int | None = None) -> ModelSpec:
        m = self.model
        return ModelSpec(
            architecture=m.architecture,
            in_features=graph.num_features,
            hidden=m.hidden,
            num_classes=graph.num_classes,
            depth=m.depth,
            fold=parse_fold(m.fold, m.depth, m.masks),
            batch_norm=m.batch_norm,
            init_method=m.init,
            seed=m.seed if seed is None else seed,
            bn_sharing=m.bn_sharing,
        )
