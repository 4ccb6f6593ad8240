"""Experiment configuration and its flat ``key = value`` file format.

One setting per line; dotted keys address nested settings (``finetune.epochs``,
``mergetune.lambda``). Values are Python literals (``0.5``, ``(16, 8)``,
``["linear", "ties"]``, ``None``); an unquoted word is read as a string.
Lines starting with ``#`` are comments. Unknown keys are rejected.
"""

from __future__ import annotations

import ast
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Callable, Optional

from ..errors import ConfigError, LabError
from ..merge import METHODS, MergeConfig
from ..mergetune import MergeTuneConfig
from ..model import ACTIVATIONS
from ..trainer import TrainConfig

LABEL_SPACES = ("joint", "split")


@dataclass(frozen=True)
class TaskSettings:
    dim: int = 20
    num_classes: int = 10
    base_fraction: float = 0.5
    n_shots: int = 16
    shift_scale: float = 1.0
    noise_sigma: float = 0.5
    mean_scale: float = 3.0
    pretrain_per_class: int = 100
    eval_per_class: int = 200


@dataclass(frozen=True)
class ModelSettings:
    hidden_dims: tuple[int, ...] = ()
    activation: str = "tanh"


@dataclass(frozen=True)
class ProbeSettings:
    n_points: int = 11
    ensemble_alpha: Optional[float] = 0.5
    # "joint": argmax over all classes; "split": base-only / novel-only logits
    label_space: str = "joint"


def _default_merges() -> tuple[MergeConfig, ...]:
    return (
        MergeConfig("linear", alpha=0.5),
        MergeConfig("ties", density=0.2),
        MergeConfig("dare", drop_p=0.9, seed=0),
    )


@dataclass(frozen=True)
class ExperimentConfig:
    task: TaskSettings = field(default_factory=TaskSettings)
    model: ModelSettings = field(default_factory=ModelSettings)
    pretrain: TrainConfig = field(default_factory=lambda: TrainConfig(0.1, 5, 32))
    finetune: TrainConfig = field(default_factory=lambda: TrainConfig(0.5, 300, 16))
    mergetune: MergeTuneConfig = field(
        default_factory=lambda: MergeTuneConfig(8.0, 0.5, 5, 0.3, TrainConfig(0.1, 50, 16))
    )
    merges: tuple[MergeConfig, ...] = field(default_factory=_default_merges)
    probe: ProbeSettings = field(default_factory=ProbeSettings)
    master_seed: int = 0
    out_dir: str = "runs/default"

    def to_flat(self) -> dict[str, Any]:
        return to_flat(self)

    def with_overrides(self, overrides: dict[str, Any]) -> "ExperimentConfig":
        flat = self.to_flat()
        for key, value in overrides.items():
            if key not in flat:
                raise ConfigError(f"unknown config key {key!r}")
            flat[key] = value
        return from_flat(flat)

    def config_hash(self) -> str:
        """SHA-256 of the canonical config text, ignoring the output directory."""
        flat = self.to_flat()
        del flat["out_dir"]
        return hashlib.sha256(dump_flat(flat).encode("utf-8")).hexdigest()


def _merge_by_method(merges) -> dict[str, MergeConfig]:
    return {m.method: m for m in merges}


def to_flat(cfg: ExperimentConfig) -> dict[str, Any]:
    flat: dict[str, Any] = {}
    for name in TaskSettings.__dataclass_fields__:
        flat[f"task.{name}"] = getattr(cfg.task, name)
    flat["model.hidden_dims"] = tuple(cfg.model.hidden_dims)
    flat["model.activation"] = cfg.model.activation
    for stage, tc in (("pretrain", cfg.pretrain), ("finetune", cfg.finetune),
                      ("mergetune.optimizer", cfg.mergetune.optimizer)):
        for name, value in tc.to_dict().items():
            flat[f"{stage}.{name}"] = value
    mt = cfg.mergetune
    flat["mergetune.lambda"] = mt.lam
    flat["mergetune.beta"] = mt.beta
    flat["mergetune.n_alpha"] = mt.n_alpha
    flat["mergetune.tau"] = mt.tau
    chosen = _merge_by_method(cfg.merges)
    flat["merges.methods"] = [m.method for m in cfg.merges]
    defaults = _merge_by_method(_default_merges())
    for method in METHODS:
        m = chosen.get(method, defaults[method])
        if method == "linear":
            flat["merges.linear.alpha"] = m.alpha
        elif method == "ties":
            flat["merges.ties.density"] = m.density
        else:
            flat["merges.dare.drop_p"] = m.drop_p
            flat["merges.dare.seed"] = m.seed
    for name in ProbeSettings.__dataclass_fields__:
        flat[f"probe.{name}"] = getattr(cfg.probe, name)
    flat["master_seed"] = cfg.master_seed
    flat["out_dir"] = cfg.out_dir
    return flat


KNOWN_KEYS = frozenset(to_flat(ExperimentConfig()))


def _int(v):
    if isinstance(v, bool) or not isinstance(v, int):
        raise TypeError(f"expected an integer, got {v!r}")
    return v


def _float(v):
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise TypeError(f"expected a number, got {v!r}")
    return float(v)


def _str(v):
    if not isinstance(v, str):
        raise TypeError(f"expected a string, got {v!r}")
    return v


def _opt_float(v):
    return None if v is None else _float(v)


def _int_tuple(v):
    if isinstance(v, int) and not isinstance(v, bool):
        return (v,)
    if not isinstance(v, (list, tuple)):
        raise TypeError(f"expected a list of integers, got {v!r}")
    return tuple(_int(x) for x in v)


def _str_list(v):
    if isinstance(v, str):
        v = [s.strip() for s in v.split(",") if s.strip()]
    if not isinstance(v, (list, tuple)):
        raise TypeError(f"expected a list of names, got {v!r}")
    return [_str(x) for x in v]


def _coercer(key: str) -> Callable[[Any], Any]:
    default = to_flat(ExperimentConfig())[key]
    if key == "model.hidden_dims":
        return _int_tuple
    if key == "merges.methods":
        return _str_list
    if key == "probe.ensemble_alpha":
        return _opt_float
    if isinstance(default, bool):
        raise AssertionError(key)
    if isinstance(default, int):
        return _int
    if isinstance(default, float):
        return _float
    return _str


def from_flat(flat: dict[str, Any]) -> ExperimentConfig:
    """Build a config from a (possibly partial) flat mapping over the defaults."""
    unknown = sorted(set(flat) - KNOWN_KEYS)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = to_flat(ExperimentConfig())
    for key, raw in flat.items():
        try:
            values[key] = _coercer(key)(raw)
        except TypeError as exc:
            raise ConfigError(f"{key}: {exc}") from None

    def train_config(prefix):
        return TrainConfig(**{name: values[f"{prefix}.{name}"] for name in TrainConfig.__dataclass_fields__})

    try:
        methods = values["merges.methods"]
        for m in methods:
            if m not in METHODS:
                raise ConfigError(f"merges.methods: unknown method {m!r}")
        if len(set(methods)) != len(methods):
            raise ConfigError("merges.methods: duplicate method")
        merges = []
        for m in methods:
            if m == "linear":
                merges.append(MergeConfig("linear", alpha=values["merges.linear.alpha"]))
            elif m == "ties":
                merges.append(MergeConfig("ties", density=values["merges.ties.density"]))
            else:
                merges.append(MergeConfig("dare", drop_p=values["merges.dare.drop_p"],
                                          seed=values["merges.dare.seed"]))
        model = ModelSettings(values["model.hidden_dims"], values["model.activation"])
        if model.activation not in ACTIVATIONS:
            raise ConfigError(f"model.activation must be one of {ACTIVATIONS}")
        probe = ProbeSettings(**{name: values[f"probe.{name}"] for name in ProbeSettings.__dataclass_fields__})
        if probe.label_space not in LABEL_SPACES:
            raise ConfigError(f"probe.label_space must be one of {LABEL_SPACES}")
        if probe.n_points < 2:
            raise ConfigError("probe.n_points must be >= 2")
        if probe.ensemble_alpha is not None and not 0.0 <= probe.ensemble_alpha <= 1.0:
            raise ConfigError("probe.ensemble_alpha must lie in [0, 1]")
        return ExperimentConfig(
            task=TaskSettings(**{name: values[f"task.{name}"] for name in TaskSettings.__dataclass_fields__}),
            model=model,
            pretrain=train_config("pretrain"),
            finetune=train_config("finetune"),
            mergetune=MergeTuneConfig(
                lam=values["mergetune.lambda"],
                beta=values["mergetune.beta"],
                n_alpha=values["mergetune.n_alpha"],
                tau=values["mergetune.tau"],
                optimizer=train_config("mergetune.optimizer"),
            ),
            merges=tuple(merges),
            probe=probe,
            master_seed=values["master_seed"],
            out_dir=values["out_dir"],
        )
    except ConfigError:
        raise
    except LabError as exc:
        raise ConfigError(str(exc)) from None


def parse_value(text: str) -> Any:
    text = text.strip()
    try:
        return ast.literal_eval(text)
    except (ValueError, SyntaxError):
        return text


def parse_flat(text: str, source: str = "<config>") -> dict[str, Any]:
    """Parse flat ``key = value`` text into a dict; duplicate keys are errors."""
    out: dict[str, Any] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            continue
        key, sep, value = stripped.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        if key in out:
            raise ConfigError(f"{source}:{lineno}: duplicate key {key!r}")
        out[key] = parse_value(value)
    return out


def dump_flat(flat: dict[str, Any]) -> str:
    return "".join(f"{key} = {value!r}\n" for key, value in flat.items())


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    return from_flat(parse_flat(path.read_text(encoding="utf-8"), str(path)))


def save_config(cfg: ExperimentConfig, path) -> None:
    Path(path).write_text(dump_flat(cfg.to_flat()), encoding="utf-8")


def with_seed(cfg: ExperimentConfig, seed: int) -> ExperimentConfig:
    return replace(cfg, master_seed=int(seed))
