"""Experiment configuration loading from a TOML file."""

import logging
from dataclasses import MISSING, asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Optional

import tomli_w

from .attack import APPROACHES, AttackConfig
from .errors import ConfigurationError
from .evaluation import REFERENCES, SimConfig
from .nets import ModelSpec, TrainConfig
from .scene import SIGN_ASSETS, SceneConfig, scene_sequence

try:
    import tomllib
except ModuleNotFoundError:  # pragma: no cover - Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
VALID_SECTIONS = {"schema_version", "experiment", "scenes", "model", "models", "train", "attack", "evaluation"}
SNAPSHOT_NAME = "config.snapshot.toml"


@dataclass
class ExperimentSettings:
    """Parsed [experiment] section."""

    name: str = "physgan-toy"
    seed: int = 0
    output_dir: str = "out"
    jobs: int = 1
    seeds_per_run: int = 3

    def validate(self) -> list[str]:
        errors = []
        if self.seed < 0:
            errors.append(f"experiment.seed must be >= 0, got {self.seed}")
        if self.jobs < 1:
            errors.append(f"experiment.jobs must be >= 1, got {self.jobs}")
        if self.seeds_per_run < 1:
            errors.append(f"experiment.seeds_per_run must be >= 1, got {self.seeds_per_run}")
        return errors


@dataclass
class EvaluationConfig:
    """Parsed [evaluation] section."""

    reference: str = "ground_truth"
    curb_offset_m: float = 1.5
    horizon_s: float = 3.0
    sim_speed_mps: Optional[float] = None
    wheelbase_m: float = 2.5
    closed_loop_scenes: list[str] = field(default_factory=list)
    approaches: list[str] = field(default_factory=lambda: list(APPROACHES))

    @property
    def sim(self) -> SimConfig:
        return SimConfig(self.curb_offset_m, self.horizon_s, self.sim_speed_mps, self.wheelbase_m)

    def validate(self) -> list[str]:
        errors = self.sim.validate()
        if self.reference not in REFERENCES:
            errors.append(f"evaluation.reference must be one of {REFERENCES}, got '{self.reference}'")
        unknown = [a for a in self.approaches if a not in APPROACHES]
        if unknown:
            errors.append(f"evaluation.approaches has unknown entries {unknown}; valid: {', '.join(APPROACHES)}")
        return errors


@dataclass
class ExperimentConfig:
    """Complete experiment configuration."""

    experiment: ExperimentSettings = field(default_factory=ExperimentSettings)
    scenes: list[SceneConfig] = field(default_factory=list)
    models: list[ModelSpec] = field(default_factory=lambda: [ModelSpec()])
    train: TrainConfig = field(default_factory=TrainConfig)
    attack: AttackConfig = field(default_factory=AttackConfig)
    attack_overrides: dict[str, dict[str, Any]] = field(default_factory=dict)
    evaluation: EvaluationConfig = field(default_factory=EvaluationConfig)
    source: Optional[Path] = None

    @property
    def output_dir(self) -> Path:
        out = Path(self.experiment.output_dir)
        if not out.is_absolute() and self.source is not None:
            return self.source.parent / out
        return out

    @property
    def seeds(self) -> list[int]:
        return [self.experiment.seed + i for i in range(self.experiment.seeds_per_run)]

    def scene(self, name: str) -> SceneConfig:
        for cfg in self.scenes:
            if cfg.name == name:
                return cfg
        raise ConfigurationError(f"No scene named '{name}' in the configuration")

    @property
    def model_names(self) -> list[str]:
        return [m.name for m in self.models]

    def model_spec(self, name: str) -> ModelSpec:
        for spec in self.models:
            if spec.name == name:
                return spec
        raise ConfigurationError(f"No model named '{name}' in the configuration")

    def attack_for(self, approach: str, seed: int) -> AttackConfig:
        """Attack defaults merged with the approach's override table, seeded for one run."""
        values = self.attack.to_dict()
        values.update(self.attack_overrides.get(approach, {}))
        values["seed"] = seed
        return AttackConfig.from_dict(values)

    @property
    def closed_loop_scenes(self) -> list[str]:
        return self.evaluation.closed_loop_scenes or [self.scenes[0].name]

    def validate(self) -> list[str]:
        """Validate configuration, return list of errors."""
        errors = self.experiment.validate()
        if not self.scenes:
            errors.append("At least one [[scenes]] entry is required")
        if not self.models:
            errors.append("At least one model is required ([model] or [[models]])")
        duplicates = sorted({n for n in self.model_names if self.model_names.count(n) > 1})
        if duplicates:
            errors.append(f"Model names must be unique; repeated: {', '.join(duplicates)}")
        for scene in self.scenes:
            errors.extend(scene.validate())
            for spec in self.models:
                if (scene.width, scene.height) != (spec.width, spec.height):
                    errors.append(
                        f"scene '{scene.name}': image_size {list(scene.image_size)} differs from the input "
                        f"{spec.width}x{spec.height} of model '{spec.name}'"
                    )
                if scene.frames != spec.window:
                    errors.append(
                        f"scene '{scene.name}': frames ({scene.frames}) must equal the window ({spec.window}) "
                        f"of model '{spec.name}'"
                    )
            if scene.sign_asset not in SIGN_ASSETS and not self._asset_path(scene.sign_asset).exists():
                errors.append(f"scene '{scene.name}': sign asset not found: {self._asset_path(scene.sign_asset)}")
        try:
            names = scene_sequence(self.scenes)
        except ConfigurationError as e:
            errors.append(str(e))
            names = [s.name for s in self.scenes]
        for spec in self.models:
            errors.extend(f"model '{spec.name}': {e}" for e in spec.validate())
        errors.extend(self.train.validate())
        for spec in self.models:
            if self.train.slice_length != spec.window:
                errors.append(
                    f"train.slice_length ({self.train.slice_length}) must equal the window ({spec.window}) "
                    f"of model '{spec.name}'"
                )
        missing = [n for n in self.train.scenes_for_training if n not in names]
        if missing:
            errors.append(f"train.scenes_for_training names unknown scenes: {', '.join(missing)}")
        errors.extend(self.attack.validate())
        for approach in self.attack_overrides:
            if approach not in APPROACHES:
                errors.append(f"[attack.{approach}] is not an approach; valid: {', '.join(APPROACHES)}")
                continue
            merged = self.attack_for(approach, self.experiment.seed)
            errors.extend(f"[attack.{approach}] {e}" for e in merged.validate())
        errors.extend(self.evaluation.validate())
        missing = [n for n in self.evaluation.closed_loop_scenes if n not in names]
        if missing:
            errors.append(f"evaluation.closed_loop_scenes names unknown scenes: {', '.join(missing)}")
        return errors

    def _asset_path(self, asset: str) -> Path:
        path = Path(asset)
        if not path.is_absolute() and self.source is not None:
            return self.source.parent / path
        return path

    def sign_asset_path(self, scene: SceneConfig) -> str:
        """Built-in asset name or the resolved image path."""
        if scene.sign_asset in SIGN_ASSETS:
            return scene.sign_asset
        return str(self._asset_path(scene.sign_asset))

    def to_dict(self) -> dict[str, Any]:
        """Every setting with defaults materialized; None values are omitted (TOML has no null)."""
        data: dict[str, Any] = {
            "schema_version": SCHEMA_VERSION,
            "experiment": asdict(self.experiment),
            "scenes": [s.to_dict() for s in self.scenes],
            "models": [m.to_dict() for m in self.models],
            "train": asdict(self.train),
            "attack": {**self.attack.to_dict(), **{k: dict(v) for k, v in sorted(self.attack_overrides.items())}},
            "evaluation": asdict(self.evaluation),
        }
        return _drop_none(data)

    def write_snapshot(self, out_dir: Path) -> Path:
        out_dir.mkdir(parents=True, exist_ok=True)
        path = out_dir / SNAPSHOT_NAME
        with open(path, "wb") as f:
            tomli_w.dump(self.to_dict(), f)
        logger.info(f"Wrote configuration snapshot {path}")
        return path


def _drop_none(value: Any) -> Any:
    if isinstance(value, dict):
        return {k: _drop_none(v) for k, v in value.items() if v is not None}
    if isinstance(value, list):
        return [_drop_none(v) for v in value]
    return value


def _section(cls: type, data: Any, section: str, errors: list[str]) -> dict[str, Any]:
    """Keep known keys of a table, warn about unknown ones and check value types against the defaults."""
    if not isinstance(data, dict):
        errors.append(f"[{section}] must be a table, got {type(data).__name__}")
        return {}
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(data) - set(known))
    if unknown:
        logger.warning(f"Unknown keys in [{section}]: {', '.join(unknown)}")
    values = {}
    for key, value in data.items():
        if key not in known:
            continue
        f = known[key]
        if f.default is not MISSING:
            default = f.default
        elif f.default_factory is not MISSING:
            default = f.default_factory()
        else:
            default = None
        if default is not None and not _type_matches(default, value):
            errors.append(f"{section}.{key} must be {type(default).__name__}, got {type(value).__name__}")
            continue
        values[key] = value
    return values


def _type_matches(default: Any, value: Any) -> bool:
    if isinstance(default, bool) or isinstance(value, bool):
        return isinstance(default, bool) and isinstance(value, bool)
    if isinstance(default, float):
        return isinstance(value, (int, float))
    if isinstance(default, int):
        return isinstance(value, int)
    if isinstance(default, (tuple, list)):
        return isinstance(value, list)
    return isinstance(value, type(default))


def _models(
    data: dict[str, Any], experiment: ExperimentSettings, scenes: list[SceneConfig], errors: list[str]
) -> list[ModelSpec]:
    """Model specs from a single [model] table or a [[models]] array; geometry defaults come from the first scene."""
    if "model" in data and "models" in data:
        errors.append("Use either [model] or [[models]], not both")
    if "models" in data:
        raw_models = data["models"]
        if not isinstance(raw_models, list) or not raw_models:
            errors.append("models must be a non-empty array of tables ([[models]])")
            raw_models = [{}]
        labelled = [(f"models[{i}]", raw, f"model{i}") for i, raw in enumerate(raw_models)]
    else:
        labelled = [("model", data.get("model", {}), None)]

    models = []
    for label, raw, default_name in labelled:
        values = _section(ModelSpec, raw, label, errors)
        if default_name is not None:
            values.setdefault("name", default_name)
        values.setdefault("seed", experiment.seed)
        if scenes:
            values.setdefault("width", scenes[0].width)
            values.setdefault("height", scenes[0].height)
            values.setdefault("window", scenes[0].frames)
        try:
            models.append(ModelSpec.from_dict(values))
        except (TypeError, ValueError) as e:
            errors.append(f"[{label}] is malformed: {e}")
            models.append(ModelSpec())
    return models


def build_config(
    data: dict[str, Any], source: Optional[Path] = None, overrides: Optional[dict[str, Any]] = None
) -> ExperimentConfig:
    """Build and validate an ExperimentConfig from parsed TOML data.

    Args:
        data: Parsed TOML document.
        source: Path the document came from; relative paths resolve against its directory.
        overrides: CLI overrides for experiment.seed, experiment.output_dir and experiment.jobs.

    Raises:
        ConfigurationError: If any value is invalid; every problem is listed.
    """
    errors: list[str] = []
    unknown = sorted(set(data) - VALID_SECTIONS)
    if unknown:
        logger.warning(f"Unknown top-level keys in configuration: {', '.join(unknown)}")
    version = data.get("schema_version")
    if version != SCHEMA_VERSION:
        errors.append(f"schema_version must be {SCHEMA_VERSION}, got {version!r}")

    experiment = ExperimentSettings(**_section(ExperimentSettings, data.get("experiment", {}), "experiment", errors))
    for key, value in (overrides or {}).items():
        if value is not None:
            setattr(experiment, key, value)

    scenes = []
    raw_scenes = data.get("scenes", [])
    if not isinstance(raw_scenes, list):
        errors.append("scenes must be an array of tables ([[scenes]])")
        raw_scenes = []
    for i, raw in enumerate(raw_scenes):
        values = _section(SceneConfig, raw, f"scenes[{i}]", errors)
        values.setdefault("name", f"scene{i}")
        scenes.append(SceneConfig.from_dict(values))

    models = _models(data, experiment, scenes, errors)

    train_values = _section(TrainConfig, data.get("train", {}), "train", errors)
    train_values.setdefault("seed", experiment.seed)
    train_values.setdefault("slice_length", models[0].window)
    train = TrainConfig(**train_values)

    raw_attack = data.get("attack", {})
    attack_overrides = {}
    if isinstance(raw_attack, dict):
        attack_overrides = {k: v for k, v in raw_attack.items() if isinstance(v, dict)}
        raw_attack = {k: v for k, v in raw_attack.items() if not isinstance(v, dict)}
    attack_values = _section(AttackConfig, raw_attack, "attack", errors)
    attack_values.setdefault("lr_g", train.lr_g)
    attack_values.setdefault("lr_d", train.lr_d)
    attack_values.setdefault("seed", experiment.seed)
    attack = AttackConfig(**attack_values)
    overrides_clean = {
        approach: _section(AttackConfig, table, f"attack.{approach}", errors)
        for approach, table in attack_overrides.items()
    }

    evaluation = EvaluationConfig(**_section(EvaluationConfig, data.get("evaluation", {}), "evaluation", errors))

    config = ExperimentConfig(experiment, scenes, models, train, attack, overrides_clean, evaluation, source)
    if not errors:
        errors = config.validate()
    if errors:
        error_msg = "\n".join(f"  - {e}" for e in errors)
        raise ConfigurationError(f"Configuration validation failed:\n{error_msg}")
    return config


def load_config(config_path: Path, overrides: Optional[dict[str, Any]] = None) -> ExperimentConfig:
    """Load an experiment configuration file.

    Args:
        config_path: Path to the TOML experiment file.
        overrides: Optional CLI overrides (seed, output_dir, jobs).

    Returns:
        Validated ExperimentConfig.

    Raises:
        FileNotFoundError: If the file does not exist.
        ConfigurationError: If TOML syntax or any value is invalid.
    """
    if not config_path.exists():
        raise FileNotFoundError(f"Configuration file not found: {config_path}")

    logger.info(f"Loading configuration from {config_path}")
    try:
        with open(config_path, "rb") as f:
            data = tomllib.load(f)
    except tomllib.TOMLDecodeError as e:
        raise ConfigurationError(
            f"Invalid TOML syntax in {config_path}: {e}\nPlease check the file for syntax errors."
        ) from e

    config = build_config(data, config_path, overrides)
    logger.info(
        f"Configuration valid: {len(config.scenes)} scenes, {len(config.models)} models, "
        f"seeds {config.seeds}, output {config.output_dir}"
    )
    return config
