"""The JSON run configuration: data, model, training, attacks, defense and scenarios.

The configuration is validated completely, including the construction of every attack,
defense and scenario, before anything is computed.
"""

import copy
import json
import logging
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

from typing_extensions import Self, override

from dentlab.attacks.spec import (
    AttackKind,
    AttackLoss,
    AttackSpec,
    InvalidAttackSpecException,
    Norm,
)
from dentlab.config_schema import (
    BooleanParameter,
    ConfigDict,
    ConfigException,
    ConfigParameter,
    ConfigValue,
    FloatParameter,
    IntegerParameter,
    ListParameter,
    SectionParameter,
    StringParameter,
    parse_section,
)
from dentlab.data.cifar import load_cifar10_binary
from dentlab.data.dataset import Dataset, Split, resolve_data_path
from dentlab.data.mnist import load_mnist_idx
from dentlab.data.shapes import synth_shapes
from dentlab.defense.config import (
    DefenseConfig,
    FinalPassStats,
    Interleave,
    Objective,
    Smoothing,
)
from dentlab.harness.scenario import (
    ONE_OF_16,
    InvalidScenarioException,
    Scenario,
    ScenarioKind,
)
from dentlab.nn.layers import Granularity, StatsMode
from dentlab.nn.models import ARCHITECTURES
from dentlab.nn.training import TrainOptimizer, TrainSpec

logger = logging.getLogger("dentlab")

PathLike = Union[str, Path]

SYNTH_SHAPES = "synth-shapes"
MNIST_IDX = "mnist-idx"
CIFAR10_BINARY = "cifar10-binary"


def _options(enum_type: Any) -> List[str]:
    return [member.value for member in enum_type]


@dataclass(eq=True, frozen=True)
class MixRatioParameter(ConfigParameter):
    """A fraction in (0, 1] or the string 'one-of-16'."""

    @override
    def parse(self, value: ConfigValue, path: str) -> Optional[Union[float, str]]:
        """Check the value is a fraction or the one-of-16 marker."""
        if value is None or value == ONE_OF_16:
            return value
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigException(path, f"must be a fraction or '{ONE_OF_16}': '{value}'")
        if not 0.0 < float(value) <= 1.0:
            raise ConfigException(path, f"{value} is not in (0, 1]")
        return float(value)

    @override
    def default_value(self) -> None:
        """No mix ratio."""
        return None


DATA_FIELDS: List[ConfigParameter] = [
    StringParameter(
        "source", default=SYNTH_SHAPES, enum_options=[SYNTH_SHAPES, MNIST_IDX, CIFAR10_BINARY]
    ),
    StringParameter("data_dir", description="Root of relative dataset paths"),
    StringParameter("train_images"),
    StringParameter("train_labels"),
    StringParameter("test_images"),
    StringParameter("test_labels"),
    ListParameter("train_files", item=StringParameter("file", required=True), default=[]),
    ListParameter("test_files", item=StringParameter("file", required=True), default=[]),
    IntegerParameter("train_count", default=2000, minimum=1),
    IntegerParameter("test_count", default=512, minimum=1),
    IntegerParameter("classes", default=4, minimum=2, maximum=8),
]

MODEL_FIELDS: List[ConfigParameter] = [
    StringParameter("arch", default="convnet-bn-small", enum_options=list(ARCHITECTURES)),
    StringParameter("checkpoint", default="checkpoint.dntl"),
]

TRAIN_FIELDS: List[ConfigParameter] = [
    StringParameter("optimizer", default="sgd-momentum", enum_options=_options(TrainOptimizer)),
    FloatParameter("lr", default=0.05, minimum=0.0),
    FloatParameter("momentum", default=0.9, minimum=0.0, maximum=1.0),
    FloatParameter("weight_decay", default=5e-4, minimum=0.0),
    IntegerParameter("epochs", default=5, minimum=1),
    IntegerParameter("batch_size", default=64, minimum=1),
    BooleanParameter("adversarial", default=False),
    StringParameter("adversarial_norm", default="linf", enum_options=_options(Norm)),
    FloatParameter("adversarial_epsilon", default=0.1, minimum=0.0),
]

ATTACK_FIELDS: List[ConfigParameter] = [
    StringParameter("kind", default="pgd", enum_options=_options(AttackKind)),
    StringParameter("norm", default="linf", enum_options=_options(Norm)),
    FloatParameter("epsilon", default=0.1, minimum=0.0),
    FloatParameter("alpha", default=0.01, minimum=0.0, exclusive_minimum=True),
    IntegerParameter("steps", default=40, minimum=1),
    IntegerParameter("restarts", default=1, minimum=1),
    StringParameter("loss", default="cross-entropy", enum_options=_options(AttackLoss)),
    BooleanParameter("targeted", default=False),
    IntegerParameter("seed", default=0, minimum=0),
    IntegerParameter("query_budget", default=1000, minimum=1),
    BooleanParameter("random_start", default=True),
    FloatParameter("momentum", default=0.75, minimum=0.0, maximum=1.0, exclusive_minimum=True),
    StringParameter("name", default=""),
]

DEFENSE_FIELDS: List[ConfigParameter] = [
    IntegerParameter("steps", default=10, minimum=0),
    FloatParameter("model_lr", default=0.001, minimum=0.0),
    FloatParameter("sigma_lr", default=0.25, minimum=0.0),
    StringParameter("granularity", default="batch-wise", enum_options=_options(Granularity)),
    StringParameter("stats_mode", default="test-time", enum_options=_options(StatsMode)),
    BooleanParameter("adapt_affine", default=True),
    StringParameter("smoothing", default="dynamic", enum_options=_options(Smoothing)),
    FloatParameter("sigma_init", default=0.7, minimum=0.0),
    StringParameter("objective", default="minent", enum_options=_options(Objective)),
    FloatParameter("maxinf_weight", default=1.0, minimum=0.0),
    StringParameter("optimizer", default="adam", enum_options=["adam"]),
    StringParameter("reset", default="per-batch", enum_options=["per-batch"]),
    FloatParameter("grad_clip", minimum=0.0, exclusive_minimum=True, nullable=True),
    StringParameter("final_pass_stats", default="batch", enum_options=_options(FinalPassStats)),
    StringParameter("interleave", default="lockstep", enum_options=_options(Interleave)),
    BooleanParameter("carry_state", default=False),
    BooleanParameter("per_sample_sigma", default=False),
]

DEFENSE_OVERRIDE_FIELDS: List[ConfigParameter] = [
    replace(parameter, default=None) for parameter in DEFENSE_FIELDS  # type: ignore[call-arg]
]
"""The defense fields without defaults, for per-scenario overrides."""

SCENARIO_FIELDS: List[ConfigParameter] = [
    StringParameter("kind", required=True, enum_options=_options(ScenarioKind)),
    StringParameter("name", default=""),
    IntegerParameter("batch_size", default=128, minimum=1),
    MixRatioParameter("mix_ratio"),
    ListParameter("sweep_values", item=FloatParameter("value", required=True), default=[]),
    ListParameter(
        "attacks",
        item=IntegerParameter("attack", required=True, minimum=0),
        description="Indices into the attack list; all attacks when absent",
    ),
    SectionParameter("defense", fields=DEFENSE_OVERRIDE_FIELDS),
]

OUTPUT_FIELDS: List[ConfigParameter] = [
    BooleanParameter("timings", default=False, description="Write wall times to summary.csv"),
    BooleanParameter("sigma_trajectories", default=True),
    BooleanParameter("capture_logs", default=True),
]

RUN_FIELDS: List[ConfigParameter] = [
    IntegerParameter("seed", default=0, minimum=0),
    StringParameter("out_dir", default="results"),
    IntegerParameter("workers", default=1, minimum=1),
    SectionParameter("data", fields=DATA_FIELDS),
    SectionParameter("model", fields=MODEL_FIELDS),
    SectionParameter("train", fields=TRAIN_FIELDS),
    ListParameter(
        "attacks",
        item=SectionParameter("attack", fields=ATTACK_FIELDS),
        default=[{}],
        min_length=1,
    ),
    SectionParameter("defense", fields=DEFENSE_FIELDS),
    ListParameter(
        "scenarios",
        item=SectionParameter("scenario", fields=SCENARIO_FIELDS),
        default=[{"kind": "dent-dent"}],
    ),
    SectionParameter("output", fields=OUTPUT_FIELDS),
]


def _attack_spec(values: ConfigDict, path: str) -> AttackSpec:
    try:
        return AttackSpec(
            kind=AttackKind(values["kind"]),
            norm=Norm(values["norm"]),
            epsilon=values["epsilon"],
            alpha=values["alpha"],
            steps=values["steps"],
            restarts=values["restarts"],
            loss=AttackLoss(values["loss"]),
            targeted=values["targeted"],
            seed=values["seed"],
            query_budget=values["query_budget"],
            random_start=values["random_start"],
            momentum=values["momentum"],
            name=values["name"],
        )
    except InvalidAttackSpecException as error:
        raise ConfigException(f"{path}.{error.field_name}", str(error)) from error


def _defense_config(values: ConfigDict, seed: int, path: str) -> DefenseConfig:
    try:
        return DefenseConfig(
            steps=values["steps"],
            model_lr=values["model_lr"],
            sigma_lr=values["sigma_lr"],
            granularity=Granularity(values["granularity"]),
            stats_mode=StatsMode(values["stats_mode"]),
            adapt_affine=values["adapt_affine"],
            smoothing=Smoothing(values["smoothing"]),
            sigma_init=values["sigma_init"],
            objective=Objective(values["objective"]),
            maxinf_weight=values["maxinf_weight"],
            optimizer=values["optimizer"],
            reset=values["reset"],
            grad_clip=values["grad_clip"],
            final_pass_stats=FinalPassStats(values["final_pass_stats"]),
            interleave=Interleave(values["interleave"]),
            carry_state=values["carry_state"],
            per_sample_sigma=values["per_sample_sigma"],
            seed=seed,
        )
    except ConfigException as error:
        field_name = error.field_path.split(".")[-1]
        raise ConfigException(f"{path}.{field_name}", str(error)) from error


@dataclass(frozen=True)
class RunConfig:
    """A validated run configuration."""

    values: ConfigDict
    """Parsed values with every default filled in."""

    @classmethod
    def from_json_config(cls, json_config: ConfigValue) -> Self:
        """Validate a JSON object and build every attack, defense and scenario once.

        :param json_config: The parsed JSON document.
        :raises ConfigException: With the dotted path of the first offending field.
        """
        values = parse_section(RUN_FIELDS, json_config, "")
        config = cls(values)
        config.attack_specs()
        config.defense_config()
        config.train_spec()
        config.scenarios()
        config._check_data()
        return config

    @classmethod
    def from_json_config_file(cls, path: PathLike) -> Self:
        """Read and validate a JSON configuration file.

        :raises FileNotFoundError: If the file does not exist.
        :raises ConfigException: If the file is not valid JSON or not a valid configuration.
        """
        with open(path, encoding="utf-8") as handle:
            try:
                document = json.load(handle)
            except json.JSONDecodeError as error:
                raise ConfigException("<root>", f"{path} is not valid JSON: {error}") from error
        return cls.from_json_config(document)

    def to_json_dict(self) -> ConfigDict:
        """The configuration as JSON; parsing it again gives an equal configuration."""
        return copy.deepcopy(self.values)

    def with_overrides(
        self,
        seed: Optional[int] = None,
        out_dir: Optional[str] = None,
        steps: Optional[int] = None,
        batch_size: Optional[int] = None,
        epsilon: Optional[float] = None,
        norm: Optional[str] = None,
        workers: Optional[int] = None,
    ) -> "RunConfig":
        """Re-validated copy with command line overrides applied.

        `steps` sets the defense steps of the run and of every scenario, `batch_size` the
        batch size of every scenario, `epsilon` and `norm` those of every attack.
        """
        values = self.to_json_dict()
        if seed is not None:
            values["seed"] = seed
        if out_dir is not None:
            values["out_dir"] = out_dir
        if workers is not None:
            values["workers"] = workers
        if steps is not None:
            values["defense"]["steps"] = steps
        for scenario in values["scenarios"]:
            if steps is not None:
                scenario["defense"]["steps"] = steps
            if batch_size is not None:
                scenario["batch_size"] = batch_size
        for attack in values["attacks"]:
            if epsilon is not None:
                attack["epsilon"] = epsilon
            if norm is not None:
                attack["norm"] = norm
        return RunConfig.from_json_config(values)

    @property
    def seed(self) -> int:
        """Run seed every random stream derives from."""
        return int(self.values["seed"])

    @property
    def out_dir(self) -> Path:
        """Directory result files are written to."""
        return Path(self.values["out_dir"])

    @property
    def workers(self) -> int:
        """Worker processes per evaluation."""
        return int(self.values["workers"])

    @property
    def checkpoint(self) -> Path:
        """Checkpoint written by training and read by evaluation."""
        return Path(self.values["model"]["checkpoint"])

    @property
    def arch(self) -> str:
        """Model architecture."""
        return str(self.values["model"]["arch"])

    @property
    def output(self) -> ConfigDict:
        """Output options."""
        return dict(self.values["output"])

    def attack_specs(self) -> List[AttackSpec]:
        """The configured attacks in order."""
        return [
            _attack_spec(values, f"attacks[{index}]")
            for index, values in enumerate(self.values["attacks"])
        ]

    def defense_config(self) -> DefenseConfig:
        """The run-wide defense."""
        return _defense_config(self.values["defense"], self.seed, "defense")

    def train_spec(self) -> TrainSpec:
        """The training recipe, with the PGD-10 inner attack for adversarial training."""
        values = self.values["train"]
        adversarial = None
        if values["adversarial"]:
            adversarial = AttackSpec.training_recipe(
                Norm(values["adversarial_norm"]), values["adversarial_epsilon"], self.seed
            )
        return TrainSpec(
            optimizer=TrainOptimizer(values["optimizer"]),
            lr=values["lr"],
            momentum=values["momentum"],
            weight_decay=values["weight_decay"],
            epochs=values["epochs"],
            batch_size=values["batch_size"],
            adversarial=adversarial,
            seed=self.seed,
        )

    def scenarios(self) -> List[Scenario]:
        """The configured scenarios, each with its attacks and the run defense overridden."""
        attacks = self.attack_specs()
        base_defense = self.values["defense"]
        scenarios = []
        for index, values in enumerate(self.values["scenarios"]):
            path = f"scenarios[{index}]"
            selected = values["attacks"]
            if selected is None:
                members = attacks
            else:
                for position, attack_index in enumerate(selected):
                    if attack_index >= len(attacks):
                        raise ConfigException(
                            f"{path}.attacks[{position}]",
                            f"there are only {len(attacks)} attacks",
                        )
                members = [attacks[attack_index] for attack_index in selected]
            overrides = {k: v for k, v in values["defense"].items() if v is not None}
            defense = _defense_config({**base_defense, **overrides}, self.seed, f"{path}.defense")
            try:
                scenarios.append(
                    Scenario(
                        kind=ScenarioKind(values["kind"]),
                        attacks=tuple(members),
                        defense=defense,
                        batch_size=values["batch_size"],
                        mix_ratio=values["mix_ratio"],
                        sweep_values=tuple(values["sweep_values"]),
                        name=values["name"],
                    )
                )
            except (InvalidScenarioException, InvalidAttackSpecException) as error:
                raise ConfigException(path, str(error)) from error
        return scenarios

    def _check_data(self) -> None:
        data = self.values["data"]
        if data["source"] == MNIST_IDX:
            for key in ("test_images", "test_labels"):
                if data[key] is None:
                    raise ConfigException(f"data.{key}", "is required for mnist-idx data")
        if data["source"] == CIFAR10_BINARY and not data["test_files"]:
            raise ConfigException("data.test_files", "is required for cifar10-binary data")

    def load_data(self, split: Split) -> Dataset:
        """Load or render the configured split, subsampled to the configured count.

        :raises ConfigException: If the files of the split are not configured.
        :raises FileNotFoundError: If a configured file does not exist.
        :raises DatasetFormatException: If a file is malformed.
        """
        data = self.values["data"]
        prefix = split.value
        count = data[f"{prefix}_count"]
        if data["source"] == SYNTH_SHAPES:
            return synth_shapes(count, data["classes"], self.seed, split)
        if data["source"] == MNIST_IDX:
            paths = [data[f"{prefix}_images"], data[f"{prefix}_labels"]]
            if None in paths:
                raise ConfigException(f"data.{prefix}_images", "is required to load this split")
            images, labels = (resolve_data_path(p, data["data_dir"]) for p in paths)
            dataset = load_mnist_idx(images, labels, split)
        else:
            files: Sequence[str] = data[f"{prefix}_files"]
            if not files:
                raise ConfigException(f"data.{prefix}_files", "is required to load this split")
            dataset = load_cifar10_binary(
                [resolve_data_path(p, data["data_dir"]) for p in files], split
            )
        if count < len(dataset):
            dataset = dataset.subset(count, self.seed)
        return dataset

    @property
    def num_classes(self) -> int:
        """Number of classes of the configured data."""
        data = self.values["data"]
        return int(data["classes"]) if data["source"] == SYNTH_SHAPES else 10

    @property
    def image_geometry(self) -> Dict[str, int]:
        """Input channels and image size of the configured data."""
        if self.values["data"]["source"] == CIFAR10_BINARY:
            return {"in_channels": 3, "image_size": 32}
        return {"in_channels": 1, "image_size": 28}
