"""Experiment configuration: flat ``key = value`` text files.

One assignment per line, ``#`` starts a comment, arrays are comma lists.
Unknown keys are rejected so typos fail loudly. The full key list:

    seed                master seed (int, default 1234)
    repetitions         experiment repetitions (int, default 5)
    scenario            S1..S9 (default S3)
    arch                mlp | cnn (default mlp)
    layer_sizes         comma ints; mlp: input,hidden...; cnn: conv filters
    fc_sizes            cnn only: fully connected widths before the head
    activation          relu | tanh | sigmoid (default relu)
    dropout_p           dropout probability (default 0.0)
    n_classes           class count (default 10)
    dataset             blobs | images | csv:<path> | file:<path>
    n_per_class         synthetic records per class (default 400)
    input_dim           blob feature width (default 32)
    image_size          image side length (default 16)
    separation          synthetic class separation (default 4.0)
    n_validation        |V1| = |V2| (default 400)
    aux_size            adversary pool size (default 1200)
    target_pool_size    target pool size (default 1600)
    overlap             disjoint | identical (default disjoint)
    train_size          |D_T| and shadow train size (default 400)
    k_shadows           shadow model count K (default 6)
    mc_train, mc_val, mc_test   meta-classifier record counts
    batch_size, lr, lr_divisor, patience, min_lr, max_epochs   training
    realign_method      weight | activation | correlation
    realign_direction   bottom_up | top_down
    oa_layers           comma ints, layers contributing output activations
    grad_layers         comma ints, layers contributing gradients
    include_ia          bool, add input activations of the head
    include_label       bool, add the label embedding
    probe_r             probe records for matching/metrics (default 500)
    cba_p               sampled pixels per filter map (default 50)
    mc_batch_size, mc_lr, mc_min_lr, mc_max_epochs   meta-classifier training
    median_epoch_val_shadow   bool, pick the validation shadow by median
                              training length instead of shadow #1
    cause_conditions    optional comma list restricting the cause study rows
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields

from .data import PartitionSpec, SyntheticSpec
from .errors import ConfigError
from .training import TrainConfig

SCENARIOS = tuple(f"S{i}" for i in range(1, 10))

# scenario -> re-alignment (method, direction); None means no re-alignment
SCENARIO_REALIGN = {
    "S4": ("weight_sort", ""),
    "S5": ("weight", "bottom_up"),
    "S6": ("weight", "top_down"),
    "S7": ("activation", "bottom_up"),
    "S8": ("correlation", "bottom_up"),
    "S9": ("realign_after_init", "top_down"),
}

CAUSE_CONDITIONS = (
    "same",
    "diff_wi",
    "diff_bo",
    "diff_ds",
    "overlap_data",
    "disjoint_data",
    "diff_bo_ds_dd",
    "diff_wi_bo_ds",
    "all_diff",
)


@dataclass
class ExperimentConfig:
    seed: int = 1234
    repetitions: int = 5
    scenario: str = "S3"
    arch: str = "mlp"
    layer_sizes: list = field(default_factory=lambda: [32, 64, 32])
    fc_sizes: list = field(default_factory=lambda: [64])
    activation: str = "relu"
    dropout_p: float = 0.0
    n_classes: int = 10
    dataset: str = "blobs"
    n_per_class: int = 400
    input_dim: int = 32
    image_size: int = 16
    separation: float = 4.0
    n_validation: int = 400
    aux_size: int = 1200
    target_pool_size: int = 1600
    overlap: str = "disjoint"
    train_size: int = 400
    k_shadows: int = 6
    mc_train: int = 800
    mc_val: int = 200
    mc_test: int = 400
    batch_size: int = 64
    lr: float = 0.01
    lr_divisor: float = 2.0
    patience: int = 5
    min_lr: float = 1e-5
    max_epochs: int = 100
    realign_method: str = "weight"
    realign_direction: str = "top_down"
    oa_layers: list = field(default_factory=lambda: [-1])
    grad_layers: list = field(default_factory=lambda: [-1])
    include_ia: bool = True
    include_label: bool = True
    probe_r: int = 500
    cba_p: int = 50
    mc_batch_size: int = 64
    mc_lr: float = 1e-3
    mc_min_lr: float = 1e-4
    mc_max_epochs: int = 100
    median_epoch_val_shadow: bool = False
    cause_conditions: list = field(default_factory=lambda: list(CAUSE_CONDITIONS))

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size,
            lr=self.lr,
            lr_divisor=self.lr_divisor,
            patience=self.patience,
            min_lr=self.min_lr,
            max_epochs=self.max_epochs,
        )

    def partition_spec(self) -> PartitionSpec:
        return PartitionSpec(
            n_validation=self.n_validation,
            aux_size=self.aux_size,
            target_pool_size=self.target_pool_size,
            train_size=self.train_size,
            n_shadows=self.k_shadows,
            overlap=self.overlap,
            mc_train=self.mc_train,
            mc_val=self.mc_val,
            mc_test=self.mc_test,
        )

    def synthetic_spec(self) -> SyntheticSpec:
        if self.dataset not in ("blobs", "images"):
            raise ConfigError(f"dataset {self.dataset!r} is not synthetic")
        return SyntheticSpec(
            kind=self.dataset,
            n_classes=self.n_classes,
            n_per_class=self.n_per_class,
            dim=self.input_dim,
            image_size=self.image_size,
            separation=self.separation,
        )

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise ConfigError(f"scenario must be one of {SCENARIOS}, got {self.scenario!r}")
        if self.overlap not in ("disjoint", "identical"):
            raise ConfigError(f"overlap must be disjoint or identical, got {self.overlap!r}")
        if self.realign_method not in ("weight", "activation", "correlation"):
            raise ConfigError(f"unknown realign method {self.realign_method!r}")
        if self.realign_direction not in ("bottom_up", "top_down"):
            raise ConfigError(f"unknown realign direction {self.realign_direction!r}")
        if self.arch not in ("mlp", "cnn"):
            raise ConfigError(f"arch must be mlp or cnn, got {self.arch!r}")
        for cond in self.cause_conditions:
            if cond not in CAUSE_CONDITIONS:
                raise ConfigError(f"unknown cause condition {cond!r}")
        if self.scenario != "S1" and self.k_shadows < 2:
            raise ConfigError("shadow scenarios need k_shadows >= 2 (one is held out)")
        return self


_FIELD_TYPES = {f.name: f for f in fields(ExperimentConfig)}
_LIST_INT = {"layer_sizes", "fc_sizes", "oa_layers", "grad_layers"}
_LIST_STR = {"cause_conditions"}
_BOOLS = {"include_ia", "include_label", "median_epoch_val_shadow"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _LIST_INT:
        return [int(v) for v in raw.split(",") if v.strip() != ""]
    if key in _LIST_STR:
        return [v.strip() for v in raw.split(",") if v.strip() != ""]
    if key in _BOOLS:
        low = raw.lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {raw!r}")
    default = _FIELD_TYPES[key].default
    ftype = type(default) if default is not None else str
    try:
        if ftype is int:
            return int(raw)
        if ftype is float:
            return float(raw)
    except ValueError as exc:
        raise ConfigError(f"{key}: {exc}") from exc
    return raw


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, raw = stripped.split("=", 1)
        key = key.strip()
        if key not in _FIELD_TYPES:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        setattr(cfg, key, _parse_value(key, raw))
    return cfg.validate()


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            return parse_config(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path!r}: {exc}") from exc
