"""
Run configuration schemas

Every hyperparameter of a run lives in one of the section models below.
User-facing JSON is flat: parse_config() routes each key to the section
that declares it, so {"epochs": 50, "S": 7} is a valid config file.
"""

from typing import Any, Dict, List, Literal, Optional, Tuple
import json

from pydantic import BaseModel, ConfigDict, Field, ValidationError, ValidationInfo, field_validator, model_validator

from heliodet.exceptions import ConfigError

# Reference protocol defaults
REFERENCE_BATCH_SIZE = 8
REFERENCE_EPOCHS = 100
REFERENCE_TRAIN_FRACTION = 0.8
FULL_SCALE_INPUT = 640
DESK_SCALE_INPUT = 96


class LayerSpec(BaseModel):
    """One backbone layer; kind-specific fields are filled with defaults on validation"""

    model_config = ConfigDict(extra="forbid")

    kind: Literal["conv2d", "maxpool2d", "leaky_relu", "linear", "flatten", "sigmoid"]
    out_channels: Optional[int] = Field(default=None, ge=1)
    kernel: Optional[int] = Field(default=None, ge=1)
    stride: Optional[int] = Field(default=None, ge=1)
    pad: Optional[int] = Field(default=None, ge=0)
    size: Optional[int] = Field(default=None, ge=1)
    slope: Optional[float] = Field(default=None, gt=0.0, lt=1.0)
    out_features: Optional[int] = Field(default=None, ge=1)

    @model_validator(mode="after")
    def _fill_kind_defaults(self):
        if self.kind == "conv2d":
            if self.out_channels is None:
                raise ValueError("conv2d requires out_channels")
            self.kernel = self.kernel or 3
            self.stride = self.stride or 1
            self.pad = self.kernel // 2 if self.pad is None else self.pad
        elif self.kind == "maxpool2d":
            self.size = self.size or 2
            self.stride = self.stride or self.size
        elif self.kind == "leaky_relu":
            self.slope = 0.1 if self.slope is None else self.slope
        elif self.kind == "linear":
            if self.out_features is None:
                raise ValueError("linear requires out_features")
        return self


def head_outputs(grid_size: int, boxes_per_cell: int, num_classes: int) -> int:
    """Length of the S x S x (B*5 + C) prediction tensor"""
    return grid_size * grid_size * (boxes_per_cell * 5 + num_classes)


def default_backbone(
    input_size: int,
    grid_size: int,
    boxes_per_cell: int,
    num_classes: int,
    hidden_features: int = 512,
    slope: float = 0.1
) -> List[LayerSpec]:
    """
    Reference topology: conv3x3/leaky/pool stages until the feature map is at
    most 6x6, then flatten -> linear(hidden) -> leaky -> linear(head outputs)

    For a 96-pixel input this gives four stages with 8, 16, 32, 64 channels.
    """
    layers: List[LayerSpec] = []
    size, channels = input_size, 8
    while size > 6 and size % 2 == 0:
        layers += [
            LayerSpec(kind="conv2d", out_channels=channels, kernel=3, stride=1, pad=1),
            LayerSpec(kind="leaky_relu", slope=slope),
            LayerSpec(kind="maxpool2d", size=2, stride=2),
        ]
        size //= 2
        channels = min(channels * 2, 256)
    layers += [
        LayerSpec(kind="flatten"),
        LayerSpec(kind="linear", out_features=hidden_features),
        LayerSpec(kind="leaky_relu", slope=slope),
        LayerSpec(kind="linear", out_features=head_outputs(grid_size, boxes_per_cell, num_classes)),
    ]
    return layers


class DetectorConfig(BaseModel):
    """Architecture dimensions and post-processing thresholds of the detector"""

    model_config = ConfigDict(extra="forbid", populate_by_name=True)

    grid_size: int = Field(default=6, ge=1, alias="S")
    boxes_per_cell: int = Field(default=2, ge=1, alias="B")
    num_classes: int = Field(default=1, ge=1, alias="C")
    input_size: int = Field(default=DESK_SCALE_INPUT, ge=8)
    backbone: Optional[List[LayerSpec]] = None
    hidden_features: int = Field(default=512, ge=1)
    leaky_slope: float = Field(default=0.1, gt=0.0, lt=1.0)
    anchors: Optional[List[Tuple[float, float]]] = None
    score_threshold: float = Field(default=0.25, ge=0.0, le=1.0)
    nms_threshold: float = Field(default=0.45, ge=0.0, le=1.0)
    pad_value: int = Field(default=114, ge=0, le=255)

    @field_validator("anchors")
    @classmethod
    def _check_anchors(cls, value, info: ValidationInfo):
        if value is None:
            return value
        boxes_per_cell = info.data.get("boxes_per_cell")
        if boxes_per_cell is not None and len(value) != boxes_per_cell:
            raise ValueError(f"anchors must have B={boxes_per_cell} entries, got {len(value)}")
        for w, h in value:
            if not (0.0 < w <= 1.0 and 0.0 < h <= 1.0):
                raise ValueError(f"anchor ({w}, {h}) outside (0, 1]")
        return value

    @model_validator(mode="after")
    def _fill_backbone(self):
        if self.backbone is None:
            self.backbone = default_backbone(
                self.input_size, self.grid_size, self.boxes_per_cell,
                self.num_classes, self.hidden_features, self.leaky_slope,
            )
        return self

    @property
    def cell_depth(self) -> int:
        """Values per grid cell: B*5 + C"""
        return self.boxes_per_cell * 5 + self.num_classes

    @property
    def output_length(self) -> int:
        return head_outputs(self.grid_size, self.boxes_per_cell, self.num_classes)

    @property
    def anchor_mode(self) -> bool:
        return self.anchors is not None


class TrainConfig(BaseModel):
    """Optimizer and loss hyperparameters; with the seed they fix a run"""

    model_config = ConfigDict(extra="forbid")

    batch_size: int = Field(default=REFERENCE_BATCH_SIZE, ge=1)
    epochs: int = Field(default=REFERENCE_EPOCHS, ge=1)
    # lr = 0 is accepted as a frozen-weights dry run
    lr: float = Field(default=0.005, ge=0.0)
    momentum: float = Field(default=0.9, ge=0.0, lt=1.0)
    weight_decay: float = Field(default=5e-4, ge=0.0)
    seed: int = Field(default=0, ge=0)
    lambda_coord: float = Field(default=5.0, ge=0.0)
    lambda_noobj: float = Field(default=0.5, ge=0.0)
    augment: bool = False
    warmup_epochs: int = Field(default=3, ge=0)


Range = Tuple[float, float]


class SynthParams(BaseModel):
    """Synthetic scene generator parameters"""

    model_config = ConfigDict(extra="forbid")

    image_size: int = Field(default=96, ge=16)
    n_cells: Tuple[int, int] = (1, 3)
    n_distractors: Tuple[int, int] = (0, 2)
    cell_size: Range = (0.18, 0.34)
    background: Literal["flat", "gradient", "speckle", "mixed"] = "mixed"
    lighting: Range = (0.45, 1.15)
    occlusion_prob: float = Field(default=0.15, ge=0.0, le=1.0)
    blur_prob: float = Field(default=0.15, ge=0.0, le=1.0)
    reflection_prob: float = Field(default=0.3, ge=0.0, le=1.0)
    shadow_prob: float = Field(default=0.15, ge=0.0, le=1.0)
    overlap_prob: float = Field(default=0.0, ge=0.0, le=1.0)
    orient_prob: float = Field(default=0.0, ge=0.0, le=1.0)
    seed: int = Field(default=0, ge=0)

    @field_validator("n_cells", "n_distractors")
    @classmethod
    def _count_range(cls, value):
        lo, hi = value
        if lo < 0 or hi < lo:
            raise ValueError(f"count range {value} must satisfy 0 <= lo <= hi")
        return value

    @field_validator("cell_size")
    @classmethod
    def _unit_range(cls, value):
        lo, hi = value
        if not (0.0 < lo <= hi <= 1.0):
            raise ValueError(f"size range {value} must satisfy 0 < lo <= hi <= 1")
        return value

    @field_validator("lighting")
    @classmethod
    def _positive_range(cls, value):
        lo, hi = value
        if not (0.0 < lo <= hi):
            raise ValueError(f"lighting range {value} must satisfy 0 < lo <= hi")
        return value


AugmentKind = Literal[
    "crop", "rotation90", "shear", "grayscale", "hue", "saturation", "brightness",
    "exposure", "blur", "noise", "cutout", "hflip", "mosaic", "scale",
]

# Documented magnitude ranges (inclusive)
AUGMENT_RANGES: Dict[str, Range] = {
    "crop": (0.0, 0.5),         # fraction of each axis removed; kept window is 1 - m
    "rotation90": (1.0, 3.0),   # clockwise quarter turns
    "shear": (-20.0, 20.0),     # degrees
    "grayscale": (0.0, 1.0),    # unused
    "hue": (-45.0, 45.0),       # degrees
    "saturation": (-0.5, 0.5),  # factor 1 + m
    "brightness": (-0.4, 0.4),  # additive shift, fraction of full scale
    "exposure": (-0.5, 0.5),    # gamma 2 ** -m
    "blur": (0.0, 2.5),         # gaussian sigma in pixels
    "noise": (0.0, 0.1),        # fraction of pixels replaced
    "cutout": (0.0, 0.5),       # rectangle side, fraction of image side
    "hflip": (0.0, 1.0),        # unused
    "mosaic": (0.0, 1.0),       # unused; centre jitter comes from the seed
    "scale": (-0.5, 0.5),       # zoom factor 1 + m about the centre
}

GEOMETRIC_KINDS = frozenset({"crop", "rotation90", "shear", "hflip", "mosaic", "scale"})
PIXEL_KINDS = frozenset(AUGMENT_RANGES) - GEOMETRIC_KINDS


class AugmentOp(BaseModel):
    """One seeded augmentation step"""

    model_config = ConfigDict(extra="forbid", frozen=True)

    kind: AugmentKind
    magnitude: float = 0.0
    seed: int = Field(default=0, ge=0)
    axis: Literal["x", "y"] = "x"
    count: int = Field(default=1, ge=1, le=8)
    pad_value: int = Field(default=114, ge=0, le=255)

    @model_validator(mode="after")
    def _check_magnitude(self):
        lo, hi = AUGMENT_RANGES[self.kind]
        if not (lo <= self.magnitude <= hi):
            raise ValueError(f"{self.kind} magnitude {self.magnitude} outside [{lo}, {hi}]")
        if self.kind == "rotation90" and self.magnitude != int(self.magnitude):
            raise ValueError("rotation90 magnitude must be a whole number of quarter turns")
        return self

    @property
    def is_geometric(self) -> bool:
        return self.kind in GEOMETRIC_KINDS


class SplitConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    train_fraction: float = Field(default=REFERENCE_TRAIN_FRACTION, gt=0.0, lt=1.0)


class AugmentConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    ops_per_image: int = Field(default=2, ge=0)
    max_ops: int = Field(default=3, ge=1)


class EvalConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    iou_threshold: float = Field(default=0.5, gt=0.0, le=1.0)
    ap_score_floor: float = Field(default=0.001, ge=0.0, le=1.0)
    warmup_count: int = Field(default=5, ge=0)
    measure_latency: bool = False


class PathsConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    dataset_root: Optional[str] = None
    weights_in: Optional[str] = None
    weights_out: Optional[str] = None
    report_out: Optional[str] = None


class RunSettings(BaseModel):
    model_config = ConfigDict(extra="forbid")

    profile: Literal["desk", "full"] = "desk"
    n_images: int = Field(default=300, ge=2)
    # Fill DetectorConfig.anchors by k-means over the train split when none are given
    auto_anchors: bool = False


SECTIONS = {
    "detector": DetectorConfig,
    "train": TrainConfig,
    "synth": SynthParams,
    "split": SplitConfig,
    "augment": AugmentConfig,
    "evaluation": EvalConfig,
    "paths": PathsConfig,
    "run": RunSettings,
}


def _section_keys(model: type) -> Dict[str, str]:
    """Accepted JSON key -> field name"""
    keys = {}
    for name, info in model.model_fields.items():
        keys[name] = name
        if info.alias:
            keys[info.alias] = name
    return keys


class RunConfig(BaseModel):
    """Effective configuration of one CLI run"""

    model_config = ConfigDict(extra="forbid")

    detector: DetectorConfig = Field(default_factory=DetectorConfig)
    train: TrainConfig = Field(default_factory=TrainConfig)
    synth: SynthParams = Field(default_factory=SynthParams)
    split: SplitConfig = Field(default_factory=SplitConfig)
    augment: AugmentConfig = Field(default_factory=AugmentConfig)
    evaluation: EvalConfig = Field(default_factory=EvalConfig)
    paths: PathsConfig = Field(default_factory=PathsConfig)
    run: RunSettings = Field(default_factory=RunSettings)

    @property
    def seed(self) -> int:
        return self.train.seed

    def effective(self) -> Dict[str, Any]:
        """Flat, key-sorted view of every value (embedded in artifacts)"""
        flat: Dict[str, Any] = {}
        for section in SECTIONS:
            flat.update(getattr(self, section).model_dump(mode="json"))
        return dict(sorted(flat.items()))

    def with_seed(self, seed: int) -> "RunConfig":
        """Copy with the run seed replaced in every section that carries one"""
        return RunConfig(
            **{name: getattr(self, name) for name in SECTIONS if name not in ("train", "synth")},
            train=self.train.model_copy(update={"seed": seed}),
            synth=self.synth.model_copy(update={"seed": seed}),
        )


def parse_config(text: str) -> RunConfig:
    """
    Parse and validate a flat JSON run configuration

    Args:
        text: JSON object text; missing keys take their defaults

    Returns:
        Fully validated RunConfig

    Raises:
        ConfigError: Malformed JSON, unknown key, type mismatch or
            out-of-range value (names the offending key)
    """
    try:
        data = json.loads(text) if text.strip() else {}
    except json.JSONDecodeError as e:
        raise ConfigError("<document>", f"invalid JSON: {e}")
    if not isinstance(data, dict):
        raise ConfigError("<document>", "top level must be a JSON object")

    routed: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    lookup = {name: _section_keys(model) for name, model in SECTIONS.items()}
    for key, value in data.items():
        owners = [name for name, keys in lookup.items() if key in keys]
        if not owners:
            raise ConfigError(key, "unknown key")
        for owner in owners:
            routed[owner][key] = value

    # The full-scale profile changes the default input size only
    if routed["run"].get("profile") == "full" and "input_size" not in routed["detector"]:
        routed["detector"]["input_size"] = FULL_SCALE_INPUT

    # Strict JSON validation: "100" is not an int and "yes" is not a bool,
    # while arrays still fill tuple fields
    sections = {}
    for name, model in SECTIONS.items():
        try:
            sections[name] = model.model_validate_json(json.dumps(routed[name]), strict=True)
        except ValidationError as e:
            error = e.errors()[0]
            key = str(error["loc"][0]) if error["loc"] else name
            raise ConfigError(key, error["msg"])
    return RunConfig(**sections)
