"""Model spec files.

Line oriented ``key = value`` text, ``#`` starts a comment::

    name = cifar10_effnet
    input = 3x32x32
    classes = 10
    stage = effnet 64
    stage = effnet 128 depth_multiplier=1
    dropout = 0.5
    lr = 0.001
    seeds = 1,2,3,4,5
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional

from effbench.blocks import block_registry
from effbench.blocks.block import BlockKind
from effbench.blocks.model import HeadSpec, ModelSpec, StageSpec
from effbench.engine.training import TrainConfig
from effbench.error_handling import SpecError


def _bool(value: str) -> bool:
    lowered = value.lower()
    if lowered not in ("true", "false"):
        raise ValueError(f"expected true or false, got {value!r}")
    return lowered == "true"


def _positive_int(value: str) -> int:
    number = int(value)
    if number < 1:
        raise ValueError(f"expected a positive integer, got {value}")
    return number


def _shape(value: str):
    extents = tuple(int(extent) for extent in value.lower().split("x"))
    if len(extents) != 3 or min(extents) < 1:
        raise ValueError(f"expected CxHxW with positive extents, got {value!r}")
    return extents


def parse_seeds(value: str):
    seeds = tuple(int(seed) for seed in value.split(",") if seed.strip())
    if not seeds or min(seeds) < 0:
        raise ValueError(f"expected comma separated non-negative seeds, got {value!r}")
    return seeds


OPTION_TYPES = dict(
    expansion_rate=float,
    groups=int,
    leaky_alpha=float,
    first_layer_mode=str,
    depth_multiplier=int,
    stride=int,
    linear_tail=_bool,
    pooling=_bool,
    dw_activation=str,
    pw_activation=str,
    kernel=int,
)

MODEL_KEYS = dict(name=str, input=_shape, classes=_positive_int, dropout=float, fc=_bool)
TRAIN_KEYS = dict(
    lr=float,
    beta1=float,
    beta2=float,
    eps=float,
    batch=_positive_int,
    epochs=_positive_int,
    steps=_positive_int,
    seeds=parse_seeds,
)
TRAIN_FIELDS = dict(batch="batch_size")


@dataclass
class SpecFile:
    model: ModelSpec
    train: TrainConfig = field(default_factory=TrainConfig)
    source: Optional[str] = None


def parse_stage(value: str, line: int) -> StageSpec:
    words = value.split()
    if len(words) < 2:
        raise SpecError(f"stage needs '<kind> <out_channels> [option=value ...]', got {value!r}", line=line)
    kind, out, *options = words
    if kind not in block_registry:
        raise SpecError(
            f"unknown block kind {kind!r} (known: {', '.join(sorted(block_registry))})", line=line
        )
    try:
        out_channels = _positive_int(out)
    except ValueError as e:
        raise SpecError(f"stage width: {e}", line=line)
    parsed = {}
    for option in options:
        name, sep, raw = option.partition("=")
        if not sep or not raw:
            raise SpecError(f"stage option {option!r} is not name=value", line=line)
        if name not in OPTION_TYPES or name not in block_registry[kind].defaults:
            allowed = ", ".join(sorted(block_registry[kind].defaults)) or "none"
            raise SpecError(f"unknown option {name!r} for {kind} (allowed: {allowed})", line=line)
        if name in parsed:
            raise SpecError(f"option {name!r} given twice", line=line)
        try:
            parsed[name] = OPTION_TYPES[name](raw)
        except ValueError as e:
            raise SpecError(f"option {name}: {e}", line=line)
    return StageSpec(BlockKind(kind, parsed), out_channels)


def parse(text: str, source: Optional[str] = None) -> SpecFile:
    values, stages = {}, []
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = (part.strip() for part in line.partition("="))
        if not sep:
            raise SpecError(f"expected 'key = value', got {line!r}", line=number)
        if key == "stage":
            stages.append(parse_stage(value, number))
            continue
        converter = MODEL_KEYS.get(key) or TRAIN_KEYS.get(key)
        if converter is None:
            raise SpecError(f"unknown key {key!r}", line=number)
        if key in values:
            raise SpecError(f"key {key!r} given twice", line=number)
        try:
            values[key] = converter(value)
        except ValueError as e:
            raise SpecError(f"{key}: {e}", line=number)

    missing = [key for key in ("input", "classes") if key not in values]
    if missing:
        raise SpecError(f"missing required key(s): {', '.join(missing)}")
    if not stages:
        raise SpecError("at least one stage is required")
    dropout = values.get("dropout", 0.0)
    if not 0.0 <= dropout < 1.0:
        raise SpecError(f"dropout must lie in [0, 1), got {dropout}")
    model = ModelSpec(
        input_shape=values["input"],
        class_count=values["classes"],
        stages=stages,
        head=HeadSpec(dropout_p=dropout, fully_connected=values.get("fc", True)),
        name=values.get("name", Path(source).stem if source else "model"),
    )
    train = TrainConfig(
        **{TRAIN_FIELDS.get(key, key): value for key, value in values.items() if key in TRAIN_KEYS}
    )
    return SpecFile(model, train, source)


def load(path) -> SpecFile:
    path = Path(path)
    if not path.is_file():
        raise SpecError(f"spec file {path} does not exist")
    return parse(path.read_text(), str(path))


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def dump(spec_file: SpecFile) -> str:
    model, train = spec_file.model, spec_file.train
    lines = [
        f"name = {model.name}",
        f"input = {'x'.join(map(str, model.input_shape))}",
        f"classes = {model.class_count}",
    ]
    for stage in model.stages:
        options = "".join(f" {k}={_format(v)}" for k, v in sorted(stage.kind.options.items()))
        lines.append(f"stage = {stage.kind.name} {stage.out_channels}{options}")
    if model.head.dropout_p:
        lines.append(f"dropout = {model.head.dropout_p}")
    if not model.head.fully_connected:
        lines.append("fc = false")
    lines += [
        f"lr = {train.lr}",
        f"beta1 = {train.beta1}",
        f"beta2 = {train.beta2}",
        f"eps = {train.eps}",
        f"batch = {train.batch_size}",
        f"epochs = {train.epochs}",
    ]
    if train.steps is not None:
        lines.append(f"steps = {train.steps}")
    lines.append(f"seeds = {','.join(map(str, train.seeds))}")
    return "\n".join(lines) + "\n"


def bundled_specs() -> List[Path]:
    return sorted((Path(__file__).parent / "specs").glob("*.spec"))


def bundled(name: str) -> Path:
    path = Path(__file__).parent / "specs" / f"{name}.spec"
    if not path.is_file():
        raise SpecError(f"no bundled spec named {name!r}")
    return path
