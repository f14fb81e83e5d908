import hashlib
import json
from dataclasses import dataclass, field
from typing import Dict, List, Tuple

from loguru import logger

from effbench.blocks.block import BlockKind
from effbench.blocks.utils import block_registry
from effbench.blocks.vanilla import VanillaBlock
from effbench.engine import graph
from effbench.engine.autograd import ComputeGraph
from effbench.engine.graph import INPUT, LayerNode, link, output_shape
from effbench.engine.tensor import Rng, Shape4
from effbench.error_handling import EffbenchError, SpecError, TensorError


@dataclass
class StageSpec:
    kind: BlockKind
    out_channels: int

    def to_dict(self) -> dict:
        return dict(kind=self.kind.to_dict(), out_channels=self.out_channels)

    @classmethod
    def from_dict(cls, data: dict) -> "StageSpec":
        kind = data["kind"]
        return cls(BlockKind(kind["name"], dict(kind.get("options", {}))), int(data["out_channels"]))


@dataclass
class HeadSpec:
    dropout_p: float = 0.0
    fully_connected: bool = True

    def to_dict(self) -> dict:
        return dict(dropout_p=self.dropout_p, fully_connected=self.fully_connected)


@dataclass
class ModelSpec:
    input_shape: Tuple[int, int, int]
    class_count: int
    stages: List[StageSpec] = field(default_factory=list)
    head: HeadSpec = field(default_factory=HeadSpec)
    name: str = "model"

    @property
    def batch_shape(self) -> Shape4:
        """per-sample shape with batch 1"""
        return Shape4.of((1,) + tuple(self.input_shape))

    def to_dict(self) -> dict:
        return dict(
            name=self.name,
            input_shape=list(self.input_shape),
            class_count=self.class_count,
            stages=[stage.to_dict() for stage in self.stages],
            head=self.head.to_dict(),
        )

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        return cls(
            input_shape=tuple(data["input_shape"]),
            class_count=int(data["class_count"]),
            stages=[StageSpec.from_dict(stage) for stage in data["stages"]],
            head=HeadSpec(**data.get("head", {})),
            name=data.get("name", "model"),
        )

    def spec_hash(self) -> str:
        """sha256 of the canonical JSON form, name excluded"""
        data = self.to_dict()
        del data["name"]
        canonical = json.dumps(data, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class ModelGraph:
    nodes: List[LayerNode]
    input_shape: Shape4
    shapes: Dict[str, Shape4]
    stage_of: Dict[str, int]


def stage_block(index: int, stage: StageSpec, in_channels: int, source: str):
    options = dict(stage.kind.options)
    if stage.kind.name not in block_registry:
        raise SpecError(
            f"Unknown block kind {stage.kind.name!r} (known: {', '.join(sorted(block_registry))})",
            stage=index,
        )
    block_cls = block_registry[stage.kind.name]
    mode = options.get("first_layer_mode", block_cls.defaults.get("first_layer_mode"))
    if mode == "vanilla_conv_mp":
        if index == 0:
            return VanillaBlock(f"stage{index}", in_channels, stage.out_channels, source=source)
        if "first_layer_mode" in options:
            raise SpecError("first_layer_mode only applies to the first stage", stage=index)
    return block_cls(f"stage{index}", in_channels, stage.out_channels, source=source, **options)


def assemble(spec: ModelSpec) -> ModelGraph:
    """Build the node list for ``spec`` and check every stage boundary."""
    if not spec.stages:
        raise SpecError("A model needs at least one stage")
    if spec.class_count < 1:
        raise SpecError(f"classes must be >= 1, got {spec.class_count}")
    try:
        input_shape = spec.batch_shape
    except TensorError as e:
        raise SpecError(f"Invalid input shape: {e.description}")
    if not 0.0 <= spec.head.dropout_p < 1.0:
        raise SpecError(f"dropout must lie in [0, 1), got {spec.head.dropout_p}")

    nodes, stage_of = [], {}
    shapes = {INPUT: input_shape}
    channels, source = input_shape.channels, INPUT
    for index, stage in enumerate(spec.stages):
        if index and stage.out_channels < channels:
            logger.warning(
                f"stage {index}: width drops from {channels} to {stage.out_channels} channels"
            )
        try:
            block = stage_block(index, stage, channels, source).build()
            stage_nodes = link(block.nodes, source)
            _infer(stage_nodes, shapes)
        except SpecError as e:
            if e.stage is not None:
                raise
            raise SpecError(e.description, stage=index)
        except EffbenchError as e:
            raise SpecError(e.description, stage=index)
        nodes += stage_nodes
        stage_of.update({node.name: index for node in stage_nodes})
        channels, source = block.out_channels, stage_nodes[-1].name

    head = []
    if spec.head.dropout_p:
        head.append(graph.dropout("head.dropout", spec.head.dropout_p))
    if spec.head.fully_connected:
        head.append(graph.fully_connected("head.fc", shapes[source].floats_out, spec.class_count))
    try:
        head = link(head, source)
        _infer(head, shapes)
    except EffbenchError as e:
        raise SpecError(f"head: {e.description}")
    nodes += head
    logger.debug(f"assembled {spec.name}: {len(nodes)} nodes over {len(spec.stages)} stages")
    return ModelGraph(nodes, input_shape, shapes, stage_of)


def _infer(nodes: List[LayerNode], shapes: Dict[str, Shape4]):
    for node in nodes:
        try:
            shapes[node.name] = output_shape(node, [shapes[name] for name in node.inputs])
        except TensorError as e:
            raise SpecError(f"{node.name}: {e.description}")


def build_model(spec: ModelSpec, seed: int = 0) -> ComputeGraph:
    model = assemble(spec)
    return ComputeGraph.initialize(model.nodes, model.input_shape, Rng(seed))
