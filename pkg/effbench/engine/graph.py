"""Declarative layer nodes and static shape inference.

A ``LayerNode`` only describes an op: kind, hyperparameters and which values
feed it. Nothing here allocates parameters, so the same node lists serve both
execution (``autograd.ComputeGraph``) and static cost analysis.
"""
import dataclasses
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

from effbench.consts import BN_EPSILON, BN_MOMENTUM, LEAKY_ALPHA
from effbench.engine import ops
from effbench.engine.tensor import Shape4
from effbench.error_handling import ShapeError

INPUT = "input"
COST_KINDS = ("conv2d", "fully_connected")


@dataclass(frozen=True)
class LayerNode:
    name: str
    kind: str
    attrs: Dict = field(default_factory=dict)
    inputs: Tuple[str, ...] = ()
    label: Optional[str] = None

    def conv_params(self, weights=None, bias=None) -> ops.ConvParams:
        kernel_h, kernel_w = self.attrs["kernel"]
        stride_h, stride_w = self.attrs.get("stride", (1, 1))
        return ops.ConvParams(
            kernel_h=kernel_h,
            kernel_w=kernel_w,
            in_channels=self.attrs["in_channels"],
            out_channels=self.attrs["out_channels"],
            stride_h=stride_h,
            stride_w=stride_w,
            padding=self.attrs.get("padding", "same"),
            groups=self.attrs.get("groups", 1),
            weights=weights,
            bias=bias,
        )

    def pool_params(self) -> ops.PoolParams:
        kernel_h, kernel_w = self.attrs["kernel"]
        stride_h, stride_w = self.attrs["stride"]
        return ops.PoolParams(kernel_h, kernel_w, stride_h, stride_w)

    def parameter_slots(self) -> Dict[str, Tuple[Tuple[int, ...], str, int]]:
        """short name -> (shape, initializer, fan_in)"""
        if self.kind == "conv2d":
            p = self.conv_params()
            fan_in = p.weight_shape[1] * p.kernel_h * p.kernel_w
            slots = {"weight": (p.weight_shape, "he_uniform", fan_in)}
            if self.attrs.get("bias", False):
                slots["bias"] = ((p.out_channels,), "zeros", fan_in)
            return slots
        if self.kind == "batch_norm":
            channels = self.attrs["channels"]
            return {
                "gamma": ((channels,), "ones", channels),
                "beta": ((channels,), "zeros", channels),
            }
        if self.kind == "fully_connected":
            in_f, out_f = self.attrs["in_features"], self.attrs["out_features"]
            slots = {"weight": ((in_f, out_f), "he_uniform", in_f)}
            if self.attrs.get("bias", True):
                slots["bias"] = ((out_f,), "zeros", in_f)
            return slots
        return {}

    def state_slots(self) -> Dict[str, Tuple[Tuple[int, ...], str]]:
        if self.kind == "batch_norm":
            channels = self.attrs["channels"]
            return {
                "running_mean": ((channels,), "zeros"),
                "running_var": ((channels,), "ones"),
            }
        return {}

    def parameter_count(self) -> int:
        total = 0
        for shape, _, _ in self.parameter_slots().values():
            count = 1
            for extent in shape:
                count *= extent
            total += count
        return total


def conv(
    name,
    in_channels,
    out_channels,
    kernel,
    stride=(1, 1),
    padding="same",
    groups=1,
    bias=False,
    label=None,
) -> LayerNode:
    attrs = dict(
        kernel=tuple(kernel),
        in_channels=in_channels,
        out_channels=out_channels,
        stride=tuple(stride),
        padding=padding,
        groups=groups,
        bias=bias,
    )
    return LayerNode(name, "conv2d", attrs, label=label)


def batch_norm(name, channels, epsilon=BN_EPSILON, momentum=BN_MOMENTUM) -> LayerNode:
    return LayerNode(
        name, "batch_norm", dict(channels=channels, epsilon=epsilon, momentum=momentum)
    )


def activation(name, kind="relu", alpha=LEAKY_ALPHA) -> LayerNode:
    if kind not in ops.ACTIVATIONS:
        raise ShapeError(f"Unknown activation {kind!r}, expected one of {ops.ACTIVATIONS}")
    return LayerNode(name, "activation", dict(kind=kind, alpha=alpha))


def max_pool(name, kernel, stride) -> LayerNode:
    return LayerNode(name, "max_pool2d", dict(kernel=tuple(kernel), stride=tuple(stride)))


def channel_shuffle(name, groups) -> LayerNode:
    return LayerNode(name, "channel_shuffle", dict(groups=groups))


def dropout(name, p_drop) -> LayerNode:
    return LayerNode(name, "dropout", dict(p=p_drop))


def fully_connected(name, in_features, out_features, bias=True, label="Fully Connected"):
    attrs = dict(in_features=in_features, out_features=out_features, bias=bias)
    return LayerNode(name, "fully_connected", attrs, label=label)


def add(name, first, second) -> LayerNode:
    return LayerNode(name, "add", {}, inputs=(first, second))


def link(nodes: Sequence[LayerNode], source: str = INPUT) -> List[LayerNode]:
    """Fill empty ``inputs`` with the previous node's output."""
    linked = []
    previous = source
    seen = {source}
    for node in nodes:
        if node.name in seen:
            raise ShapeError(f"Duplicate node name {node.name!r}")
        if not node.inputs:
            node = dataclasses.replace(node, inputs=(previous,))
        missing = [name for name in node.inputs if name not in seen]
        if missing:
            raise ShapeError(f"Node {node.name!r} reads {missing} before they are produced")
        linked.append(node)
        seen.add(node.name)
        previous = node.name
    return linked


def output_shape(node: LayerNode, in_shapes: Sequence[Shape4]) -> Shape4:
    shape = in_shapes[0]
    kind = node.kind
    if kind == "conv2d":
        return Shape4(*ops.conv_output_shape(shape, node.conv_params()))
    if kind == "max_pool2d":
        return Shape4(*ops.pool_output_shape(shape, node.pool_params()))
    if kind == "batch_norm":
        if shape.channels != node.attrs["channels"]:
            raise ShapeError(
                f"{node.name}: {shape.channels} channels into batch norm over {node.attrs['channels']}"
            )
        return shape
    if kind == "channel_shuffle":
        if shape.channels % node.attrs["groups"]:
            raise ShapeError(
                f"{node.name}: {shape.channels} channels cannot be shuffled in {node.attrs['groups']} groups"
            )
        return shape
    if kind in ("activation", "dropout"):
        return shape
    if kind == "fully_connected":
        if shape.floats_out != node.attrs["in_features"]:
            raise ShapeError(
                f"{node.name}: {shape.floats_out} values into a layer expecting {node.attrs['in_features']}"
            )
        return Shape4(shape.batch, node.attrs["out_features"], 1, 1)
    if kind == "add":
        if any(other != shape for other in in_shapes[1:]):
            raise ShapeError(f"{node.name}: cannot add shapes {[tuple(s) for s in in_shapes]}")
        return shape
    raise ShapeError(f"Unknown node kind {kind!r}")


def infer_shapes(nodes: Sequence[LayerNode], input_shape: Shape4) -> Dict[str, Shape4]:
    shapes = {INPUT: input_shape}
    for node in nodes:
        try:
            shapes[node.name] = output_shape(node, [shapes[name] for name in node.inputs])
        except ShapeError as e:
            if node.name in e.description:
                raise
            raise ShapeError(f"{node.name}: {e.description}")
    return shapes


def multiply_count(node: LayerNode, in_shape: Shape4, out_shape: Shape4) -> int:
    """multiplies per sample: output positions * (kh * kw * in / groups) * out"""
    if node.kind == "conv2d":
        p = node.conv_params()
        per_output = p.kernel_h * p.kernel_w * (p.in_channels // p.groups)
        return out_shape.height * out_shape.width * per_output * p.out_channels
    if node.kind == "fully_connected":
        return node.attrs["in_features"] * node.attrs["out_features"]
    return 0


def bias_adds(node: LayerNode, out_shape: Shape4) -> int:
    if node.kind in COST_KINDS and "bias" in node.parameter_slots():
        return out_shape.floats_out
    return 0
