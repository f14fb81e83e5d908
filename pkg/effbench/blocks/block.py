from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Dict, List

from effbench.consts import LEAKY_ALPHA
from effbench.engine import graph
from effbench.engine.graph import LayerNode
from effbench.engine.ops import ACTIVATIONS
from effbench.error_handling import SpecError


@dataclass(frozen=True)
class BlockKind:
    name: str
    options: Dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return dict(name=self.name, options=dict(sorted(self.options.items())))


@dataclass
class BlockGraph:
    nodes: List[LayerNode]
    out_channels: int

    @property
    def names(self) -> List[str]:
        return [node.name for node in self.nodes]


class Block(ABC):
    """One subsampling stage.

    Subclasses set ``kind`` and ``defaults``; any option outside ``defaults``
    is rejected.
    """

    kind = None
    defaults: Dict = {}

    def __init__(
        self, prefix: str, in_channels: int, out_channels: int, source: str = graph.INPUT, **options
    ):
        unknown = sorted(set(options) - set(self.defaults))
        if unknown:
            raise SpecError(
                f"Unknown option(s) {', '.join(unknown)} for {self.kind} "
                f"(allowed: {', '.join(sorted(self.defaults)) or 'none'})"
            )
        if in_channels < 1 or out_channels < 1:
            raise SpecError(f"Channel counts must be >= 1, got {in_channels} -> {out_channels}")
        self.prefix = prefix
        # name of the value feeding the block
        self.source = source
        self.in_channels = in_channels
        self.out_channels = out_channels
        self.options = {**self.defaults, **options}
        for name in ("dw_activation", "pw_activation"):
            if name in self.options and self.options[name] not in ACTIVATIONS:
                raise SpecError(f"{name} must be one of {ACTIVATIONS}, got {self.options[name]!r}")
        self.validate()

    def validate(self):
        pass

    @abstractmethod
    def layers(self) -> List[LayerNode]:
        """the block's nodes in execution order"""

    def build(self) -> BlockGraph:
        return BlockGraph(self.layers(), self.out_channels)

    def name(self, part: str) -> str:
        return f"{self.prefix}.{part}"

    def conv_unit(
        self,
        part,
        in_channels,
        out_channels,
        kernel,
        stride=(1, 1),
        groups=1,
        activation="relu",
        label=None,
        alpha=LEAKY_ALPHA,
    ) -> List[LayerNode]:
        """conv (no bias), batch norm, then the activation unless it is linear"""
        nodes = [
            graph.conv(
                self.name(part), in_channels, out_channels, kernel, stride, groups=groups, label=label
            ),
            graph.batch_norm(self.name(f"{part}.bn"), out_channels),
        ]
        if activation != "linear":
            nodes.append(graph.activation(self.name(f"{part}.{activation}"), activation, alpha))
        return nodes

    def __repr__(self):
        return f"<{type(self).__name__} {self.prefix} {self.in_channels}->{self.out_channels}>"
