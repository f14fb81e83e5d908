from effbench.blocks.block import Block
from effbench.blocks.utils import register_block
from effbench.consts import LEAKY_ALPHA
from effbench.engine import graph
from effbench.error_handling import SpecError


@register_block
class MobileNetV2Block(Block):
    """Inverted residual: expand 1 x 1, depthwise 3 x 3, project 1 x 1.

    ``pooling`` swaps the strided depthwise layer for a stride 1 depthwise
    layer plus 2 x 2 max pooling; ``linear_tail`` leaves the projection
    without activation, otherwise it gets a leaky ReLU. A shortcut is added
    when the block keeps both shape and width.
    """

    kind = "mobilenet_v2"
    defaults = dict(
        expansion_rate=6.0,
        stride=2,
        linear_tail=True,
        pooling=False,
        leaky_alpha=LEAKY_ALPHA,
        dw_activation="relu",
    )

    @property
    def expanded(self) -> int:
        return int(self.in_channels * self.options["expansion_rate"])

    @property
    def residual(self) -> bool:
        return (
            self.options["stride"] == 1
            and not self.options["pooling"]
            and self.in_channels == self.out_channels
        )

    def validate(self):
        if self.options["expansion_rate"] < 1:
            raise SpecError(f"expansion_rate must be >= 1, got {self.options['expansion_rate']}")
        if self.options["stride"] not in (1, 2):
            raise SpecError(f"stride must be 1 or 2, got {self.options['stride']}")

    def layers(self):
        wide, alpha = self.expanded, self.options["leaky_alpha"]
        pooling = self.options["pooling"]
        s = 1 if pooling else self.options["stride"]
        nodes = self.conv_unit("expand", self.in_channels, wide, (1, 1), label=f"1x1x{wide}")
        dw_label = "dw 3x3 + mp" if pooling else ("dw 3x3 + stride" if s > 1 else "dw 3x3")
        nodes += self.conv_unit(
            "dw3x3",
            wide,
            wide,
            (3, 3),
            stride=(s, s),
            groups=wide,
            activation=self.options["dw_activation"],
            alpha=alpha,
            label=dw_label,
        )
        if pooling:
            nodes.append(graph.max_pool(self.name("mp"), (2, 2), (2, 2)))
        tail = "linear" if self.options["linear_tail"] else "leaky_relu"
        nodes += self.conv_unit(
            "project",
            wide,
            self.out_channels,
            (1, 1),
            activation=tail,
            alpha=alpha,
            label=f"1x1x{self.out_channels}" + (" linear" if tail == "linear" else ""),
        )
        if self.residual:
            nodes.append(graph.add(self.name("add"), self.source, nodes[-1].name))
        return nodes


@register_block
class MobImpBlock(MobileNetV2Block):
    """mobilenet_v2 with pooling subsampling and a leaky ReLU tail"""

    kind = "mob_imp"
    defaults = dict(MobileNetV2Block.defaults, linear_tail=False, pooling=True)
