from effbench.blocks.block import Block
from effbench.blocks.utils import bottleneck_width, register_block
from effbench.consts import (
    MINIMUM_BOTTLENECK_CHANNELS,
    SHUFFLENET_BOTTLENECK_FACTOR,
    SHUFFLENET_GROUPS,
)
from effbench.engine import graph
from effbench.error_handling import SpecError


@register_block
class ShuffleNetBlock(Block):
    """grouped 1 x 1, channel shuffle, depthwise 3 x 3 stride 2, grouped 1 x 1.

    Sequential only: the strided unit's average-pool shortcut is left out.
    """

    kind = "shufflenet"
    defaults = dict(groups=SHUFFLENET_GROUPS, dw_activation="relu")

    @property
    def mid_channels(self) -> int:
        return bottleneck_width(
            self.out_channels, SHUFFLENET_BOTTLENECK_FACTOR, MINIMUM_BOTTLENECK_CHANNELS
        )

    def validate(self):
        g = self.options["groups"]
        if g < 1:
            raise SpecError(f"groups must be >= 1, got {g}")
        widths = dict(input=self.in_channels, bottleneck=self.mid_channels, output=self.out_channels)
        for what, width in widths.items():
            if width % g:
                raise SpecError(f"{what} width {width} is not divisible by groups={g}")

    def layers(self):
        g, mid = self.options["groups"], self.mid_channels
        nodes = self.conv_unit(
            "gc1", self.in_channels, mid, (1, 1), groups=g, label=f"gc{g} 1x1x{mid}"
        )
        nodes.append(graph.channel_shuffle(self.name("shuffle"), g))
        nodes += self.conv_unit(
            "dw3x3",
            mid,
            mid,
            (3, 3),
            stride=(2, 2),
            groups=mid,
            activation=self.options["dw_activation"],
            label="dw 3x3 + stride",
        )
        nodes += self.conv_unit(
            "gc2", mid, self.out_channels, (1, 1), groups=g, label=f"gc{g} 1x1x{self.out_channels}"
        )
        return nodes
