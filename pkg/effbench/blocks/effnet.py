"""EffNet blocks.

Both variants split the 3 x 3 spatial filter into depthwise 1 x 3 and 3 x 1
convolutions and the 2 x 2 subsampling into a 1 x 2 max pool after the first
depthwise layer plus a 2 x 1 convolution with stride (2, 1) that also projects
to the output width.
"""
from effbench.blocks.block import Block
from effbench.blocks.utils import bottleneck_width, register_block
from effbench.consts import (
    EFFNET_BOTTLENECK_FACTOR,
    EFFNET_V2_DEPTH_MULTIPLIER,
    LEAKY_ALPHA,
    MINIMUM_BOTTLENECK_CHANNELS,
)
from effbench.engine import graph
from effbench.error_handling import SpecError

FIRST_LAYER_MODES = ("effnet_block", "vanilla_conv_mp")


class _EffNetBase(Block):
    def validate(self):
        if self.options["first_layer_mode"] not in FIRST_LAYER_MODES:
            raise SpecError(
                f"first_layer_mode must be one of {FIRST_LAYER_MODES}, "
                f"got {self.options['first_layer_mode']!r}"
            )

    def bottleneck(self) -> int:
        raise NotImplementedError

    def depth_multiplier(self) -> int:
        raise NotImplementedError

    def layers(self):
        alpha = self.options["leaky_alpha"]
        pw, dw = self.options["pw_activation"], self.options["dw_activation"]
        width = self.bottleneck()
        spread = width * self.depth_multiplier()
        nodes = self.conv_unit(
            "pw", self.in_channels, width, (1, 1), activation=pw, alpha=alpha, label=f"1x1x{width}"
        )
        nodes += self.conv_unit(
            "dw1x3",
            width,
            spread,
            (1, 3),
            groups=width,
            activation=dw,
            alpha=alpha,
            label="dw 1x3 + 1d mp",
        )
        nodes.append(graph.max_pool(self.name("mp1x2"), (1, 2), (1, 2)))
        nodes += self.conv_unit(
            "dw3x1", spread, spread, (3, 1), groups=spread, activation=dw, alpha=alpha, label="dw 3x1"
        )
        nodes += self.conv_unit(
            "pw2x1",
            spread,
            self.out_channels,
            (2, 1),
            stride=(2, 1),
            activation=pw,
            alpha=alpha,
            label=f"2x1x{self.out_channels} + 1d stride",
        )
        return nodes


@register_block
class EffNetBlock(_EffNetBase):
    kind = "effnet"
    defaults = dict(
        depth_multiplier=1,
        leaky_alpha=LEAKY_ALPHA,
        pw_activation="relu",
        dw_activation="relu",
        first_layer_mode="effnet_block",
    )

    def validate(self):
        super().validate()
        if self.options["depth_multiplier"] < 1:
            raise SpecError(f"depth_multiplier must be >= 1, got {self.options['depth_multiplier']}")

    def bottleneck(self) -> int:
        return bottleneck_width(
            self.out_channels, EFFNET_BOTTLENECK_FACTOR, MINIMUM_BOTTLENECK_CHANNELS
        )

    def depth_multiplier(self) -> int:
        return self.options["depth_multiplier"]


@register_block
class EffNetV2Block(_EffNetBase):
    """Bottleneck sized from the input width by the expansion rate, depth
    multiplier 2 on the first depthwise layer, leaky ReLU on the pointwise layers."""

    kind = "effnet_v2"
    defaults = dict(
        expansion_rate=2.0,
        leaky_alpha=LEAKY_ALPHA,
        pw_activation="leaky_relu",
        dw_activation="relu",
        first_layer_mode="vanilla_conv_mp",
    )

    def validate(self):
        super().validate()
        if self.options["expansion_rate"] <= 0:
            raise SpecError(f"expansion_rate must be > 0, got {self.options['expansion_rate']}")
        if self.bottleneck() < 1:
            raise SpecError(
                f"expansion_rate {self.options['expansion_rate']} leaves no bottleneck "
                f"channels for {self.in_channels} inputs"
            )

    def bottleneck(self) -> int:
        return int(self.in_channels * self.options["expansion_rate"] // 2)

    def depth_multiplier(self) -> int:
        return EFFNET_V2_DEPTH_MULTIPLIER
