from effbench.blocks.block import Block
from effbench.blocks.utils import register_block
from effbench.error_handling import SpecError


@register_block
class MobileNetBlock(Block):
    """depthwise 3 x 3 with stride, then pointwise 1 x 1"""

    kind = "mobilenet"
    defaults = dict(stride=2, dw_activation="relu")

    def validate(self):
        if self.options["stride"] not in (1, 2):
            raise SpecError(f"stride must be 1 or 2, got {self.options['stride']}")

    def layers(self):
        s = self.options["stride"]
        nodes = self.conv_unit(
            "dw3x3",
            self.in_channels,
            self.in_channels,
            (3, 3),
            stride=(s, s),
            groups=self.in_channels,
            activation=self.options["dw_activation"],
            label="dw 3x3 + stride" if s > 1 else "dw 3x3",
        )
        nodes += self.conv_unit(
            "pw", self.in_channels, self.out_channels, (1, 1), label=f"1x1x{self.out_channels}"
        )
        return nodes
