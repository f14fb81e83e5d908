from effbench.blocks.block import Block
from effbench.blocks.utils import register_block
from effbench.engine import graph
from effbench.error_handling import SpecError


@register_block
class VanillaBlock(Block):
    """k x k conv, batch norm, ReLU, then 2 x 2 max pooling"""

    kind = "vanilla"
    defaults = dict(kernel=3, pooling=True)

    def validate(self):
        if self.options["kernel"] < 1:
            raise SpecError(f"kernel must be >= 1, got {self.options['kernel']}")

    def layers(self):
        k = self.options["kernel"]
        label = f"{k}x{k}x{self.out_channels}"
        if self.options["pooling"]:
            label += " + mp"
        nodes = self.conv_unit("conv", self.in_channels, self.out_channels, (k, k), label=label)
        if self.options["pooling"]:
            nodes.append(graph.max_pool(self.name("mp"), (2, 2), (2, 2)))
        return nodes
