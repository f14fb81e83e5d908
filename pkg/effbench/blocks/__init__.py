from . import effnet, mobilenet, mobilenet_v2, shufflenet, vanilla
from .block import Block, BlockGraph, BlockKind
from .model import HeadSpec, ModelGraph, ModelSpec, StageSpec, assemble, build_model
from .utils import block_registry, register_block


def effnet_block(in_ch, out_ch, prefix="effnet", **opts) -> BlockGraph:
    return effnet.EffNetBlock(prefix, in_ch, out_ch, **opts).build()


def effnet_v2_block(in_ch, out_ch, expansion_rate, prefix="effnet_v2", **opts) -> BlockGraph:
    return effnet.EffNetV2Block(prefix, in_ch, out_ch, expansion_rate=expansion_rate, **opts).build()


def mobilenet_block(in_ch, out_ch, stride=2, prefix="mobilenet", **opts) -> BlockGraph:
    return mobilenet.MobileNetBlock(prefix, in_ch, out_ch, stride=stride, **opts).build()


def shufflenet_block(in_ch, out_ch, groups, prefix="shufflenet", **opts) -> BlockGraph:
    return shufflenet.ShuffleNetBlock(prefix, in_ch, out_ch, groups=groups, **opts).build()


def mobilenet_v2_block(in_ch, out_ch, expansion, stride=2, prefix="mobilenet_v2", **opts) -> BlockGraph:
    return mobilenet_v2.MobileNetV2Block(
        prefix, in_ch, out_ch, expansion_rate=expansion, stride=stride, **opts
    ).build()


def vanilla_block(in_ch, out_ch, prefix="vanilla", **opts) -> BlockGraph:
    return vanilla.VanillaBlock(prefix, in_ch, out_ch, **opts).build()
