import numpy as np
import pytest

from effbench import blocks
from effbench.blocks import BlockKind, HeadSpec, ModelSpec, StageSpec, assemble, build_model
from effbench.blocks.utils import block_registry, register_block
from effbench.engine.autograd import ComputeGraph
from effbench.engine.graph import infer_shapes, link
from effbench.engine.tensor import Rng, Shape4
from effbench.error_handling import ShapeError, SpecError


def floats_of(block, in_shape):
    shapes = infer_shapes(link(block.nodes), Shape4.of(in_shape))
    return {name: shape.floats_out for name, shape in shapes.items()}


def conv_widths(block):
    return [node.attrs["out_channels"] for node in block.nodes if node.kind == "conv2d"]


def test_registry_holds_every_kind():
    assert set(block_registry) == {
        "vanilla",
        "effnet",
        "effnet_v2",
        "mobilenet",
        "shufflenet",
        "mobilenet_v2",
        "mob_imp",
    }


def test_register_twice():
    with pytest.raises(ValueError):
        register_block(block_registry["effnet"])


def test_effnet_first_block_layout():
    block = blocks.effnet_block(3, 64)
    assert conv_widths(block) == [32, 32, 32, 64]
    floats = floats_of(block, (1, 3, 32, 32))
    assert floats["effnet.pw.relu"] == 32768
    assert floats["effnet.dw1x3.relu"] == 32768
    assert floats["effnet.mp1x2"] == 16384
    assert floats["effnet.dw3x1.relu"] == 16384
    assert floats["effnet.pw2x1.relu"] == 16384


def test_effnet_second_block():
    block = blocks.effnet_block(64, 128)
    assert conv_widths(block)[0] == 64
    assert floats_of(block, (1, 64, 16, 16))[block.names[-1]] == 8192


@pytest.mark.parametrize("out_channels", [1, 8, 11, 12, 13, 64, 255, 512])
def test_effnet_bottleneck_rule(out_channels):
    assert conv_widths(blocks.effnet_block(16, out_channels))[0] == max(6, out_channels // 2)


def test_effnet_depth_multiplier():
    block = blocks.effnet_block(16, 32, depth_multiplier=2)
    assert conv_widths(block) == [16, 32, 32, 32]


@pytest.mark.parametrize("expansion_rate", [2, 4, 6])
@pytest.mark.parametrize("in_channels", [6, 7, 64, 255, 512])
def test_effnet_v2_bottleneck_rule(in_channels, expansion_rate):
    block = blocks.effnet_v2_block(in_channels, 64, expansion_rate)
    width = in_channels * expansion_rate // 2
    assert conv_widths(block) == [width, 2 * width, 2 * width, 64]


def test_effnet_v2_bottleneck_widths():
    assert conv_widths(blocks.effnet_v2_block(64, 128, 6))[0] == 192
    assert conv_widths(blocks.effnet_v2_block(3, 64, 2))[0] == 3


def test_effnet_v2_activations():
    kinds = {
        node.name: node.attrs["kind"]
        for node in blocks.effnet_v2_block(8, 16, 2).nodes
        if node.kind == "activation"
    }
    assert kinds == {
        "effnet_v2.pw.leaky_relu": "leaky_relu",
        "effnet_v2.dw1x3.relu": "relu",
        "effnet_v2.dw3x1.relu": "relu",
        "effnet_v2.pw2x1.leaky_relu": "leaky_relu",
    }


def test_effnet_v2_without_bottleneck():
    with pytest.raises(SpecError, match="bottleneck"):
        blocks.effnet_v2_block(1, 8, 1.5)


def test_effnet_depthwise_grouping():
    # every depthwise conv only sees channels of its own group
    for node in blocks.effnet_v2_block(8, 16, 2).nodes:
        if node.name.endswith(("dw1x3", "dw3x1")):
            assert node.attrs["groups"] == node.attrs["in_channels"]
    dw = blocks.effnet_v2_block(8, 16, 2).nodes[3]
    assert dw.attrs["out_channels"] == 2 * dw.attrs["in_channels"]


@pytest.mark.parametrize("block", [blocks.effnet_block(4, 16), blocks.effnet_v2_block(4, 16, 2.0)])
def test_effnet_channel_isolation(block):
    # shifting one bottleneck channel only moves the depthwise channels derived from it
    prefix = block.nodes[0].name.split(".")[0]
    g = ComputeGraph.initialize(block.nodes, (2, 4, 6, 6), Rng(3))
    x = np.random.default_rng(3).normal(size=(2, 4, 6, 6))
    dw_names = (f"{prefix}.dw1x3", f"{prefix}.dw3x1")
    g.forward(x, mode="infer")
    before = [g.output(name) for name in dw_names]
    width = g.parameters[f"{prefix}.pw.bn.beta"].size
    multiplier = before[0].shape[1] // width
    channel = 1
    g.parameters[f"{prefix}.pw.bn.beta"][channel] += 5.0
    g.forward(x, mode="infer")
    for name, old in zip(dw_names, before):
        changed = np.abs(g.output(name) - old).sum(axis=(0, 2, 3)) > 1e-12
        assert list(np.flatnonzero(changed)) == list(range(channel * multiplier, (channel + 1) * multiplier))


def test_effnet_odd_extent():
    with pytest.raises(ShapeError):
        floats_of(blocks.effnet_block(4, 8), (1, 4, 7, 7))


def test_mobilenet_block():
    block = blocks.mobilenet_block(64, 128)
    floats = floats_of(block, (1, 64, 16, 16))
    assert floats["mobilenet.dw3x3.relu"] == 4096
    assert floats["mobilenet.pw.relu"] == 8192
    unstrided = blocks.mobilenet_block(8, 8, stride=1)
    assert floats_of(unstrided, (1, 8, 6, 6))[unstrided.names[-1]] == 8 * 36


def test_mobilenet_stride():
    with pytest.raises(SpecError):
        blocks.mobilenet_block(8, 8, stride=3)


def test_shufflenet_block():
    block = blocks.shufflenet_block(64, 128, groups=4)
    assert conv_widths(block) == [32, 32, 128]
    floats = floats_of(block, (1, 64, 16, 16))
    assert floats["shufflenet.gc1.relu"] == 8192
    assert floats["shufflenet.dw3x3.relu"] == 2048
    assert floats["shufflenet.gc2.relu"] == 8192


def test_shufflenet_single_group():
    block = blocks.shufflenet_block(16, 32, groups=1)
    assert [node.attrs["groups"] for node in block.nodes if node.kind == "conv2d"] == [1, 8, 1]


def test_shufflenet_divisibility():
    with pytest.raises(SpecError, match="divisible"):
        blocks.shufflenet_block(6, 32, groups=4)


def test_mobilenet_v2_variants():
    original = blocks.mobilenet_v2_block(16, 32, expansion=6)
    assert conv_widths(original) == [96, 96, 32]
    assert original.nodes[-1].name == "mobilenet_v2.project.bn"
    assert floats_of(original, (1, 16, 8, 8))[original.names[-1]] == 32 * 16

    improved = blocks.mobilenet_v2.MobImpBlock("mob_imp", 16, 32, expansion_rate=6).build()
    names = improved.names
    assert names.index("mob_imp.mp") == names.index("mob_imp.dw3x3.relu") + 1
    assert names[-1] == "mob_imp.project.leaky_relu"
    assert floats_of(improved, (1, 16, 8, 8))[names[-1]] == 32 * 16


def test_mobilenet_v2_residual():
    block = blocks.mobilenet_v2_block(8, 8, expansion=2, stride=1)
    assert block.nodes[-1].kind == "add"
    assert block.nodes[-1].inputs == ("input", "mobilenet_v2.project.bn")
    assert not any(node.kind == "add" for node in blocks.mobilenet_v2_block(8, 16, 2, stride=1).nodes)


def test_vanilla_options():
    block = blocks.vanilla_block(4, 4, kernel=1, pooling=False)
    assert [node.kind for node in block.nodes] == ["conv2d", "batch_norm", "activation"]
    assert block.nodes[0].label == "1x1x4"


def test_unknown_block_option():
    with pytest.raises(SpecError, match="Unknown option"):
        blocks.vanilla_block(3, 8, groups=2)


def test_unknown_activation():
    with pytest.raises(SpecError):
        blocks.mobilenet_block(8, 8, dw_activation="tanh")


@pytest.mark.parametrize("kind", sorted(block_registry))
@pytest.mark.parametrize("extent", [4, 8, 16, 32, 64])
def test_blocks_halve_extents(kind, extent):
    in_channels = 8
    block = block_registry[kind]("b", in_channels, 32).build()
    shapes = infer_shapes(link(block.nodes), Shape4.of((1, in_channels, extent, extent)))
    assert tuple(shapes[block.names[-1]]) == (1, 32, extent // 2, extent // 2)


# -- models


def stage(kind, width, **options):
    return StageSpec(BlockKind(kind, options), width)


def test_assemble_baseline():
    spec = ModelSpec((3, 32, 32), 10, [stage("vanilla", 64), stage("vanilla", 128), stage("vanilla", 256)])
    model = assemble(spec)
    assert model.nodes[-1].name == "head.fc"
    assert model.shapes["head.fc"] == (1, 10, 1, 1)
    assert set(model.stage_of.values()) == {0, 1, 2}


def test_empty_stage_list():
    with pytest.raises(SpecError):
        assemble(ModelSpec((3, 32, 32), 10, []))


def test_stage_error_names_index():
    spec = ModelSpec((3, 32, 32), 10, [stage("vanilla", 64), stage("shufflenet", 130, groups=4)])
    with pytest.raises(SpecError, match="stage 1") as e:
        assemble(spec)
    assert e.value.stage == 1


def test_stage_shape_error_names_index():
    spec = ModelSpec((3, 4, 4), 10, [stage("vanilla", 8), stage("vanilla", 8), stage("vanilla", 8)])
    with pytest.raises(SpecError, match="stage 2"):
        assemble(spec)


def test_first_layer_modes():
    table_mode = assemble(ModelSpec((3, 32, 32), 10, [stage("effnet", 64)]))
    assert table_mode.nodes[0].name == "stage0.pw"
    vanilla_mode = assemble(
        ModelSpec((3, 32, 32), 10, [stage("effnet", 64, first_layer_mode="vanilla_conv_mp")])
    )
    assert vanilla_mode.nodes[0].name == "stage0.conv"
    v2 = assemble(ModelSpec((3, 32, 32), 10, [stage("effnet_v2", 64), stage("effnet_v2", 128)]))
    assert v2.nodes[0].name == "stage0.conv"
    assert "stage1.pw" in v2.shapes


def test_first_layer_mode_only_on_first_stage():
    spec = ModelSpec(
        (3, 32, 32), 10, [stage("vanilla", 64), stage("effnet", 128, first_layer_mode="vanilla_conv_mp")]
    )
    with pytest.raises(SpecError, match="stage 1"):
        assemble(spec)


def test_head_dropout():
    spec = ModelSpec((3, 8, 8), 3, [stage("vanilla", 8)], HeadSpec(dropout_p=0.5))
    assert [node.name for node in assemble(spec).nodes[-2:]] == ["head.dropout", "head.fc"]
    with pytest.raises(SpecError):
        assemble(ModelSpec((3, 8, 8), 3, [stage("vanilla", 8)], HeadSpec(dropout_p=1.0)))


def test_build_model_is_seeded():
    spec = ModelSpec((3, 8, 8), 3, [stage("vanilla", 8), stage("effnet", 16)])
    first, second, other = build_model(spec, 1), build_model(spec, 1), build_model(spec, 2)
    assert first.structure() == other.structure()
    assert all((first.parameters[name] == second.parameters[name]).all() for name in first.parameters)
    assert not (first.parameters["head.fc.weight"] == other.parameters["head.fc.weight"]).all()


def test_spec_hash_ignores_name():
    spec = ModelSpec((3, 8, 8), 3, [stage("vanilla", 8)], name="a")
    renamed = ModelSpec((3, 8, 8), 3, [stage("vanilla", 8)], name="b")
    wider = ModelSpec((3, 8, 8), 3, [stage("vanilla", 16)], name="a")
    assert spec.spec_hash() == renamed.spec_hash()
    assert spec.spec_hash() != wider.spec_hash()
    assert ModelSpec.from_dict(spec.to_dict()) == spec


def test_forward_through_model():
    spec = ModelSpec((3, 8, 8), 3, [stage("vanilla", 8), stage("shufflenet", 16, groups=2)])
    graph = build_model(spec)
    out = graph.forward(np.random.default_rng(0).normal(size=(4, 3, 8, 8)), mode="infer")
    assert out.shape == (4, 3, 1, 1)
