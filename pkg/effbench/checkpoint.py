import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from loguru import logger

from effbench.blocks.model import ModelSpec, assemble
from effbench.consts import CHECKPOINT_MANIFEST
from effbench.data.dataset import Stats
from effbench.data.formats import read_array, write_array
from effbench.engine.autograd import ComputeGraph
from effbench.error_handling import CompatibilityError, DataFormatError

ARRAY_SUFFIX = ".nchw"
FLOAT64 = 2


@dataclass
class Checkpoint:
    spec: ModelSpec
    graph: ComputeGraph
    spec_hash: str
    stats: Optional[Stats] = None


def save_checkpoint(directory, graph: ComputeGraph, spec: ModelSpec, stats: Optional[Stats] = None) -> Path:
    """parameter and batch-norm arrays plus a manifest holding the spec and its hash"""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for group, values in (("parameter", graph.parameters), ("state", graph.state)):
        for name, value in values.items():
            file_name = f"{name}{ARRAY_SUFFIX}"
            write_array(directory / file_name, value, FLOAT64)
            arrays[name] = dict(file=file_name, shape=list(value.shape), group=group)
    manifest = dict(
        spec_hash=spec.spec_hash(),
        spec=spec.to_dict(),
        arrays=arrays,
        normalization=stats.to_dict() if stats else None,
    )
    path = directory / CHECKPOINT_MANIFEST
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True))
    logger.info(f"wrote checkpoint {path} ({len(arrays)} arrays)")
    return path


def load_checkpoint(directory, expected: Optional[ModelSpec] = None) -> Checkpoint:
    """Restore a checkpoint; with ``expected`` the stored spec hash must match it."""
    directory = Path(directory)
    path = directory / CHECKPOINT_MANIFEST
    if not path.is_file():
        raise DataFormatError(f"{directory} holds no {CHECKPOINT_MANIFEST}")
    manifest = json.loads(path.read_text())
    if expected is not None and expected.spec_hash() != manifest["spec_hash"]:
        raise CompatibilityError(
            f"checkpoint spec hash {manifest['spec_hash']} does not match "
            f"spec hash {expected.spec_hash()}"
        )
    spec = ModelSpec.from_dict(manifest["spec"])
    if spec.spec_hash() != manifest["spec_hash"]:
        raise DataFormatError(f"{path}: stored spec does not hash to {manifest['spec_hash']}")

    model = assemble(spec)
    parameters, state = {}, {}
    for name, entry in manifest["arrays"].items():
        value = read_array(directory / entry["file"]).reshape(entry["shape"])
        (parameters if entry["group"] == "parameter" else state)[name] = value
    graph = ComputeGraph(model.nodes, model.input_shape, parameters, state)
    expected_names = {
        f"{node.name}.{short}" for node in model.nodes for short in node.parameter_slots()
    }
    if expected_names != set(parameters):
        raise CompatibilityError(
            f"checkpoint parameters do not fit the spec: "
            f"missing {sorted(expected_names - set(parameters))}, "
            f"unexpected {sorted(set(parameters) - expected_names)}"
        )
    stats = Stats.from_dict(manifest["normalization"]) if manifest.get("normalization") else None
    logger.debug(f"loaded checkpoint {path}")
    return Checkpoint(spec, graph, manifest["spec_hash"], stats)
