"""Static cost model.

Every convolution or fully connected node opens a row; the parameter-free
nodes after it (batch norm, activation, pooling, shuffle, dropout, add) fold
into that row, so a row's ``floats_out`` is what leaves its last node. Costs
are per sample: a multiply-accumulate is two FLOPs and bias additions count
where a bias exists.
"""
import dataclasses
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence

from loguru import logger

from effbench.blocks.block import BlockKind
from effbench.blocks.model import HeadSpec, ModelGraph, ModelSpec, StageSpec, assemble
from effbench.consts import COMPRESSION_FACTOR
from effbench.engine.graph import COST_KINDS, bias_adds, multiply_count
from effbench.error_handling import SpecError


@dataclass
class CostRow:
    label: str
    node: str
    mults: int = 0
    adds: int = 0
    params: int = 0
    floats_out: int = 0
    flag: bool = False

    @property
    def flops(self) -> int:
        return self.mults + self.adds


@dataclass
class CostReport:
    name: str
    rows: List[CostRow]
    input_floats: int

    @property
    def mults(self) -> int:
        return sum(row.mults for row in self.rows)

    @property
    def adds(self) -> int:
        return sum(row.adds for row in self.rows)

    @property
    def flops(self) -> int:
        return sum(row.flops for row in self.rows)

    @property
    def params(self) -> int:
        return sum(row.params for row in self.rows)

    @property
    def floats_chain(self) -> List[int]:
        return [row.floats_out for row in self.rows]

    def totals(self) -> dict:
        return dict(mults=self.mults, adds=self.adds, flops=self.flops, params=self.params)

    def __repr__(self):
        return f"<CostReport {self.name} rows={len(self.rows)} flops={self.flops}>"


@dataclass
class ComparisonRow:
    name: str
    flops: int
    factor: float
    accuracy: Optional[float] = None


def rows_of(model: ModelGraph) -> List[CostRow]:
    rows: List[CostRow] = []
    for node in model.nodes:
        out_shape = model.shapes[node.name]
        if node.kind in COST_KINDS:
            in_shape = model.shapes[node.inputs[0]]
            mults = multiply_count(node, in_shape, out_shape)
            rows.append(
                CostRow(
                    label=node.label or node.name,
                    node=node.name,
                    mults=mults,
                    adds=mults + bias_adds(node, out_shape),
                )
            )
        elif not rows:
            continue
        rows[-1].params += node.parameter_count()
        rows[-1].floats_out = out_shape.floats_out

    previous = model.input_shape.floats_out
    for row in rows:
        row.flag = row.floats_out * COMPRESSION_FACTOR <= previous
        previous = row.floats_out
    return rows


def _with_input(spec: ModelSpec, input_shape) -> ModelSpec:
    if input_shape is None:
        return spec
    return dataclasses.replace(spec, input_shape=tuple(input_shape))


def count_flops(spec: ModelSpec, input_shape: Optional[Sequence[int]] = None) -> CostReport:
    """Per-layer multiplies, adds, FLOPs, parameters and floats out for one sample."""
    spec = _with_input(spec, input_shape)
    model = assemble(spec)
    report = CostReport(spec.name, rows_of(model), model.input_shape.floats_out)
    for row in report.rows:
        if row.flag:
            logger.warning(
                f"{spec.name}: {row.label} compresses the data flow {COMPRESSION_FACTOR}x or more "
                f"(down to {row.floats_out} floats)"
            )
    logger.debug(f"{spec.name}: {report.flops} FLOPs, {report.params} parameters")
    return report


def data_flow_report(spec: ModelSpec, input_shape: Optional[Sequence[int]] = None):
    """(label, floats_out, compression flag) per row"""
    model = assemble(_with_input(spec, input_shape))
    return [(row.label, row.floats_out, row.flag) for row in rows_of(model)]


def static_macs(model: ModelGraph) -> Dict[str, int]:
    """multiply-accumulates per cost node, for one sample"""
    return {
        node.name: multiply_count(node, model.shapes[node.inputs[0]], model.shapes[node.name])
        for node in model.nodes
        if node.kind in COST_KINDS
    }


def compare(
    reports: Sequence[CostReport],
    baseline_index: int = 0,
    accuracies: Optional[Dict[str, float]] = None,
) -> List[ComparisonRow]:
    if len(reports) < 2:
        raise SpecError(f"compare needs at least two reports, got {len(reports)}")
    if not 0 <= baseline_index < len(reports):
        raise SpecError(f"baseline index {baseline_index} outside 0..{len(reports) - 1}")
    baseline = reports[baseline_index].flops
    accuracies = accuracies or {}
    return [
        ComparisonRow(
            report.name,
            report.flops,
            round(report.flops / baseline, 2),
            accuracies.get(report.name),
        )
        for report in reports
    ]


def first_layer_saving(input_shape: Sequence[int] = (3, 32, 32), out_channels: int = 64) -> float:
    """relative FLOP saving of an EffNet block over a 3 x 3 conv with max pooling as first layer"""

    def single(kind: str) -> int:
        spec = ModelSpec(
            tuple(input_shape),
            class_count=1,
            stages=[StageSpec(BlockKind(kind), out_channels)],
            head=HeadSpec(fully_connected=False),
            name=kind,
        )
        return rows_total(assemble(spec))

    effnet, vanilla = single("effnet"), single("vanilla")
    return 1.0 - effnet / vanilla


def rows_total(model: ModelGraph) -> int:
    return sum(row.flops for row in rows_of(model))


# -- formatting


def _millions(count: int) -> str:
    return f"{count / 1e6:.2f}"


def format_table(report: CostReport) -> str:
    header = ("#", "layer", "mults", "adds", "MFLOPs", "params", "floats out", "")
    lines = [
        (
            str(index),
            row.label,
            str(row.mults),
            str(row.adds),
            _millions(row.flops),
            str(row.params),
            str(row.floats_out),
            "!" if row.flag else "",
        )
        for index, row in enumerate(report.rows, start=1)
    ]
    total = ("", "total", str(report.mults), str(report.adds), _millions(report.flops), str(report.params), "", "")
    widths = [max(len(line[i]) for line in [header, *lines, total]) for i in range(len(header))]

    def render(cells):
        return "  ".join(
            cell.ljust(width) if i == 1 else cell.rjust(width)
            for i, (cell, width) in enumerate(zip(cells, widths))
        ).rstrip()

    rule = "-" * len(render(header))
    return "\n".join(
        [f"{report.name} (input {report.input_floats} floats)", render(header), rule]
        + [render(line) for line in lines]
        + [rule, render(total)]
    )


def format_records(report: CostReport) -> str:
    records = [
        "\t".join(
            map(
                str,
                (
                    index,
                    row.label,
                    row.mults,
                    row.adds,
                    row.flops,
                    row.params,
                    row.floats_out,
                    "!" if row.flag else "-",
                ),
            )
        )
        for index, row in enumerate(report.rows, start=1)
    ]
    records.append(
        "\t".join(map(str, ("total", "-", report.mults, report.adds, report.flops, report.params, "-", "-")))
    )
    return "\n".join(records)


def format_comparison(rows: Sequence[ComparisonRow]) -> str:
    header = ("model", "mean accuracy", "MFLOPs", "factor")
    lines = [
        (
            row.name,
            "-" if row.accuracy is None else f"{100 * row.accuracy:.2f}%",
            f"{row.flops / 1e6:.1f}",
            f"{row.factor:.2f}",
        )
        for row in rows
    ]
    widths = [max(len(line[i]) for line in [header, *lines]) for i in range(len(header))]
    return "\n".join(
        "  ".join(
            cell.ljust(width) if i == 0 else cell.rjust(width)
            for i, (cell, width) in enumerate(zip(line, widths))
        )
        for line in [header, *lines]
    )
