"""Reverse-mode differentiation over layer node graphs.

Each node kind registers a ``Function`` with a forward that returns its output
plus whatever backward needs (the tape keeps full activations, nothing is
recomputed) and a backward that maps the output gradient to input and
parameter gradients.
"""
import math
from abc import ABC, abstractmethod
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from loguru import logger

from effbench.consts import GRADIENT_CHECK_STEP
from effbench.engine import ops
from effbench.engine.graph import INPUT, LayerNode, infer_shapes, link
from effbench.engine.tensor import HeUniform, Rng, Shape4, Tensor
from effbench.error_handling import GraphStateError, ShapeError

functions = {}


def register_function(kind: str):
    def decorator(cls):
        cls.kind = kind
        functions[kind] = cls
        return cls

    return decorator


class MacCounter:
    """Multiply-accumulates actually issued per sample, by node."""

    def __init__(self):
        self.counts: Dict[str, int] = defaultdict(int)

    def add(self, name: str, macs: int):
        self.counts[name] += int(macs)

    @property
    def total(self) -> int:
        return sum(self.counts.values())

    def __repr__(self):
        return f"<MacCounter total={self.total}>"


@dataclass
class ForwardContext:
    mode: str = "train"
    rng: Optional[Rng] = None
    counter: Optional[MacCounter] = None
    record_kinks: bool = False
    kinks: Dict[str, np.ndarray] = field(default_factory=dict)


class Function(ABC):
    kind = None

    def __init__(self, node: LayerNode):
        self.node = node

    @abstractmethod
    def forward(self, inputs: List[np.ndarray], params: Dict, state: Dict, ctx: ForwardContext):
        """return (output, cache)"""

    @abstractmethod
    def backward(self, grad: np.ndarray, cache, params: Dict):
        """return (input gradients, parameter gradients by short name)"""


@register_function("conv2d")
class Conv2d(Function):
    def forward(self, inputs, params, state, ctx):
        (x,) = inputs
        p = self.node.conv_params(params["weight"], params.get("bias"))
        out, cols = ops.conv2d_forward(x, p)
        if ctx.counter is not None:
            groups, per_group_out = p.groups, p.out_channels // p.groups
            # weight matrix (groups, out/groups, K) times columns (K, positions), per sample
            ctx.counter.add(self.node.name, groups * per_group_out * cols.shape[2] * cols.shape[3])
        padded_shape = ops.pad_input(x[:1], p)[0].shape[1:]
        return out, (cols, x.shape, padded_shape)

    def backward(self, grad, cache, params):
        cols, x_shape, padded_shape = cache
        weight = params["weight"]
        p = self.node.conv_params(weight)
        batch, _, out_h, out_w = grad.shape
        groups = p.groups
        go = grad.reshape(batch, groups, p.out_channels // groups, out_h * out_w)
        w_mat = weight.reshape(groups, p.out_channels // groups, -1)
        grads = {"weight": np.matmul(go, cols.transpose(0, 1, 3, 2)).sum(axis=0).reshape(weight.shape)}
        if "bias" in params:
            grads["bias"] = grad.sum(axis=(0, 2, 3))

        d_cols = np.matmul(w_mat.transpose(0, 2, 1)[None], go)
        d_cols = d_cols.reshape(batch, p.in_channels, p.kernel_h, p.kernel_w, out_h, out_w)
        padded = np.zeros((batch,) + tuple(padded_shape))
        for i in range(p.kernel_h):
            for j in range(p.kernel_w):
                padded[
                    :, :, i : i + p.stride_h * out_h : p.stride_h, j : j + p.stride_w * out_w : p.stride_w
                ] += d_cols[:, :, i, j]
        _, _, height, width = x_shape
        top = ops.same_padding(height, p.kernel_h, p.stride_h)[0] if p.padding == "same" else 0
        left = ops.same_padding(width, p.kernel_w, p.stride_w)[0] if p.padding == "same" else 0
        return [padded[:, :, top : top + height, left : left + width]], grads


@register_function("max_pool2d")
class MaxPool2d(Function):
    def forward(self, inputs, params, state, ctx):
        (x,) = inputs
        out, argmax = ops.max_pool2d_forward(x, self.node.pool_params())
        if ctx.record_kinks:
            ctx.kinks[self.node.name] = argmax
        return out, (x.shape, argmax)

    def backward(self, grad, cache, params):
        x_shape, argmax = cache
        p = self.node.pool_params()
        _, _, out_h, out_w = grad.shape
        dx = np.zeros(x_shape)
        for i in range(p.kernel_h):
            for j in range(p.kernel_w):
                routed = np.where(argmax == i * p.kernel_w + j, grad, 0.0)
                dx[:, :, i : i + p.stride_h * out_h : p.stride_h, j : j + p.stride_w * out_w : p.stride_w] += routed
        return [dx], {}


@register_function("batch_norm")
class BatchNorm(Function):
    def bn_params(self, params, state) -> ops.BnParams:
        return ops.BnParams(
            gamma=params["gamma"],
            beta=params["beta"],
            running_mean=state["running_mean"],
            running_var=state["running_var"],
            epsilon=self.node.attrs["epsilon"],
            momentum=self.node.attrs["momentum"],
        )

    def forward(self, inputs, params, state, ctx):
        (x,) = inputs
        return ops.batch_norm_forward(x, self.bn_params(params, state), ctx.mode)

    def backward(self, grad, cache: ops.BnCache, params):
        gamma = params["gamma"][None, :, None, None]
        x_hat, inv_std = cache.x_hat, cache.inv_std[None, :, None, None]
        grads = {
            "gamma": (grad * x_hat).sum(axis=(0, 2, 3)),
            "beta": grad.sum(axis=(0, 2, 3)),
        }
        d_x_hat = grad * gamma
        if cache.mode != "train":
            return [d_x_hat * inv_std], grads
        count = grad.shape[0] * grad.shape[2] * grad.shape[3]
        dx = (
            inv_std
            / count
            * (
                count * d_x_hat
                - d_x_hat.sum(axis=(0, 2, 3), keepdims=True)
                - x_hat * (d_x_hat * x_hat).sum(axis=(0, 2, 3), keepdims=True)
            )
        )
        return [dx], grads


@register_function("activation")
class Activation(Function):
    def forward(self, inputs, params, state, ctx):
        (x,) = inputs
        kind, alpha = self.node.attrs["kind"], self.node.attrs["alpha"]
        if ctx.record_kinks and kind != "linear":
            ctx.kinks[self.node.name] = x > 0 if kind == "relu" else x >= 0
        return ops.activation_forward(x, kind, alpha), x

    def backward(self, grad, x, params):
        kind, alpha = self.node.attrs["kind"], self.node.attrs["alpha"]
        if kind == "relu":
            return [np.where(x > 0, grad, 0.0)], {}
        if kind == "leaky_relu":
            return [np.where(x >= 0, grad, alpha * grad)], {}
        return [grad], {}


@register_function("channel_shuffle")
class ChannelShuffle(Function):
    def forward(self, inputs, params, state, ctx):
        (x,) = inputs
        return ops.channel_shuffle_forward(x, self.node.attrs["groups"]), None

    def backward(self, grad, cache, params):
        # shuffling with channels / groups groups is the inverse permutation
        inverse_groups = grad.shape[1] // self.node.attrs["groups"]
        return [ops.channel_shuffle_forward(grad, inverse_groups)], {}


@register_function("dropout")
class Dropout(Function):
    def forward(self, inputs, params, state, ctx):
        (x,) = inputs
        if ctx.mode == "train" and self.node.attrs["p"] > 0 and ctx.rng is None:
            raise GraphStateError(f"{self.node.name}: dropout in train mode needs an rng")
        return ops.dropout_forward(x, self.node.attrs["p"], ctx.mode, ctx.rng)

    def backward(self, grad, mask, params):
        return [grad if mask is None else grad * mask], {}


@register_function("fully_connected")
class FullyConnected(Function):
    def forward(self, inputs, params, state, ctx):
        (x,) = inputs
        out, flat = ops.fully_connected_forward(x, params["weight"], params.get("bias"))
        if ctx.counter is not None:
            ctx.counter.add(self.node.name, params["weight"].size)
        return out, (x.shape, flat)

    def backward(self, grad, cache, params):
        x_shape, flat = cache
        g = grad.reshape(grad.shape[0], -1)
        grads = {"weight": flat.T @ g}
        if "bias" in params:
            grads["bias"] = g.sum(axis=0)
        return [(g @ params["weight"].T).reshape(x_shape)], grads


@register_function("add")
class Add(Function):
    def forward(self, inputs, params, state, ctx):
        first, second = inputs
        return first + second, None

    def backward(self, grad, cache, params):
        return [grad, grad], {}


class Loss(ABC):
    @abstractmethod
    def __call__(self, output: np.ndarray) -> Tuple[Any, np.ndarray]:
        """return (value, gradient of value w.r.t. output)"""


class CrossEntropyLoss(Loss):
    def __init__(self, labels):
        self.labels = np.asarray(labels)

    def __call__(self, output):
        batch = output.shape[0]
        logits = output.reshape(batch, -1)
        labels = ops.check_labels(self.labels, logits.shape[1], batch)
        log_probs = ops.log_softmax(logits)
        value = float(-log_probs[np.arange(batch), labels].mean())
        grad = np.exp(log_probs)
        grad[np.arange(batch), labels] -= 1.0
        return value, (grad / batch).reshape(output.shape)


class SumLoss(Loss):
    def __call__(self, output):
        return float(output.sum()), np.ones_like(output)


class QuadraticLoss(Loss):
    def __call__(self, output):
        return float(0.5 * (output ** 2).sum()), output.copy()


class LinearFunctionalLoss(Loss):
    """sum(weights * output) for fixed weights"""

    def __init__(self, weights: np.ndarray):
        self.weights = weights

    def __call__(self, output):
        return float((self.weights * output).sum()), self.weights.copy()


class ElementLoss(Loss):
    def __init__(self, index):
        self.index = tuple(index)

    def __call__(self, output):
        grad = np.zeros_like(output)
        grad[self.index] = 1.0
        return float(output[self.index]), grad


@dataclass
class Tape:
    values: Dict[str, np.ndarray]
    caches: Dict[str, Any]
    kinks: Dict[str, np.ndarray]


class ComputeGraph:
    """Executable node graph owning its parameters and batch-norm statistics."""

    def __init__(
        self,
        nodes: Sequence[LayerNode],
        input_shape: Shape4,
        parameters: Dict[str, np.ndarray],
        state: Optional[Dict[str, np.ndarray]] = None,
        dropout_rng: Optional[Rng] = None,
    ):
        self.nodes = link(nodes)
        self.input_shape = Shape4.of(input_shape)
        self.shapes = infer_shapes(self.nodes, self.input_shape)
        self.parameters = parameters
        self.state = state if state is not None else {}
        self.dropout_rng = dropout_rng
        self.functions = [functions[node.kind](node) for node in self.nodes]
        self.output_name = self.nodes[-1].name if self.nodes else INPUT
        self.tape: Optional[Tape] = None
        self.loss_grad: Optional[np.ndarray] = None

    @classmethod
    def initialize(cls, nodes: Sequence[LayerNode], input_shape: Shape4, rng: Rng) -> "ComputeGraph":
        parameters, state = {}, {}
        for node in link(nodes):
            for short, (shape, init, fan_in) in node.parameter_slots().items():
                if init == "he_uniform":
                    value = HeUniform(rng, fan_in).sample(shape)
                else:
                    value = np.ones(shape) if init == "ones" else np.zeros(shape)
                parameters[f"{node.name}.{short}"] = value
            for short, (shape, init) in node.state_slots().items():
                state[f"{node.name}.{short}"] = np.ones(shape) if init == "ones" else np.zeros(shape)
        return cls(nodes, input_shape, parameters, state, dropout_rng=rng.derive(1))

    def node_parameters(self, node: LayerNode) -> Dict[str, np.ndarray]:
        return {
            short: self.parameters[f"{node.name}.{short}"] for short in node.parameter_slots()
        }

    def node_state(self, node: LayerNode) -> Dict[str, np.ndarray]:
        return {short: self.state[f"{node.name}.{short}"] for short in node.state_slots()}

    def forward(
        self,
        x: Union[Tensor, np.ndarray],
        mode: str = "train",
        rng: Optional[Rng] = None,
        counter: Optional[MacCounter] = None,
        record_kinks: bool = False,
        update_state: bool = True,
    ) -> Tensor:
        data = x.data if isinstance(x, Tensor) else np.asarray(x, dtype=np.float64)
        if data.ndim != 4 or data.shape[1:] != tuple(self.input_shape[1:]):
            raise ShapeError(
                f"Graph expects samples of shape {tuple(self.input_shape[1:])}, got {data.shape[1:]}"
            )
        ctx = ForwardContext(mode, rng or self.dropout_rng, counter, record_kinks)
        values = {INPUT: data}
        caches = {}
        for node, function in zip(self.nodes, self.functions):
            out, cache = function.forward(
                [values[name] for name in node.inputs],
                self.node_parameters(node),
                self.node_state(node),
                ctx,
            )
            values[node.name], caches[node.name] = out, cache
            if node.kind == "batch_norm" and mode == "train" and update_state:
                self.state[f"{node.name}.running_mean"] = cache.running_mean
                self.state[f"{node.name}.running_var"] = cache.running_var
        self.tape = Tape(values, caches, ctx.kinks)
        self.loss_grad = None
        return Tensor(values[self.output_name])

    def output(self, name: str) -> np.ndarray:
        if self.tape is None:
            raise GraphStateError("No forward pass has been recorded")
        return self.tape.values[name]

    def evaluate_loss(self, x, loss: Loss, **forward_kwargs) -> float:
        """forward then loss; the loss gradient seeds the next ``backward``"""
        out = self.forward(x, **forward_kwargs)
        value, grad = loss(out.data)
        if np.ndim(value) != 0:
            raise GraphStateError(f"Loss must be a scalar, got shape {np.shape(value)}")
        self.loss_grad = grad
        return value

    def backward(self, grad_output: np.ndarray) -> Dict[str, np.ndarray]:
        """gradients for every parameter plus ``"input"``"""
        if self.tape is None:
            raise GraphStateError("backward called before forward")
        grads = {self.output_name: np.asarray(grad_output, dtype=np.float64)}
        param_grads = {}
        for node, function in zip(reversed(self.nodes), reversed(self.functions)):
            grad = grads.pop(node.name, None)
            if grad is None:
                continue
            input_grads, node_grads = function.backward(
                grad, self.tape.caches[node.name], self.node_parameters(node)
            )
            for name, input_grad in zip(node.inputs, input_grads):
                grads[name] = grads[name] + input_grad if name in grads else input_grad
            for short, value in node_grads.items():
                param_grads[f"{node.name}.{short}"] = value
        for name, value in self.parameters.items():
            param_grads.setdefault(name, np.zeros_like(value))
        param_grads[INPUT] = grads.get(INPUT, np.zeros(self.tape.values[INPUT].shape))
        return param_grads

    def snapshot_state(self) -> Dict[str, np.ndarray]:
        return {name: value.copy() for name, value in self.state.items()}

    def structure(self) -> List[Tuple[str, str, Tuple]]:
        """(name, kind, parameter shapes) per node"""
        return [
            (
                node.name,
                node.kind,
                tuple(self.parameters[f"{node.name}.{s}"].shape for s in node.parameter_slots()),
            )
            for node in self.nodes
        ]

    def __repr__(self):
        return f"<ComputeGraph nodes={len(self.nodes)} parameters={len(self.parameters)}>"


def backward(graph: ComputeGraph, loss_grad: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    seed = graph.loss_grad if loss_grad is None else loss_grad
    if seed is None:
        raise GraphStateError("backward needs a recorded loss or an explicit output gradient")
    return graph.backward(seed)


@dataclass
class GradientCheckResult:
    parameter: str
    max_rel_error: float
    checked: int
    skipped: int

    def __float__(self):
        return self.max_rel_error


def _same_kinks(first: Dict[str, np.ndarray], second: Dict[str, np.ndarray]) -> bool:
    return first.keys() == second.keys() and all(
        np.array_equal(first[name], second[name]) for name in first
    )


def gradient_check(
    graph: ComputeGraph,
    parameter: str,
    x,
    loss: Loss,
    h: float = GRADIENT_CHECK_STEP,
    mode: str = "train",
    max_elements: Optional[int] = None,
    seed: int = 0,
) -> GradientCheckResult:
    """Compare analytic gradients with central differences.

    Elements whose +h or -h evaluation flips a ReLU sign or a max-pool choice
    are skipped, since central differences are meaningless across a kink.
    """
    saved_state = graph.snapshot_state()
    x = np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64)

    def evaluate(inputs):
        value = graph.evaluate_loss(
            inputs, loss, mode=mode, rng=Rng(seed), record_kinks=True, update_state=False
        )
        return value, graph.tape.kinks

    try:
        _, base_kinks = evaluate(x)
        analytic = backward(graph)[parameter]
        target = x if parameter == INPUT else graph.parameters[parameter]
        indices = list(np.ndindex(target.shape))
        if max_elements is not None and len(indices) > max_elements:
            picks = Rng(seed).permutation(len(indices))[:max_elements]
            indices = [indices[i] for i in sorted(picks)]

        worst, checked, skipped = 0.0, 0, 0
        for index in indices:
            original = target[index]
            target[index] = original + h
            plus, plus_kinks = evaluate(x)
            target[index] = original - h
            minus, minus_kinks = evaluate(x)
            target[index] = original
            if not (_same_kinks(base_kinks, plus_kinks) and _same_kinks(base_kinks, minus_kinks)):
                skipped += 1
                continue
            central = (plus - minus) / (2 * h)
            exact = analytic[index]
            error = abs(exact - central) / max(abs(exact), abs(central), 1e-8)
            worst = max(worst, error)
            checked += 1
    finally:
        graph.state.update(saved_state)
    if skipped:
        logger.warning(f"gradient check of {parameter}: skipped {skipped} elements across kinks")
    logger.debug(f"gradient check of {parameter}: {checked} elements, max rel error {worst:.3e}")
    if not math.isfinite(worst):
        raise GraphStateError(f"gradient check of {parameter} produced a non-finite error")
    return GradientCheckResult(parameter, worst, checked, skipped)
