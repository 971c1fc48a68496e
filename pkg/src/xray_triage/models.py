"""Architecture builders, forward/backward execution, and class activation maps.

Two families are built here: a small depthwise-separable validity filter and a
dense-block classifier. Layers are hand-coded forward/backward pairs over the
primitives in :mod:`xray_triage.tensor_core`; correctness is anchored by the
finite-difference checker rather than a taped autograd.

Per-call state for backward lives in an explicit ``ctx`` dict, so a graph with
frozen weights is safe to share across concurrent forward calls (pass
``ctx=None``).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import tensor_core as tc
from .errors import CheckpointError, ShapeError
from .imaging import bilinear_resize_floats


def he_normal(rng: np.random.Generator, shape: tuple, fan_in: int) -> np.ndarray:
    """He-style init: N(0, sqrt(2/fan_in)), float32."""
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(np.float32)


class Layer:
    """Base class: a named graph node owning zero or more parameters."""

    def __init__(self, name: str):
        self.name = name

    def param_list(self) -> list[tc.Parameter]:
        return []

    def forward(self, x: np.ndarray, ctx: dict | None = None) -> np.ndarray:
        raise NotImplementedError

    def forward_linearized(self, x: np.ndarray, gate_ctx: dict) -> np.ndarray:
        """Forward with any ReLU gates pinned to the open/closed pattern that a
        prior :meth:`forward` call recorded in ``gate_ctx``. Gate-free layers
        are already linear in their inputs and run unchanged."""
        return self.forward(x, None)

    def backward(self, grad: np.ndarray, ctx: dict) -> np.ndarray:
        raise NotImplementedError

    def descriptor(self) -> dict:
        raise NotImplementedError


class Conv2d(Layer):
    def __init__(self, name, rng, cin, cout, k, stride=1, padding=0):
        super().__init__(name)
        self.cin, self.cout, self.k = cin, cout, k
        self.stride, self.padding = stride, padding
        self.kernel = tc.Parameter(f"{name}.kernel", he_normal(rng, (cout, cin, k, k), cin * k * k))
        self.bias = tc.Parameter(f"{name}.bias", np.zeros(cout, dtype=np.float32))

    def param_list(self):
        return [self.kernel, self.bias]

    def forward(self, x, ctx=None):
        if ctx is not None:
            ctx[self.name] = x
        return tc.conv2d(x, self.kernel.value, self.bias.value, self.stride, self.padding)

    def backward(self, grad, ctx):
        x = ctx[self.name]
        dx, dk, db = tc.conv2d_backward(grad, x, self.kernel.value, self.stride, self.padding)
        self.kernel.grad += dk
        self.bias.grad += db
        return dx

    def descriptor(self):
        return {
            "type": "conv",
            "in_channels": self.cin,
            "out_channels": self.cout,
            "kernel": self.k,
            "stride": self.stride,
            "padding": self.padding,
        }


class Relu(Layer):
    def forward(self, x, ctx=None):
        if ctx is not None:
            ctx[self.name] = x
        return tc.relu(x)

    def forward_linearized(self, x, gate_ctx):
        return x * (gate_ctx[self.name] > 0)

    def backward(self, grad, ctx):
        return tc.relu_backward(grad, ctx[self.name])

    def descriptor(self):
        return {"type": "relu"}


class AvgPool(Layer):
    def __init__(self, name, window, stride):
        super().__init__(name)
        self.window, self.stride = window, stride

    def forward(self, x, ctx=None):
        if ctx is not None:
            ctx[self.name] = x.shape
        return tc.avg_pool2d(x, self.window, self.stride)

    def backward(self, grad, ctx):
        return tc.avg_pool2d_backward(grad, ctx[self.name], self.window, self.stride)

    def descriptor(self):
        return {"type": "avg_pool", "window": self.window, "stride": self.stride}


class GlobalAvgPool(Layer):
    def forward(self, x, ctx=None):
        if ctx is not None:
            ctx[self.name] = x.shape
        return tc.global_avg_pool(x)

    def backward(self, grad, ctx):
        return tc.global_avg_pool_backward(grad, ctx[self.name])

    def descriptor(self):
        return {"type": "global_avg_pool"}


class Linear(Layer):
    def __init__(self, name, rng, cin, cout):
        super().__init__(name)
        self.cin, self.cout = cin, cout
        self.weight = tc.Parameter(f"{name}.weight", he_normal(rng, (cout, cin), cin))
        self.bias = tc.Parameter(f"{name}.bias", np.zeros(cout, dtype=np.float32))

    def param_list(self):
        return [self.weight, self.bias]

    def forward(self, x, ctx=None):
        if ctx is not None:
            ctx[self.name] = x
        return tc.linear(x, self.weight.value, self.bias.value)

    def backward(self, grad, ctx):
        dx, dw, db = tc.linear_backward(grad, ctx[self.name], self.weight.value)
        self.weight.grad += dw
        self.bias.grad += db
        return dx

    def descriptor(self):
        return {"type": "linear", "in_features": self.cin, "out_features": self.cout}


class DepthwiseSeparable(Layer):
    """Depthwise 3x3 (stride here) -> ReLU -> pointwise 1x1 + bias.

    Spatial padding is k//2 so the depthwise stage preserves extent at stride 1.
    """

    def __init__(self, name, rng, cin, cout, k=3, stride=1):
        super().__init__(name)
        self.cin, self.cout, self.k, self.stride = cin, cout, k, stride
        self.padding = k // 2
        self.depthwise = tc.Parameter(f"{name}.depthwise", he_normal(rng, (cin, 1, k, k), k * k))
        self.pointwise = tc.Parameter(f"{name}.pointwise", he_normal(rng, (cout, cin, 1, 1), cin))
        self.bias = tc.Parameter(f"{name}.bias", np.zeros(cout, dtype=np.float32))

    def param_list(self):
        return [self.depthwise, self.pointwise, self.bias]

    def forward(self, x, ctx=None):
        mid = tc.depthwise_conv2d(x, self.depthwise.value, self.stride, self.padding)
        act = tc.relu(mid)
        out = tc.conv2d(act, self.pointwise.value, self.bias.value)
        if ctx is not None:
            ctx[self.name] = (x, mid, act)
        return out

    def forward_linearized(self, x, gate_ctx):
        _, base_mid, _ = gate_ctx[self.name]
        mid = tc.depthwise_conv2d(x, self.depthwise.value, self.stride, self.padding)
        act = mid * (base_mid > 0)
        return tc.conv2d(act, self.pointwise.value, self.bias.value)

    def backward(self, grad, ctx):
        x, mid, act = ctx[self.name]
        dact, dpw, dbias = tc.conv2d_backward(grad, act, self.pointwise.value)
        dmid = tc.relu_backward(dact, mid)
        dx, ddw = tc.depthwise_conv2d_backward(dmid, x, self.depthwise.value, self.stride, self.padding)
        self.depthwise.grad += ddw
        self.pointwise.grad += dpw
        self.bias.grad += dbias
        return dx

    def descriptor(self):
        return {
            "type": "depthwise_separable",
            "in_channels": self.cin,
            "out_channels": self.cout,
            "kernel": self.k,
            "stride": self.stride,
            "padding": self.padding,
        }


class DenseBlock(Layer):
    """A stack of composite layers (ReLU -> 3x3 conv, ``growth`` channels each),
    every output concatenated onto the running channel stack."""

    def __init__(self, name, rng, cin, num_layers, growth, k=3):
        super().__init__(name)
        self.cin, self.num_layers, self.growth, self.k = cin, num_layers, growth, k
        self.kernels: list[tc.Parameter] = []
        self.biases: list[tc.Parameter] = []
        for i in range(num_layers):
            c = cin + i * growth
            self.kernels.append(
                tc.Parameter(f"{name}.conv{i}.kernel", he_normal(rng, (growth, c, k, k), c * k * k))
            )
            self.biases.append(
                tc.Parameter(f"{name}.conv{i}.bias", np.zeros(growth, dtype=np.float32))
            )

    @property
    def cout(self):
        return self.cin + self.num_layers * self.growth

    def param_list(self):
        out = []
        for kern, b in zip(self.kernels, self.biases):
            out.extend([kern, b])
        return out

    def forward(self, x, ctx=None):
        pad = self.k // 2
        stack = x
        stacks = [stack]
        acts = []
        for kern, b in zip(self.kernels, self.biases):
            act = tc.relu(stack)
            y = tc.conv2d(act, kern.value, b.value, stride=1, padding=pad)
            stack = np.concatenate([stack, y], axis=1)
            stacks.append(stack)
            acts.append(act)
        if ctx is not None:
            ctx[self.name] = (stacks, acts)
        return stack

    def forward_linearized(self, x, gate_ctx):
        base_stacks, _ = gate_ctx[self.name]
        pad = self.k // 2
        stack = x
        for i, (kern, b) in enumerate(zip(self.kernels, self.biases)):
            act = stack * (base_stacks[i] > 0)
            y = tc.conv2d(act, kern.value, b.value, stride=1, padding=pad)
            stack = np.concatenate([stack, y], axis=1)
        return stack

    def backward(self, grad, ctx):
        stacks, acts = ctx[self.name]
        pad = self.k // 2
        dstack = grad
        for i in reversed(range(self.num_layers)):
            prev_channels = self.cin + i * self.growth
            dprev = np.ascontiguousarray(dstack[:, :prev_channels])
            dy = np.ascontiguousarray(dstack[:, prev_channels:])
            dact, dk, db = tc.conv2d_backward(dy, acts[i], self.kernels[i].value, 1, pad)
            self.kernels[i].grad += dk
            self.biases[i].grad += db
            dstack = dprev + tc.relu_backward(dact, stacks[i])
        return dstack

    def descriptor(self):
        return {
            "type": "dense_block",
            "in_channels": self.cin,
            "out_channels": self.cout,
            "layers": self.num_layers,
            "growth": self.growth,
            "kernel": self.k,
        }


@dataclass
class ForwardOutput:
    logits: np.ndarray
    probabilities: np.ndarray
    final_features: np.ndarray | None


@dataclass
class FilterNetConfig:
    """Validity-filter architecture: stem conv then depthwise-separable blocks."""

    stem_channels: int = 8
    num_ds_blocks: int = 4
    width_multiplier: float = 1.0
    num_classes: int = 2
    input_size: int = 224

    def __post_init__(self):
        if self.stem_channels < 1 or self.num_ds_blocks < 1:
            raise ValueError("stem_channels and num_ds_blocks must be >= 1")
        if self.width_multiplier <= 0:
            raise ValueError("width_multiplier must be positive")
        if self.num_classes != 2:
            raise ValueError("the validity filter is a fixed 2-class model")


@dataclass
class CovidNetConfig:
    """Dense-block classifier: three blocks separated by two transitions.

    ``num_classes`` is 2 for first-stage training and 3 once the scarce class
    is split out.
    """

    growth_rate: int = 12
    layers_per_block: int = 4
    num_blocks: int = 3
    head_channels: int = 64
    num_classes: int = 3
    input_size: int = 224

    def __post_init__(self):
        if self.num_blocks != 3:
            raise ValueError("the classifier is a fixed three-block cascade")
        if self.growth_rate < 1 or self.layers_per_block < 1 or self.head_channels < 1:
            raise ValueError("growth_rate, layers_per_block, head_channels must be >= 1")
        if self.num_classes not in (2, 3):
            raise ValueError(f"num_classes must be 2 or 3, got {self.num_classes}")


FILTER_CLASSES = ["valid", "nonvalid"]
CLASSIFIER_CLASSES = ["no_finding", "lung_opacity", "covid19"]
STAGE1_CLASSES = ["no_finding", "lung_opacity"]


class ModelGraph:
    """An ordered layer composition with a named parameter map.

    ``forward`` returns logits, softmax probabilities, and the feature maps
    entering global average pooling (``final_features``), which is what the
    activation-map computation consumes.
    """

    def __init__(self, kind: str, config, layers: list[Layer], class_names: list[str],
                 input_channels: int):
        self.kind = kind
        self.config = config
        self.layers = layers
        self.class_names = list(class_names)
        self.input_channels = input_channels
        self._params: dict[str, tc.Parameter] = {}
        for layer in layers:
            for p in layer.param_list():
                if p.name in self._params:
                    raise ValueError(f"duplicate parameter name {p.name!r}")
                self._params[p.name] = p
        self._gap_index = next(
            (i for i, l in enumerate(layers) if isinstance(l, GlobalAvgPool)), None
        )

    def parameters(self) -> dict[str, tc.Parameter]:
        return self._params

    def descriptors(self) -> list[dict]:
        return [l.descriptor() for l in self.layers]

    def parameter_count(self) -> int:
        return sum(p.value.size for p in self._params.values())

    def forward(self, x: np.ndarray, ctx: dict | None = None) -> ForwardOutput:
        if x.ndim != 4:
            raise ShapeError(
                f"{self.kind}: expected 4-D input [N,{self.input_channels},H,W], got {x.shape}"
            )
        if x.shape[1] != self.input_channels:
            raise ShapeError(
                f"{self.kind}: expected {self.input_channels} input channels, got {x.shape[1]}"
            )
        final_features = None
        out = x
        for i, layer in enumerate(self.layers):
            if i == self._gap_index:
                final_features = out
            out = layer.forward(out, ctx)
        logits = out
        return ForwardOutput(logits, tc.softmax(logits), final_features)

    def forward_linearized(self, x: np.ndarray, gate_ctx: dict) -> ForwardOutput:
        """Evaluate the model with every ReLU gate frozen to the pattern a prior
        :meth:`forward` call recorded in ``gate_ctx``.

        At the recorded operating point this reproduces ``forward`` bit for bit.
        Under a parameter perturbation it evaluates the locally linearized
        network — exactly the function whose gradient :meth:`backward` computes
        — so finite differences of this evaluation converge to the analytic
        gradient without being corrupted by gates flipping inside the
        perturbation interval.
        """
        final_features = None
        out = x
        for i, layer in enumerate(self.layers):
            if i == self._gap_index:
                final_features = out
            out = layer.forward_linearized(out, gate_ctx)
        logits = out
        return ForwardOutput(logits, tc.softmax(logits), final_features)

    def backward(self, dlogits: np.ndarray, ctx: dict) -> np.ndarray:
        grad = dlogits
        for layer in reversed(self.layers):
            grad = layer.backward(grad, ctx)
        return grad

    def zero_grad(self):
        for p in self._params.values():
            p.zero_grad()

    def state(self) -> dict[str, np.ndarray]:
        return {name: p.value for name, p in self._params.items()}

    def load_state(self, tensors: dict[str, np.ndarray]):
        missing = [n for n in self._params if n not in tensors]
        if missing:
            raise CheckpointError(f"missing tensors for parameters: {missing}")
        for name, p in self._params.items():
            arr = np.asarray(tensors[name], dtype=p.value.dtype)
            if arr.shape != p.value.shape:
                raise CheckpointError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} != model {p.value.shape}"
                )
            p.value[...] = arr

    def head_weights(self) -> np.ndarray:
        head = self.layers[-1]
        if not isinstance(head, Linear):
            raise ValueError("model has no linear head")
        return head.weight.value

    def clone(self, dtype=None) -> "ModelGraph":
        other = build_model(self.kind, self.config, seed=0)
        if dtype is not None:
            for p in other._params.values():
                p.value = p.value.astype(dtype)
                p.grad = p.grad.astype(dtype)
                p.adam_m = p.adam_m.astype(dtype)
                p.adam_v = p.adam_v.astype(dtype)
        for name, p in self._params.items():
            dst = other._params[name]
            dst.value[...] = p.value
            dst.frozen = p.frozen
        return other


def build_filter_net(config: FilterNetConfig, seed: int = 0) -> ModelGraph:
    """Stem conv (stride 2) -> DS blocks (every second one stride 2) -> GAP -> 2-way head.

    Block output channels follow stem * 2^i scaled by the width multiplier.
    """
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    c = config.stem_channels
    layers.append(Conv2d("stem", rng, 1, c, k=3, stride=2, padding=1))
    layers.append(Relu("stem_relu"))
    for i in range(1, config.num_ds_blocks + 1):
        cout = max(1, round(config.stem_channels * (2**i) * config.width_multiplier))
        stride = 2 if i % 2 == 0 else 1
        layers.append(DepthwiseSeparable(f"ds{i}", rng, c, cout, k=3, stride=stride))
        layers.append(Relu(f"ds{i}_relu"))
        c = cout
    layers.append(GlobalAvgPool("gap"))
    layers.append(Linear("head_fc", rng, c, config.num_classes))
    return ModelGraph("filter", config, layers, FILTER_CLASSES, input_channels=1)


def build_covid_net(config: CovidNetConfig, seed: int = 0) -> ModelGraph:
    """Three dense blocks with halving transitions, then a 1x1 head conv, GAP,
    and a linear softmax head."""
    rng = np.random.default_rng(seed)
    layers: list[Layer] = []
    c = 3
    for b in range(1, config.num_blocks + 1):
        block = DenseBlock(f"block{b}", rng, c, config.layers_per_block, config.growth_rate)
        layers.append(block)
        c = block.cout
        if b < config.num_blocks:
            half = c // 2
            if half < 1:
                raise ValueError(f"transition after block {b} would collapse to 0 channels")
            layers.append(Conv2d(f"transition{b}.conv", rng, c, half, k=1))
            layers.append(AvgPool(f"transition{b}.pool", window=2, stride=2))
            c = half
    layers.append(Conv2d("head_conv", rng, c, config.head_channels, k=1))
    layers.append(Relu("head_relu"))
    layers.append(GlobalAvgPool("gap"))
    layers.append(Linear("head_fc", rng, config.head_channels, config.num_classes))
    class_names = CLASSIFIER_CLASSES if config.num_classes == 3 else STAGE1_CLASSES
    return ModelGraph("covid", config, layers, class_names, input_channels=3)


def build_model(kind: str, config, seed: int = 0) -> ModelGraph:
    if kind == "filter":
        return build_filter_net(config, seed)
    if kind == "covid":
        return build_covid_net(config, seed)
    raise ValueError(f"unknown model kind {kind!r}")


def raw_cam(features: np.ndarray, head_weights: np.ndarray, class_index: int) -> np.ndarray:
    """Un-normalized activation map: head-weighted sum of final feature maps.

    Its spatial mean equals the class's logit contribution (logit minus head
    bias), since the head consumes the spatial mean of each feature map.
    """
    if features.ndim != 3:
        raise ShapeError(f"raw_cam: features must be [F,h,w], got {features.shape}")
    if not 0 <= class_index < head_weights.shape[0]:
        raise ShapeError(
            f"raw_cam: class_index {class_index} out of range for "
            f"{head_weights.shape[0]} classes"
        )
    if head_weights.shape[1] != features.shape[0]:
        raise ShapeError(
            f"raw_cam: head weight feature axis {head_weights.shape[1]} "
            f"!= feature map count {features.shape[0]}"
        )
    return np.einsum("f,fhw->hw", head_weights[class_index], features)


def compute_cam(
    features: np.ndarray,
    head_weights: np.ndarray,
    class_index: int,
    out_h: int,
    out_w: int,
) -> np.ndarray:
    """Class activation map: head-weighted sum of final feature maps.

    The raw map is bilinearly upsampled to (out_h, out_w) and min-max
    normalized into [0,1]; a constant raw map normalizes to all 0.5.
    """
    raw = raw_cam(features, head_weights, class_index)
    up = bilinear_resize_floats(raw.astype(np.float64), out_h, out_w)
    lo, hi = float(up.min()), float(up.max())
    if hi - lo < 1e-12:
        return np.full((out_h, out_w), 0.5, dtype=np.float32)
    return ((up - lo) / (hi - lo)).astype(np.float32)


# --- model directory layout: config JSON next to a weight checkpoint ---------

_CONFIG_TYPES = {"filter": FilterNetConfig, "covid": CovidNetConfig}


def save_model(directory: str | Path, graph: ModelGraph) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    meta = {
        "kind": graph.kind,
        "config": asdict(graph.config),
        "class_names": graph.class_names,
    }
    (directory / f"{graph.kind}.json").write_text(json.dumps(meta, indent=2))
    tc.save_checkpoint(directory / f"{graph.kind}.ckpt", graph.state())


def load_model(directory: str | Path, kind: str) -> ModelGraph:
    directory = Path(directory)
    meta_path = directory / f"{kind}.json"
    ckpt_path = directory / f"{kind}.ckpt"
    if not meta_path.exists():
        raise CheckpointError(f"model config not found: {meta_path}")
    meta = json.loads(meta_path.read_text())
    config = _CONFIG_TYPES[meta["kind"]](**meta["config"])
    graph = build_model(meta["kind"], config, seed=0)
    graph.load_state(tc.load_checkpoint(ckpt_path))
    if meta.get("class_names"):
        graph.class_names = list(meta["class_names"])
    return graph
