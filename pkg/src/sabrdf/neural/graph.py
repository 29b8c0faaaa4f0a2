"""Directed acyclic layer graphs with named nodes and skip connections."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .layers import Layer, ShapeError

INPUT = "input"


class GraphError(ValueError):
    pass


@dataclass
class Node:
    name: str
    layer: Layer
    inputs: list[str] = field(default_factory=list)


class LayerGraph:
    """Nodes evaluated in insertion order; the last node is the output.

    Each node names its inputs (``"input"`` is the graph input). A node's
    output may feed several later nodes; backward accumulates their
    gradients.
    """

    def __init__(self, input_shape: tuple[int, ...], nodes: Iterable[Node] = ()):
        self.input_shape = tuple(input_shape)
        self.nodes: list[Node] = []
        self._index: dict[str, int] = {}
        self._acts: Optional[dict[str, np.ndarray]] = None
        self._train = False
        for node in nodes:
            self.add(node.name, node.layer, node.inputs)

    def add(self, name: str, layer: Layer, inputs: Optional[list[str]] = None) -> str:
        if name == INPUT or name in self._index:
            raise GraphError(f"duplicate node name {name!r}")
        if inputs is None:
            inputs = [self.nodes[-1].name if self.nodes else INPUT]
        for src in inputs:
            if src != INPUT and src not in self._index:
                raise GraphError(f"node {name!r} consumes {src!r} before it is produced")
        if layer.n_inputs != -1 and len(inputs) != layer.n_inputs:
            raise GraphError(f"node {name!r}: {type(layer).__name__} takes {layer.n_inputs} input(s)")
        self._index[name] = len(self.nodes)
        self.nodes.append(Node(name, layer, list(inputs)))
        return name

    def node(self, name: str) -> Node:
        return self.nodes[self._index[name]]

    @property
    def output_name(self) -> str:
        return self.nodes[-1].name

    # -- parameters -----------------------------------------------------
    def parameters(self) -> dict[str, np.ndarray]:
        return {f"{n.name}.{k}": v for n in self.nodes for k, v in n.layer.params.items()}

    def gradients(self) -> dict[str, np.ndarray]:
        return {f"{n.name}.{k}": v for n in self.nodes for k, v in n.layer.grads.items()}

    def buffers(self) -> dict[str, np.ndarray]:
        return {f"{n.name}.{k}": v for n in self.nodes for k, v in n.layer.buffers.items()}

    def state(self) -> dict[str, np.ndarray]:
        return {**self.parameters(), **self.buffers()}

    def load_state(self, state: dict[str, np.ndarray]):
        expected = set(self.state())
        if set(state) != expected:
            missing, extra = expected - set(state), set(state) - expected
            raise GraphError(f"state mismatch: missing {sorted(missing)}, unexpected {sorted(extra)}")
        for key, value in state.items():
            name, attr = key.rsplit(".", 1)
            layer = self.node(name).layer
            target = layer.params if attr in layer.params else layer.buffers
            if target[attr].shape != value.shape:
                raise GraphError(f"{key}: shape {value.shape} != {target[attr].shape}")
            target[attr] = np.array(value, dtype=target[attr].dtype)
        self.zero_grad()

    def zero_grad(self):
        for n in self.nodes:
            n.layer.zero_grad()

    def astype(self, dtype) -> "LayerGraph":
        for n in self.nodes:
            n.layer.astype(dtype)
        self._acts = None
        return self

    @property
    def dtype(self):
        for v in self.parameters().values():
            return v.dtype
        return np.dtype(np.float32)

    # -- evaluation -----------------------------------------------------
    def forward(self, x: np.ndarray, train: bool = False, feed: Optional[dict[str, np.ndarray]] = None) -> np.ndarray:
        """Run the graph; ``feed`` overrides the output of named nodes."""
        x = np.asarray(x, dtype=self.dtype)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"graph input must be (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        feed = feed or {}
        acts = {INPUT: x}
        for n in self.nodes:
            ins = [acts[s] for s in n.inputs]
            try:
                out = n.layer.forward(ins, train)
            except ShapeError as exc:
                raise ShapeError(f"node {n.name!r}: {exc}") from exc
            if n.name in feed:
                out = np.asarray(feed[n.name], dtype=out.dtype).reshape(out.shape)
            acts[n.name] = out
        self._acts = acts
        self._train = train
        return acts[self.output_name]

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        """Accumulate parameter gradients; return the gradient w.r.t. the input."""
        if self._acts is None:
            raise GraphError("backward called before forward")
        grads: dict[str, np.ndarray] = {self.output_name: np.asarray(grad_out, dtype=self.dtype)}
        for n in reversed(self.nodes):
            g = grads.pop(n.name, None)
            if g is None:
                continue
            for src, gi in zip(n.inputs, n.layer.backward(g)):
                grads[src] = grads[src] + gi if src in grads else gi
        self._acts = None
        return grads.get(INPUT, np.zeros((1,) + self.input_shape, dtype=self.dtype))

    def activation(self, name: str) -> np.ndarray:
        if self._acts is None:
            raise GraphError("no cached forward pass")
        return self._acts[name]

    def architecture(self) -> list[dict]:
        return [
            {"name": n.name, "type": type(n.layer).__name__, "inputs": n.inputs, "config": n.layer.config()}
            for n in self.nodes
        ]
