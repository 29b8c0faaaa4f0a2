"""Network builders: BRDF-net, the three SVBRDF-net branches, and a small MLP."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .neural import (
    BatchNorm,
    BilinearUpsample,
    Concat,
    Conv2D,
    FullyConnected,
    LayerGraph,
    MaxPool,
    ReLU,
    Sigmoid,
)


class SpecError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkSpec:
    input_size: int = 32
    in_channels: int = 1
    encoder_widths: tuple[int, ...] = (16, 32, 64)
    decoder_widths: Optional[tuple[int, ...]] = None
    fc_hidden: int = 1024
    n_outputs: int = 2
    kernel: int = 3
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "encoder_widths", tuple(int(w) for w in self.encoder_widths))
        if self.decoder_widths is not None:
            object.__setattr__(self, "decoder_widths", tuple(int(w) for w in self.decoder_widths))
        errors = []
        if not self.encoder_widths or min(self.encoder_widths) < 1:
            errors.append("encoder_widths must be a non-empty list of positive ints")
        elif self.input_size % (2 ** len(self.encoder_widths)):
            errors.append(f"input_size {self.input_size} not divisible by 2^{len(self.encoder_widths)}")
        if self.decoder_widths is not None and len(self.decoder_widths) != len(self.encoder_widths):
            errors.append("decoder must mirror the encoder stage count")
        if self.in_channels < 1 or self.fc_hidden < 1 or self.n_outputs < 1 or self.kernel % 2 != 1:
            errors.append("in_channels, fc_hidden, n_outputs must be >= 1 and kernel odd")
        if errors:
            raise SpecError("; ".join(errors))

    @property
    def decoder(self) -> tuple[int, ...]:
        return self.decoder_widths if self.decoder_widths is not None else tuple(reversed(self.encoder_widths))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_widths"] = list(self.encoder_widths)
        d["decoder_widths"] = None if self.decoder_widths is None else list(self.decoder_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "NetworkSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise SpecError(f"unknown NetworkSpec keys: {sorted(unknown)}")
        return cls(**d)


def _encoder(g: LayerGraph, spec: NetworkSpec, rng, dtype) -> list[str]:
    """Append conv-BN-ReLU-pool stages; return the pre-pool feature node names."""
    skips = []
    c_in = spec.in_channels
    for i, width in enumerate(spec.encoder_widths, start=1):
        g.add(f"enc{i}_conv", Conv2D(c_in, width, spec.kernel, rng=rng, dtype=dtype, bias=False))
        g.add(f"enc{i}_bn", BatchNorm(width, dtype=dtype))
        skips.append(g.add(f"enc{i}_relu", ReLU()))
        g.add(f"enc{i}_pool", MaxPool(2))
        c_in = width
    return skips


def build_brdfnet(spec: NetworkSpec, dtype=np.float32) -> LayerGraph:
    """Conv/pool encoder followed by FC(hidden) -> ReLU -> FC(outputs)."""
    rng = np.random.default_rng(spec.seed)
    g = LayerGraph((spec.in_channels, spec.input_size, spec.input_size))
    _encoder(g, spec, rng, dtype)
    side = spec.input_size // 2 ** len(spec.encoder_widths)
    g.add("fc1", FullyConnected(spec.encoder_widths[-1] * side * side, spec.fc_hidden, rng=rng, dtype=dtype))
    g.add("fc1_relu", ReLU())
    g.add("fc_out", FullyConnected(spec.fc_hidden, spec.n_outputs, rng=rng, dtype=dtype))
    return g


def build_decoder_net(spec: NetworkSpec, out_channels: int = 3, dtype=np.float32) -> LayerGraph:
    """Encoder plus a mirrored upsampling decoder with skip concatenation and a sigmoid output.

    Each decoder stage is conv-BN-ReLU, x2 bilinear upsampling, then
    concatenation with the encoder feature map of the same resolution. The
    output conv has no batch normalization.
    """
    rng = np.random.default_rng(spec.seed)
    g = LayerGraph((spec.in_channels, spec.input_size, spec.input_size))
    skips = _encoder(g, spec, rng, dtype)
    c_in = spec.encoder_widths[-1]
    n = len(skips)
    for j, width in enumerate(spec.decoder, start=1):
        stage = n - j + 1
        g.add(f"dec{stage}_conv", Conv2D(c_in, width, spec.kernel, rng=rng, dtype=dtype, bias=False))
        g.add(f"dec{stage}_bn", BatchNorm(width, dtype=dtype))
        g.add(f"dec{stage}_relu", ReLU())
        up = g.add(f"dec{stage}_up", BilinearUpsample())
        skip = skips[stage - 1]
        g.add(f"dec{stage}_cat", Concat(), [up, skip])
        c_in = width + spec.encoder_widths[stage - 1]
    g.add("out_conv", Conv2D(c_in, out_channels, spec.kernel, rng=rng, dtype=dtype))
    g.add("out_sigmoid", Sigmoid())
    return g


SVBRDF_BRANCHES = ("homogeneous", "diffuse", "normal")


def build_svbrdfnet(spec: NetworkSpec, dtype=np.float32) -> dict[str, LayerGraph]:
    """Three separately trained nets sharing one encoder layout.

    ``homogeneous`` predicts log-relative specular albedo and log roughness
    per channel (6 values); ``diffuse`` and ``normal`` predict 3-channel maps
    in (0, 1).
    """
    if spec.in_channels != 3:
        raise SpecError("SVBRDF-net takes RGB input")
    head = NetworkSpec(**{**spec.to_dict(), "n_outputs": 6, "seed": spec.seed})
    return {
        "homogeneous": build_brdfnet(head, dtype),
        "diffuse": build_decoder_net(NetworkSpec(**{**spec.to_dict(), "seed": spec.seed + 1}), 3, dtype),
        "normal": build_decoder_net(NetworkSpec(**{**spec.to_dict(), "seed": spec.seed + 2}), 3, dtype),
    }


@dataclass(frozen=True)
class MLPSpec:
    n_inputs: int = 1
    hidden: tuple[int, ...] = field(default=(32, 32))
    n_outputs: int = 1
    seed: int = 0

    def to_dict(self) -> dict:
        return {"n_inputs": self.n_inputs, "hidden": list(self.hidden), "n_outputs": self.n_outputs, "seed": self.seed}


def build_mlp(spec: MLPSpec, dtype=np.float32) -> LayerGraph:
    rng = np.random.default_rng(spec.seed)
    g = LayerGraph((spec.n_inputs,))
    width = spec.n_inputs
    for i, h in enumerate(spec.hidden, start=1):
        g.add(f"fc{i}", FullyConnected(width, h, rng=rng, dtype=dtype))
        g.add(f"relu{i}", ReLU())
        width = h
    g.add("fc_out", FullyConnected(width, spec.n_outputs, rng=rng, dtype=dtype))
    return g
