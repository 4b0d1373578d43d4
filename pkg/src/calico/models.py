"""Shared multi-head network: class logits feed both a softmax classifier and
an unnormalized log-density scorer.

A single network maps inputs to K real logits. The classifier head applies a
softmax; the density head reads log-sum-exp of the logits as an unnormalized
log-density (the normalizer is intractable and never materialized), so the
input energy is the negative log-sum-exp.

Networks expose a ``first_stage``/``upper_stage`` split so samplers can reuse
the upper-stage backward pass across several input updates.
"""

from __future__ import annotations

import importlib
import json
import os
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from .errors import FormatError, NumericError, ValidationError

_ARCH_VERSION = 1

_ACTIVATIONS = {"swish": nn.SiLU, "relu": nn.ReLU, "tanh": nn.Tanh}
_TORCH_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass(frozen=True)
class ArchSpec:
    """Architecture descriptor; enough to rebuild the network skeleton."""

    in_shape: tuple
    n_classes: int
    kind: str = "mlp"  # mlp | cnn | custom:<module>:<factory>
    hidden: tuple = (64, 64)
    activation: str = "swish"
    dtype: str = "float32"

    def __post_init__(self):
        object.__setattr__(self, "in_shape", tuple(int(s) for s in self.in_shape))
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        if self.n_classes < 1:
            raise ValidationError("n_classes must be >= 1")
        if self.activation not in _ACTIVATIONS:
            raise ValidationError(f"unknown activation '{self.activation}'")
        if self.dtype not in _TORCH_DTYPES:
            raise ValidationError(f"unknown dtype '{self.dtype}'")
        if self.kind == "cnn" and len(self.in_shape) != 3:
            raise ValidationError("cnn arch requires an (H, W, C) input shape")

    @property
    def in_dim(self) -> int:
        return int(np.prod(self.in_shape))

    @property
    def torch_dtype(self) -> torch.dtype:
        return _TORCH_DTYPES[self.dtype]


class MLPNet(nn.Module):
    """Fully connected net; first_stage is the first linear block."""

    def __init__(self, in_dim: int, hidden: tuple, n_classes: int, activation: str):
        super().__init__()
        act = _ACTIVATIONS[activation]
        self.fc_in = nn.Linear(in_dim, hidden[0])
        self.act_in = act()
        body = []
        for a, b in zip(hidden[:-1], hidden[1:]):
            body += [nn.Linear(a, b), act()]
        self.body = nn.Sequential(*body)
        self.head = nn.Linear(hidden[-1], n_classes)

    def first_stage(self, x):
        return self.act_in(self.fc_in(x))

    def upper_stage(self, h):
        return self.head(self.body(h))

    def forward(self, x):
        return self.upper_stage(self.first_stage(x))


class ConvNet(nn.Module):
    """Two conv blocks with global average pooling; takes flat rows and
    reshapes to (N, C, H, W) internally."""

    def __init__(self, in_shape: tuple, hidden: tuple, n_classes: int,
                 activation: str):
        super().__init__()
        h, w, c = in_shape
        self.in_shape = (h, w, c)
        act = _ACTIVATIONS[activation]
        ch1, ch2 = (hidden + (32,))[:2]
        self.conv1 = nn.Conv2d(c, ch1, kernel_size=3, padding=1)
        self.act1 = act()
        self.pool1 = nn.MaxPool2d(2)
        self.conv2 = nn.Conv2d(ch1, ch2, kernel_size=3, padding=1)
        self.act2 = act()
        self.pool2 = nn.MaxPool2d(2)
        self.gap = nn.AdaptiveAvgPool2d(1)
        self.head = nn.Linear(ch2, n_classes)

    def first_stage(self, x):
        h, w, c = self.in_shape
        img = x.reshape(-1, h, w, c).permute(0, 3, 1, 2)
        return self.act1(self.conv1(img))

    def upper_stage(self, hmap):
        z = self.pool2(self.act2(self.conv2(self.pool1(hmap))))
        return self.head(self.gap(z).flatten(1))

    def forward(self, x):
        return self.upper_stage(self.first_stage(x))


@dataclass
class ModelState:
    """Network parameters plus the descriptor that shaped them."""

    arch: ArchSpec
    net: nn.Module = field(repr=False)
    init_seed: int = 0

    @property
    def n_params(self) -> int:
        return sum(p.numel() for p in self.net.parameters())


def _he_init(net: nn.Module, rng: np.random.Generator, dtype: torch.dtype) -> None:
    # fan-in scaled normal weights, zero biases
    for mod in net.modules():
        if isinstance(mod, nn.Linear):
            fan_in = mod.in_features
        elif isinstance(mod, nn.Conv2d):
            fan_in = mod.in_channels * mod.kernel_size[0] * mod.kernel_size[1]
        else:
            continue
        std = float(np.sqrt(2.0 / fan_in))
        w = rng.standard_normal(tuple(mod.weight.shape)) * std
        with torch.no_grad():
            mod.weight.copy_(torch.as_tensor(w, dtype=dtype))
            if mod.bias is not None:
                mod.bias.zero_()


def _build_net(arch: ArchSpec) -> nn.Module:
    if arch.kind == "mlp":
        net = MLPNet(arch.in_dim, arch.hidden, arch.n_classes, arch.activation)
    elif arch.kind == "cnn":
        net = ConvNet(arch.in_shape, arch.hidden, arch.n_classes, arch.activation)
    elif arch.kind.startswith("custom:"):
        try:
            _, module_name, factory_name = arch.kind.split(":", 2)
        except ValueError:
            raise ValidationError(
                "custom arch kind must be 'custom:<module>:<factory>'"
            ) from None
        factory = getattr(importlib.import_module(module_name), factory_name)
        net = factory(arch)
        for attr in ("first_stage", "upper_stage"):
            if not hasattr(net, attr):
                raise ValidationError(f"custom network lacks {attr}()")
    else:
        raise ValidationError(f"unknown arch kind '{arch.kind}'")
    return net.to(arch.torch_dtype)


def build_model(arch: ArchSpec, seed: int = 0) -> ModelState:
    """Construct and initialize a network, deterministically given seed."""
    net = _build_net(arch)
    _he_init(net, np.random.default_rng(seed), arch.torch_dtype)
    return ModelState(arch=arch, net=net, init_seed=seed)


def _as_batch(state: ModelState, x: np.ndarray) -> tuple[torch.Tensor, bool]:
    x = np.asarray(x)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != state.arch.in_dim:
        raise ValidationError(
            f"input dimension {x.shape} does not match arch in_dim="
            f"{state.arch.in_dim}"
        )
    return torch.as_tensor(x, dtype=state.arch.torch_dtype), single


def _locate_nonfinite(state: ModelState, xt: torch.Tensor) -> str:
    with torch.no_grad():
        h = state.net.first_stage(xt)
        if not torch.isfinite(h).all():
            return "first_stage"
    return "upper_stage"


def logits(state: ModelState, x: np.ndarray) -> np.ndarray:
    """Deterministic forward pass; (K,) for a single input, (N, K) batched."""
    xt, single = _as_batch(state, x)
    with torch.no_grad():
        out = state.net(xt)
    if not torch.isfinite(out).all():
        raise NumericError(
            f"non-finite activation in {_locate_nonfinite(state, xt)}"
        )
    arr = out.numpy()
    return arr[0] if single else arr


def posterior(logit_values: np.ndarray) -> np.ndarray:
    """Softmax with max-shifted exponentials; rows sum to one."""
    l = np.asarray(logit_values, dtype=np.float64)
    if not np.all(np.isfinite(l)):
        raise ValidationError("logits must be finite")
    shifted = l - l.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_density_unnorm(logit_values: np.ndarray):
    """log-sum-exp of the logits: the unnormalized input log-density.

    The energy of an input is the negative of this value; the normalizer is
    never computed.
    """
    l = np.asarray(logit_values, dtype=np.float64)
    if not np.all(np.isfinite(l)):
        raise ValidationError("logits must be finite")
    m = l.max(axis=-1)
    out = m + np.log(np.sum(np.exp(l - np.expand_dims(m, -1)), axis=-1))
    return float(out) if out.ndim == 0 else out


def confidence(p: np.ndarray):
    """Maximum posterior probability and its class index (ties -> lowest
    index). Accepts a single simplex vector or a batch of rows."""
    p = np.asarray(p, dtype=np.float64)
    sums = p.sum(axis=-1)
    if np.any(p < -1e-9) or np.any(np.abs(sums - 1.0) > 1e-6):
        raise ValidationError("input is not a probability simplex vector")
    idx = p.argmax(axis=-1)
    conf = p.max(axis=-1)
    if p.ndim == 1:
        return float(conf), int(idx)
    return conf, idx


def energy_torch(net: nn.Module, xt: torch.Tensor) -> torch.Tensor:
    """Per-sample energy, negative log-sum-exp of the logits."""
    return -torch.logsumexp(net(xt), dim=1)


def input_energy(state: ModelState, x: np.ndarray):
    """Energy values for numpy inputs (diagnostics)."""
    xt, single = _as_batch(state, x)
    with torch.no_grad():
        e = energy_torch(state.net, xt)
    arr = e.numpy()
    return float(arr[0]) if single else arr


def grad_energy_input(state: ModelState, x: np.ndarray) -> np.ndarray:
    """Gradient of the input energy with respect to the input itself."""
    xt, single = _as_batch(state, x)
    xt.requires_grad_(True)
    e = energy_torch(state.net, xt).sum()
    if not torch.isfinite(e):
        raise NumericError("non-finite energy in gradient computation")
    (g,) = torch.autograd.grad(e, xt)
    arr = g.numpy()
    return arr[0] if single else arr


def params_vector(state: ModelState) -> np.ndarray:
    """Flat copy of all parameters."""
    return nn.utils.parameters_to_vector(state.net.parameters()).detach().numpy().copy()


def set_params_vector(state: ModelState, vec: np.ndarray) -> None:
    vec = np.asarray(vec)
    if vec.size != state.n_params:
        raise ValidationError(
            f"parameter vector length {vec.size} != model size {state.n_params}"
        )
    if not np.all(np.isfinite(vec)):
        raise ValidationError("parameters must be finite")
    t = torch.as_tensor(vec, dtype=state.arch.torch_dtype)
    nn.utils.vector_to_parameters(t, state.net.parameters())


def clone_model(state: ModelState) -> ModelState:
    out = build_model(state.arch, state.init_seed)
    set_params_vector(out, params_vector(state))
    return out


def save_model(state: ModelState, path: str) -> None:
    """Checkpoint: arch descriptor document plus raw parameter vector."""
    os.makedirs(path, exist_ok=True)
    vec = params_vector(state)
    doc = {
        "format_version": _ARCH_VERSION,
        "kind": state.arch.kind,
        "in_shape": list(state.arch.in_shape),
        "n_classes": state.arch.n_classes,
        "hidden": list(state.arch.hidden),
        "activation": state.arch.activation,
        "dtype": state.arch.dtype,
        "n_params": int(vec.size),
        "byte_order": "little",
        "init_seed": state.init_seed,
    }
    with open(os.path.join(path, "arch.json"), "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    wire = "<f8" if state.arch.dtype == "float64" else "<f4"
    vec.astype(wire).tofile(os.path.join(path, "params.bin"))


def load_model(path: str) -> ModelState:
    arch_path = os.path.join(path, "arch.json")
    if not os.path.exists(arch_path):
        raise FormatError(f"arch.json: missing in {path}")
    with open(arch_path, encoding="utf-8") as fh:
        doc = json.load(fh)
    arch = ArchSpec(
        in_shape=tuple(doc["in_shape"]),
        n_classes=int(doc["n_classes"]),
        kind=doc.get("kind", "mlp"),
        hidden=tuple(doc.get("hidden", (64, 64))),
        activation=doc.get("activation", "swish"),
        dtype=doc.get("dtype", "float32"),
    )
    wire = "<f8" if arch.dtype == "float64" else "<f4"
    vec = np.fromfile(os.path.join(path, "params.bin"), dtype=wire)
    if vec.size != int(doc["n_params"]):
        raise FormatError(
            f"params.bin: expected {doc['n_params']} values, found {vec.size}"
        )
    state = build_model(arch, seed=int(doc.get("init_seed", 0)))
    set_params_vector(state, vec)
    return state
