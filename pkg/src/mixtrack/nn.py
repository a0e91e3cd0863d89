"""Small module system: parameter containers built on the tensor kernel."""

from __future__ import annotations

import numpy as np

from .tensor import (
    DimensionError,
    Tensor,
    conv2d,
    gelu,
    layer_norm,
    relu,
)


def trunc_normal(shape, std: float, rng: np.random.Generator) -> np.ndarray:
    """Normal(0, std) resampled until every draw lies within 2 std."""
    out = rng.normal(0.0, std, size=shape)
    bad = np.abs(out) > 2.0 * std
    while bad.any():
        out[bad] = rng.normal(0.0, std, size=int(bad.sum()))
        bad = np.abs(out) > 2.0 * std
    return out


class Module:
    """Base container; tensors assigned as attributes become parameters."""

    def __init__(self):
        object.__setattr__(self, "_params", {})
        object.__setattr__(self, "_buffers", {})
        object.__setattr__(self, "_modules", {})
        object.__setattr__(self, "training", True)

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._params[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def register_buffer(self, name: str, value: Tensor) -> None:
        """Attach a non-learnable tensor that still belongs in checkpoints."""
        value.requires_grad = False
        self._buffers[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = ""):
        for name, p in self._params.items():
            yield prefix + name, p
        for name, m in self._modules.items():
            yield from m.named_parameters(prefix + name + ".")

    def parameters(self):
        for _, p in self.named_parameters():
            yield p

    def named_states(self, prefix: str = ""):
        """Parameters plus buffers, in deterministic declaration order."""
        for name, p in self._params.items():
            yield prefix + name, p
        for name, b in self._buffers.items():
            yield prefix + name, b
        for name, m in self._modules.items():
            yield from m.named_states(prefix + name + ".")

    def load_states(self, arrays: dict) -> None:
        states = dict(self.named_states())
        missing = sorted(set(states) - set(arrays))
        extra = sorted(set(arrays) - set(states))
        if missing or extra:
            raise DimensionError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, t in states.items():
            arr = np.asarray(arrays[name], dtype=t.data.dtype)
            if arr.shape != t.data.shape:
                raise DimensionError(f"{name}: shape {arr.shape} != {t.data.shape}")
            t.data = np.ascontiguousarray(arr)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def freeze(self) -> None:
        for p in self.parameters():
            p.requires_grad = False

    def train(self, mode: bool = True):
        object.__setattr__(self, "training", mode)
        for m in self._modules.values():
            m.train(mode)
        return self

    def eval(self):
        return self.train(False)


class ModuleList(Module):
    def __init__(self, modules=()):
        super().__init__()
        self._items = []
        for m in modules:
            self.append(m)

    def append(self, module: Module) -> None:
        self._modules[str(len(self._items))] = module
        self._items.append(module)

    def __iter__(self):
        return iter(self._items)

    def __len__(self):
        return len(self._items)

    def __getitem__(self, i):
        return self._items[i]


class Linear(Module):
    def __init__(self, in_features: int, out_features: int, rng, bias: bool = True,
                 zero_init: bool = False):
        super().__init__()
        # zero_init makes residual branches start as identity maps, which
        # stabilizes and speeds up short from-scratch runs
        weight = (np.zeros((in_features, out_features)) if zero_init
                  else trunc_normal((in_features, out_features), 0.02, rng))
        self.weight = Tensor(weight, requires_grad=True)
        self.bias = Tensor(np.zeros(out_features), requires_grad=True) if bias else None

    def __call__(self, x: Tensor) -> Tensor:
        y = x @ self.weight
        if self.bias is not None:
            y = y + self.bias
        return y


class LayerNorm(Module):
    def __init__(self, dim: int, eps: float = 1e-6):
        super().__init__()
        self.gamma = Tensor(np.ones(dim), requires_grad=True)
        self.beta = Tensor(np.zeros(dim), requires_grad=True)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)


class Conv2d(Module):
    def __init__(self, in_ch: int, out_ch: int, kernel: int, rng,
                 stride: int = 1, padding: int = 0, groups: int = 1, bias: bool = True):
        super().__init__()
        self.weight = Tensor(
            trunc_normal((out_ch, in_ch // groups, kernel, kernel), 0.02, rng), requires_grad=True
        )
        self.bias = Tensor(np.zeros(out_ch), requires_grad=True) if bias else None
        self.stride = stride
        self.padding = padding
        self.groups = groups

    def __call__(self, x: Tensor) -> Tensor:
        return conv2d(x, self.weight, self.bias, self.stride, self.padding, self.groups)


class GroupNorm(Module):
    """Per-sample normalization over channel groups of an NCHW map."""

    def __init__(self, num_groups: int, channels: int, eps: float = 1e-6):
        super().__init__()
        if channels % num_groups:
            raise DimensionError("GroupNorm channels must divide into groups")
        self.num_groups = num_groups
        self.channels = channels
        self.eps = eps
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x.reshape((1,) + x.shape)
        b, c, h, w = x.shape
        g = self.num_groups
        flat = x.reshape(b, g, (c // g) * h * w)
        mu = flat.mean(axis=2, keepdims=True)
        xc = flat - mu
        var = (xc * xc).mean(axis=2, keepdims=True)
        xhat = xc / (var + self.eps) ** 0.5
        y = xhat.reshape(b, c, h, w)
        y = y * self.gamma.reshape(1, c, 1, 1) + self.beta.reshape(1, c, 1, 1)
        return y.reshape((c, h, w)) if squeeze else y


class BatchNorm2d(Module):
    """Classic batch norm; kept behind a flag for the conv heads."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        super().__init__()
        self.eps = eps
        self.momentum = momentum
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.beta = Tensor(np.zeros(channels), requires_grad=True)
        self.register_buffer("running_mean", Tensor(np.zeros(channels)))
        self.register_buffer("running_var", Tensor(np.ones(channels)))

    def __call__(self, x: Tensor) -> Tensor:
        squeeze = x.ndim == 3
        if squeeze:
            x = x.reshape((1,) + x.shape)
        b, c, h, w = x.shape
        if self.training:
            flat = x.transpose(1, 0, 2, 3).reshape(c, b * h * w)
            mu = flat.mean(axis=1)
            var = ((flat - mu.reshape(c, 1)) ** 2).mean(axis=1)
            m = self.momentum
            self.running_mean.data = (1 - m) * self.running_mean.data + m * mu.data
            self.running_var.data = (1 - m) * self.running_var.data + m * var.data
        else:
            mu = self.running_mean
            var = self.running_var
        xhat = (x - mu.reshape(1, c, 1, 1)) / ((var + self.eps) ** 0.5).reshape(1, c, 1, 1)
        y = xhat * self.gamma.reshape(1, c, 1, 1) + self.beta.reshape(1, c, 1, 1)
        return y.reshape((c, h, w)) if squeeze else y


class Mlp(Module):
    """Two-layer transformer MLP with GELU; the output layer starts at zero
    so the residual branch is initially inert."""

    def __init__(self, dim: int, hidden: int, rng):
        super().__init__()
        self.fc1 = Linear(dim, hidden, rng)
        self.fc2 = Linear(hidden, dim, rng, zero_init=True)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(gelu(self.fc1(x)))


def norm_groups(channels: int, preferred: int = 8) -> int:
    """Largest group count <= preferred that divides the channel width."""
    for g in range(min(preferred, channels), 0, -1):
        if channels % g == 0:
            return g
    return 1


class ConvNormAct(Module):
    """Conv + (group|batch) norm + ReLU, the localization-head building block."""

    def __init__(self, in_ch: int, out_ch: int, rng, kernel: int = 3,
                 stride: int = 1, padding: int = 1, norm: str = "group"):
        super().__init__()
        self.conv = Conv2d(in_ch, out_ch, kernel, rng, stride=stride, padding=padding)
        if norm == "group":
            self.norm = GroupNorm(norm_groups(out_ch), out_ch)
        elif norm == "batch":
            self.norm = BatchNorm2d(out_ch)
        else:
            raise ValueError(f"unknown norm kind {norm!r}")

    def __call__(self, x: Tensor) -> Tensor:
        return relu(self.norm(self.conv(x)))
