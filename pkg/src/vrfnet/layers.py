"""Parameter bookkeeping shared by the attention and fusion blocks.

A block owns an ordered, flat dict of named parameter tensors plus any
non-learnable buffers. ``forward(x, params=None, mode="eval")`` reads
parameters from the given dict (falling back to the block's own), which
lets gradient checks re-run the same forward with selected parameters
bound to tape nodes.
"""

from __future__ import annotations

import functools
from collections import OrderedDict

import numpy as np

from .ops import ConvSpec, conv2d, init_conv_params
from .tape import value_of
from .tensor import Rng, ShapeError, Tensor


def debug_finite(forward):
    """Debug-build invariant: finite inputs never produce NaN/Inf outputs.

    The check compiles away under ``python -O``.
    """

    @functools.wraps(forward)
    def wrapper(self, x, params=None, mode="eval"):
        out = forward(self, x, params, mode)
        assert np.isfinite(value_of(out).data).all(), \
            f"{type(self).__name__} produced non-finite values"
        return out

    return wrapper


class ParamBlock:
    """Base: named parameters, child blocks, conv helpers."""

    def __init__(self):
        self._params: "OrderedDict[str, Tensor]" = OrderedDict()
        self._specs: dict[str, ConvSpec] = {}
        self._children: "OrderedDict[str, ParamBlock]" = OrderedDict()

    # -- registry ---------------------------------------------------------

    def _add_conv(self, name: str, spec: ConvSpec, rng: Rng | None, dtype) -> None:
        w, b = init_conv_params(spec, rng, dtype)
        self._specs[name] = spec
        self._params[name + ".w"] = w
        if b is not None:
            self._params[name + ".b"] = b

    def _add_param(self, name: str, t: Tensor) -> None:
        self._params[name] = t

    def _add_child(self, name: str, child: "ParamBlock") -> None:
        self._children[name] = child

    def conv_specs(self) -> dict[str, ConvSpec]:
        """Flat name -> ConvSpec map, children prefixed."""
        out = dict(self._specs)
        for cname, child in self._children.items():
            for k, v in child.conv_specs().items():
                out[f"{cname}.{k}"] = v
        return out

    # -- parameter access ---------------------------------------------------

    def params(self) -> "OrderedDict[str, Tensor]":
        """Flat ordered name -> tensor map (children prefixed)."""
        out = OrderedDict(self._params)
        for cname, child in self._children.items():
            for k, v in child.params().items():
                out[f"{cname}.{k}"] = v
        return out

    def buffers(self) -> "OrderedDict[str, Tensor]":
        """Non-learnable state (running statistics); empty by default."""
        out = OrderedDict()
        for cname, child in self._children.items():
            for k, v in child.buffers().items():
                out[f"{cname}.{k}"] = v
        return out

    def set_params(self, new: "dict[str, Tensor]") -> None:
        """Replace parameters by name; names and shapes must match exactly."""
        current = self.params()
        if set(new) != set(current):
            missing = sorted(set(current) - set(new))
            extra = sorted(set(new) - set(current))
            raise KeyError(f"parameter name mismatch: missing={missing} extra={extra}")
        for name, t in new.items():
            if t.shape != current[name].shape:
                raise ShapeError(f"{name}: shape {t.shape} != expected {current[name].shape}")
        self._set_params_flat(new, prefix="")

    def _set_params_flat(self, new, prefix):
        for name in list(self._params):
            self._params[name] = new[prefix + name]
        for cname, child in self._children.items():
            child._set_params_flat(new, f"{prefix}{cname}.")

    def set_buffers(self, new: "dict[str, Tensor]") -> None:
        for cname, child in self._children.items():
            sub = {
                k[len(cname) + 1 :]: v for k, v in new.items() if k.startswith(cname + ".")
            }
            if sub:
                child.set_buffers(sub)

    # -- forward helpers ----------------------------------------------------

    def resolve(self, params) -> "dict[str, Tensor]":
        return self.params() if params is None else params

    def _conv(self, p, name: str, x):
        spec = self._specs[name]
        return conv2d(x, p[name + ".w"], p.get(name + ".b"), spec)

    def forward(self, x, params=None, mode: str = "eval"):
        raise NotImplementedError

    def __call__(self, x, params=None, mode: str = "eval"):
        return self.forward(x, params, mode)


def sub_params(p: dict, prefix: str) -> dict:
    """Select ``prefix.*`` entries and strip the prefix."""
    plen = len(prefix)
    return {k[plen:]: v for k, v in p.items() if k.startswith(prefix)}

