"""The variable receptive-field blocks.

Three composable pieces, all resolution- and channel-preserving:

* :class:`MscfBlock` - N depthwise dilated branches with increasing
  receptive fields, fused under a learned spatial selection mask, gated
  against the input, with optional channel attention on the result.
* :class:`GConvBlock` - gated feed-forward: pointwise expansion to two
  chunks, a depthwise spatial gate on one chunk (x * sigmoid(1.702x)),
  hadamard against the other, pointwise restore, dropout, residual.
* :class:`GmcfBottleneck` - MSCF -> batch norm -> dropout inside one
  shortcut, then GConv (whose own residual forms the second shortcut).
* :class:`GmcfBlock` - a split/concat wrapper in the C2f style: split a
  pointwise projection into two branches, chain bottlenecks on the
  second, concatenate every intermediate, fuse with a pointwise conv.

Blocks hold their parameters in a flat named dict (see
:mod:`vrfnet.layers`); with ``rng=None`` every learnable starts at zero,
which makes GConv and the GMCF bottleneck exact identities in eval mode.
"""

from __future__ import annotations

import numpy as np

from .attention import ChannelAttention, SpatialAttention
from .config import ConfigError, GconvConfig, GmcfConfig, MscfConfig
from .eltwise import add, concat_channels, hadamard, slice_channels
from .layers import ParamBlock, debug_finite, sub_params
from .ops import (
    BatchNormState,
    ConvSpec,
    DropoutState,
    batch_norm,
    dropout,
    relu,
    sigmoid_gate,
)
from .tape import value_of
from .tensor import Rng, ShapeError, Tensor


class MscfBlock(ParamBlock):
    """Adaptive receptive-field fusion over depthwise dilated branches."""

    kind = "mscf"

    def __init__(self, cfg: MscfConfig, rng: Rng | None = None, dtype=np.float64):
        super().__init__()
        self.cfg = cfg
        for i, d in enumerate(cfg.dilations):
            spec = ConvSpec.same(cfg.c, cfg.c, cfg.dw_kernel, dilation=d, groups=cfg.c)
            self._add_conv(f"scale{i}", spec, rng, dtype)
        self._add_child("sa", SpatialAttention(cfg.n_scales, cfg.mask_kernel, rng, dtype))
        if cfg.use_ca:
            self._add_child("ca", ChannelAttention(cfg.c, cfg.ca_ratio, rng, dtype))

    @debug_finite
    def forward(self, x, params=None, mode: str = "eval"):
        if value_of(x).shape[1] != self.cfg.c:
            raise ShapeError(f"input has {value_of(x).shape[1]} channels, block wants {self.cfg.c}")
        p = self.resolve(params)
        feats = [self._conv(p, f"scale{i}", x) for i in range(self.cfg.n_scales)]
        mask = self._children["sa"].forward(concat_channels(feats), sub_params(p, "sa."))
        fused = None
        for i, f in enumerate(feats):
            term = hadamard(f, slice_channels(mask, i, i + 1))
            fused = term if fused is None else add(fused, term)
        y = hadamard(fused, x)
        if self.cfg.use_ca:
            y = hadamard(y, self._children["ca"].forward(y, sub_params(p, "ca.")))
        return y


class GConvBlock(ParamBlock):
    """Gated convolution feed-forward with residual passthrough."""

    kind = "gconv"

    def __init__(self, cfg: GconvConfig, rng: Rng | None = None, dtype=np.float64,
                 dropout_rng: Rng | None = None):
        super().__init__()
        self.cfg = cfg
        self._add_conv("proj", ConvSpec(cfg.c, 2 * cfg.hidden, 1), rng, dtype)
        self._add_conv(
            "dw", ConvSpec.same(cfg.hidden, cfg.hidden, cfg.dw_kernel, groups=cfg.hidden),
            rng, dtype,
        )
        self._add_conv("restore", ConvSpec(cfg.hidden, cfg.c, 1), rng, dtype)
        self._dropout = DropoutState(cfg.dropout, dropout_rng)

    @debug_finite
    def forward(self, x, params=None, mode: str = "eval"):
        return add(x, self.transform(x, params, mode))

    def transform(self, x, params=None, mode: str = "eval"):
        """The non-residual path: restore(gate(dw(x')) * v) with dropout."""
        if value_of(x).shape[1] != self.cfg.c:
            raise ShapeError(f"input has {value_of(x).shape[1]} channels, block wants {self.cfg.c}")
        p = self.resolve(params)
        h = self.cfg.hidden
        both = self._conv(p, "proj", x)
        x_prime = slice_channels(both, 0, h)
        v = slice_channels(both, h, 2 * h)
        g = self._conv(p, "dw", x_prime)
        gated = sigmoid_gate(g) if self.cfg.activation == "sigmoid_gate" else relu(g)
        restored = self._conv(p, "restore", hadamard(gated, v))
        return dropout(restored, self._dropout, mode)


class GmcfBottleneck(ParamBlock):
    """MSCF -> batch norm -> dropout -> GConv under dual shortcuts."""

    kind = "gmcf"

    def __init__(self, cfg: GmcfConfig, rng: Rng | None = None, dtype=np.float64,
                 dropout_rng: Rng | None = None):
        super().__init__()
        self.cfg = cfg
        self._add_child("mscf", MscfBlock(cfg.mscf, rng, dtype))
        # affine init: identity scale when randomly initialized, zero otherwise
        gamma0 = np.ones if rng is not None else np.zeros
        self._add_param("bn.gamma", Tensor.wrap(gamma0((1, cfg.c, 1, 1), dtype=dtype)))
        self._add_param("bn.beta", Tensor.wrap(np.zeros((1, cfg.c, 1, 1), dtype=dtype)))
        self.bn_state = BatchNormState(cfg.c, cfg.bn_eps, cfg.bn_momentum, dtype)
        self._add_child("gconv", GConvBlock(cfg.gconv, rng, dtype, dropout_rng))
        self._dropout = DropoutState(cfg.dropout, dropout_rng)

    def buffers(self):
        out = super().buffers()
        out["bn.running_mean"] = Tensor(self.bn_state.running_mean)
        out["bn.running_var"] = Tensor(self.bn_state.running_var)
        return out

    def set_buffers(self, new):
        super().set_buffers(new)
        if "bn.running_mean" in new:
            self.bn_state.running_mean = new["bn.running_mean"].data.copy()
        if "bn.running_var" in new:
            self.bn_state.running_var = new["bn.running_var"].data.copy()

    @debug_finite
    def forward(self, x, params=None, mode: str = "eval"):
        p = self.resolve(params)
        m = self._children["mscf"].forward(x, sub_params(p, "mscf."), mode)
        normed = batch_norm(m, p["bn.gamma"], p["bn.beta"], self.bn_state, mode)
        y1 = add(x, dropout(normed, self._dropout, mode))
        return self._children["gconv"].forward(y1, sub_params(p, "gconv."), mode)


class GmcfBlock(ParamBlock):
    """Split/concat wrapper chaining GMCF bottlenecks, C2f style."""

    kind = "gmcf-block"

    def __init__(self, cfg: GmcfConfig, rng: Rng | None = None, dtype=np.float64,
                 dropout_rng: Rng | None = None):
        super().__init__()
        self.cfg = cfg
        ch = cfg.hidden_width
        if cfg.mscf.use_ca and ch % cfg.mscf.ca_ratio:
            raise ConfigError(
                f"gmcf-block: branch width {ch} not divisible by ca_ratio {cfg.mscf.ca_ratio}"
            )
        self.ch = ch
        self._add_conv("cv1", ConvSpec(cfg.c, 2 * ch, 1), rng, dtype)
        inner = cfg.at_width(ch)
        for i in range(cfg.n_bottlenecks):
            self._add_child(f"m{i}", GmcfBottleneck(inner, rng, dtype, dropout_rng))
        self._add_conv("cv2", ConvSpec((2 + cfg.n_bottlenecks) * ch, cfg.c, 1), rng, dtype)

    @debug_finite
    def forward(self, x, params=None, mode: str = "eval"):
        p = self.resolve(params)
        both = self._conv(p, "cv1", x)
        branches = [slice_channels(both, 0, self.ch), slice_channels(both, self.ch, 2 * self.ch)]
        for i in range(self.cfg.n_bottlenecks):
            branches.append(
                self._children[f"m{i}"].forward(branches[-1], sub_params(p, f"m{i}."), mode)
            )
        return self._conv(p, "cv2", concat_channels(branches))


class ConvLayer(ParamBlock):
    """A bare convolution behind the block interface (profiling, tests)."""

    kind = "conv"

    def __init__(self, spec: ConvSpec, rng: Rng | None = None, dtype=np.float64):
        super().__init__()
        self.cfg = spec
        self._add_conv("conv", spec, rng, dtype)

    @debug_finite
    def forward(self, x, params=None, mode: str = "eval"):
        return self._conv(self.resolve(params), "conv", x)


_BLOCK_TYPES = {
    "mscf": MscfBlock,
    "gconv": GConvBlock,
    "gmcf": GmcfBottleneck,
    "gmcf-block": GmcfBlock,
}


def build_block(kind: str, cfg, rng: Rng | None = None, dtype=np.float64) -> ParamBlock:
    """Construct a block by CLI kind name."""
    try:
        cls = _BLOCK_TYPES[kind]
    except KeyError:
        raise ConfigError(f"unknown block kind {kind!r}") from None
    return cls(cfg, rng, dtype)


def block_gradient_errors(block: ParamBlock, x: Tensor, mode: str = "eval",
                          h: float = 1e-6, fd_dtype=np.longdouble) -> "dict[str, float]":
    """Finite-difference check of every parameter and the input.

    The tape gradient of sum(output) is computed once in the input's own
    dtype (float64 required); the central-difference probes are then
    evaluated in extended precision so the comparison is limited by the
    tape's rounding rather than by cancellation between f(t+h) and
    f(t-h). Returns max relative error per name ('input' plus each
    parameter), denominator floored at 1e-8. Requires a deterministic
    forward (dropout p must be 0).
    """
    from .eltwise import sum_all
    from .tape import Tape

    if x.dtype != np.float64:
        raise TypeError("gradient checks require float64 blocks and inputs")
    params = block.params()

    tape = Tape()
    xn = tape.leaf(x, "input")
    pnodes = {k: tape.leaf(t, k) for k, t in params.items()}
    loss = sum_all(block.forward(xn, pnodes, mode))
    grads = tape.backward(loss)

    fd_x = x.astype(fd_dtype)
    fd_params = {k: t.astype(fd_dtype) for k, t in params.items()}

    errors: dict[str, float] = {}
    errors["input"] = _fd_max_rel_err(
        lambda t: block.forward(t, fd_params, mode), fd_x, grads[xn.id], h
    )
    for name in params:
        def f(t, _name=name):
            bound = dict(fd_params)
            bound[_name] = t
            return block.forward(fd_x, bound, mode)

        errors[name] = _fd_max_rel_err(f, fd_params[name], grads[pnodes[name].id], h)
    return errors


def _fd_max_rel_err(f, at: Tensor, grad: Tensor, h: float) -> float:
    flat = at.data.reshape(-1)
    g = grad.data.reshape(-1).astype(at.dtype)
    step = at.dtype.type(h)
    worst = 0.0
    for i in range(flat.size):
        arr = flat.copy()
        arr[i] += step
        fp = f(Tensor.wrap(arr.reshape(at.shape))).data.sum()
        arr[i] -= 2 * step
        fm = f(Tensor.wrap(arr.reshape(at.shape))).data.sum()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise ValueError("non-finite loss during finite differencing")
        fd = (fp - fm) / (2 * step)
        rel = abs(fd - g[i]) / max(abs(g[i]), 1e-8)
        worst = max(worst, float(rel))
    return worst
