"""Block hyperparameter configs and strict JSON run configs.

Unknown keys are rejected everywhere so a typo in a config file fails
loudly instead of silently running with defaults.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

BLOCK_KINDS = ("mscf", "gconv", "gmcf", "gmcf-block")

DTYPES = {"f32": np.float32, "f64": np.float64}


class ConfigError(ValueError):
    """Invalid or inconsistent configuration."""


def default_hidden(c: int) -> int:
    """Gated-conv hidden width: floor(2c/3)."""
    return (2 * c) // 3


@dataclass(frozen=True)
class MscfConfig:
    """Multi-scale context fusion block hyperparameters."""

    c: int
    n_scales: int = 3
    dilations: tuple = (3, 5, 7)
    dw_kernel: int = 3
    mask_kernel: int = 7
    ca_ratio: int = 4
    use_ca: bool = True

    def __post_init__(self):
        object.__setattr__(self, "dilations", tuple(self.dilations))
        if self.c < 1:
            raise ConfigError("mscf: channels must be >= 1")
        if len(self.dilations) != self.n_scales:
            raise ConfigError(
                f"mscf: {len(self.dilations)} dilations given for n_scales={self.n_scales}"
            )
        if any(d < 1 for d in self.dilations):
            raise ConfigError("mscf: dilations must be >= 1")
        if self.dw_kernel % 2 == 0 or self.mask_kernel % 2 == 0:
            raise ConfigError("mscf: kernels must be odd (same padding)")
        if self.use_ca and self.c % self.ca_ratio:
            raise ConfigError(f"mscf: channels {self.c} not divisible by ca_ratio {self.ca_ratio}")


@dataclass(frozen=True)
class GconvConfig:
    """Gated convolution block hyperparameters."""

    c: int
    hidden: int | None = None
    dw_kernel: int = 3
    dropout: float = 0.0
    activation: str = "sigmoid_gate"

    def __post_init__(self):
        if self.c < 1:
            raise ConfigError("gconv: channels must be >= 1")
        if self.hidden is None:
            object.__setattr__(self, "hidden", default_hidden(self.c))
        if self.hidden < 1:
            raise ConfigError(f"gconv: hidden width {self.hidden} must be >= 1")
        if self.dw_kernel % 2 == 0:
            raise ConfigError("gconv: dw_kernel must be odd (same padding)")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("gconv: dropout must be in [0, 1)")
        if self.activation not in ("sigmoid_gate", "relu"):
            raise ConfigError(f"gconv: unknown activation {self.activation!r}")


@dataclass(frozen=True)
class GmcfConfig:
    """Gated multi-scale fusion bottleneck (and its split/concat wrapper)."""

    c: int
    mscf: MscfConfig = None
    gconv: GconvConfig = None
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    dropout: float = 0.0
    n_bottlenecks: int = 1
    e: float = 0.5

    def __post_init__(self):
        if self.c < 1:
            raise ConfigError("gmcf: channels must be >= 1")
        if self.mscf is None:
            object.__setattr__(self, "mscf", MscfConfig(c=self.c))
        if self.gconv is None:
            object.__setattr__(self, "gconv", GconvConfig(c=self.c))
        if self.mscf.c != self.c or self.gconv.c != self.c:
            raise ConfigError("gmcf: sub-config channel widths must equal c")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("gmcf: dropout must be in [0, 1)")
        if self.n_bottlenecks < 0:
            raise ConfigError("gmcf: n_bottlenecks must be >= 0")

    @property
    def hidden_width(self) -> int:
        """Wrapper branch width e*c; must be integral."""
        ch = self.e * self.c
        if ch != int(ch) or int(ch) < 1:
            raise ConfigError(f"gmcf: hidden width e*c = {ch} is not a positive integer")
        return int(ch)

    def at_width(self, width: int) -> "GmcfConfig":
        """Same hyperparameters re-targeted at a different channel width
        (used for the bottlenecks inside the wrapper)."""
        return GmcfConfig(
            c=width,
            mscf=MscfConfig(
                c=width,
                n_scales=self.mscf.n_scales,
                dilations=self.mscf.dilations,
                dw_kernel=self.mscf.dw_kernel,
                mask_kernel=self.mscf.mask_kernel,
                ca_ratio=self.mscf.ca_ratio,
                use_ca=self.mscf.use_ca,
            ),
            gconv=GconvConfig(
                c=width,
                hidden=None,
                dw_kernel=self.gconv.dw_kernel,
                dropout=self.gconv.dropout,
                activation=self.gconv.activation,
            ),
            bn_eps=self.bn_eps,
            bn_momentum=self.bn_momentum,
            dropout=self.dropout,
            n_bottlenecks=self.n_bottlenecks,
            e=self.e,
        )


def _take(d: dict, allowed: dict, where: str) -> dict:
    unknown = set(d) - set(allowed)
    if unknown:
        raise ConfigError(f"{where}: unknown key(s) {sorted(unknown)}; allowed: {sorted(allowed)}")
    out = dict(allowed)
    out.update(d)
    return out


def mscf_config_from_dict(c: int, d: dict) -> MscfConfig:
    vals = _take(
        d,
        {
            "n_scales": 3,
            "dilations": (3, 5, 7),
            "dw_kernel": 3,
            "mask_kernel": 7,
            "ca_ratio": 4,
            "use_ca": True,
        },
        "module(mscf)",
    )
    return MscfConfig(c=c, **vals)


def gconv_config_from_dict(c: int, d: dict) -> GconvConfig:
    vals = _take(
        d,
        {"hidden": None, "dw_kernel": 3, "dropout": 0.0, "activation": "sigmoid_gate"},
        "module(gconv)",
    )
    return GconvConfig(c=c, **vals)


def gmcf_config_from_dict(c: int, d: dict) -> GmcfConfig:
    vals = _take(
        d,
        {
            "mscf": {},
            "gconv": {},
            "bn_eps": 1e-5,
            "bn_momentum": 0.1,
            "dropout": 0.0,
            "n_bottlenecks": 1,
            "e": 0.5,
        },
        "module(gmcf)",
    )
    return GmcfConfig(
        c=c,
        mscf=mscf_config_from_dict(c, vals["mscf"]),
        gconv=gconv_config_from_dict(c, vals["gconv"]),
        bn_eps=vals["bn_eps"],
        bn_momentum=vals["bn_momentum"],
        dropout=vals["dropout"],
        n_bottlenecks=vals["n_bottlenecks"],
        e=vals["e"],
    )


def block_config(kind: str, c: int, module: dict | None = None):
    module = module or {}
    if kind == "mscf":
        return mscf_config_from_dict(c, module)
    if kind == "gconv":
        return gconv_config_from_dict(c, module)
    if kind in ("gmcf", "gmcf-block"):
        return gmcf_config_from_dict(c, module)
    raise ConfigError(f"unknown block kind {kind!r}; expected one of {BLOCK_KINDS}")


@dataclass
class RunConfig:
    """One CLI invocation, fully resolved (paths absolute, keys checked)."""

    block: str | None = None
    channels: int = 8
    seed: int = 0
    dtype: str = "f64"
    input_shape: tuple | None = None
    tolerance: float | None = None
    out_dir: Path | None = None
    module: dict = field(default_factory=dict)

    @property
    def np_dtype(self):
        return DTYPES[self.dtype]

    def resolved_input_shape(self, default_hw: int = 6) -> tuple:
        if self.input_shape is not None:
            return tuple(self.input_shape)
        return (1, self.channels, default_hw, default_hw)

    def build_block_config(self):
        if self.block is None:
            raise ConfigError("no block selected (use --block or the config file)")
        return block_config(self.block, self.channels, self.module)


def load_run_config(path) -> RunConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    vals = _take(
        raw,
        {
            "block": None,
            "channels": 8,
            "seed": 0,
            "dtype": "f64",
            "input_shape": None,
            "tolerance": None,
            "out_dir": None,
            "module": {},
        },
        str(path),
    )
    cfg = RunConfig(
        block=vals["block"],
        channels=int(vals["channels"]),
        seed=int(vals["seed"]),
        dtype=vals["dtype"],
        input_shape=tuple(vals["input_shape"]) if vals["input_shape"] is not None else None,
        tolerance=vals["tolerance"],
        out_dir=Path(vals["out_dir"]).resolve() if vals["out_dir"] is not None else None,
        module=vals["module"],
    )
    validate_run_config(cfg)
    return cfg


def validate_run_config(cfg: RunConfig) -> None:
    if cfg.block is not None and cfg.block not in BLOCK_KINDS:
        raise ConfigError(f"unknown block {cfg.block!r}; expected one of {BLOCK_KINDS}")
    if cfg.dtype not in DTYPES:
        raise ConfigError(f"dtype must be one of {sorted(DTYPES)}, got {cfg.dtype!r}")
    if cfg.channels < 1:
        raise ConfigError("channels must be >= 1")
    if cfg.input_shape is not None:
        if len(cfg.input_shape) != 4 or any(int(d) < 1 for d in cfg.input_shape):
            raise ConfigError(f"input_shape must be 4 positive dims, got {cfg.input_shape}")
        if cfg.block is not None and cfg.input_shape[1] != cfg.channels:
            raise ConfigError(
                f"input_shape channel dim {cfg.input_shape[1]} != channels {cfg.channels}"
            )
    if cfg.tolerance is not None and cfg.tolerance < 0:
        raise ConfigError("tolerance must be >= 0")
    if not isinstance(cfg.module, dict):
        raise ConfigError("module must be a JSON object")
