"""Analytical cost accounting and wall-clock micro-benchmarks.

Conventions (also stated in every report):

* MACs: one multiply-accumulate per kernel tap per output element,
  ``n * c_out * h_out * w_out * (c_in / groups) * k^2``. Zero-padding
  taps are counted, matching the formula and the instrumented oracle.
* FLOPs are reported as 2 * MACs.
* Elementwise work is tallied separately at 1 op per element, with two
  exceptions: the sigmoid gate x*sigmoid(1.702x) costs 3 (scale,
  sigmoid, multiply) and batch norm costs 2 (normalize, affine).
  Channel/spatial reductions cost 1 per input element; conv bias adds 1
  per output element; concat and channel slicing are free. Counts are
  for eval mode, so dropout contributes nothing.
* Parameter counts are cross-checked against the serialized manifest,
  not derived from formulas alone.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .attention import ChannelAttention, SpatialAttention
from .blocks import ConvLayer, GConvBlock, GmcfBlock, GmcfBottleneck, MscfBlock, ParamBlock
from .ops import ConvSpec
from .tensor import Rng

CONVENTION = "FLOPs = 2*MACs; padding taps counted; eval-mode elementwise costs"


@dataclass
class CostCounts:
    macs: int = 0
    eltwise: int = 0

    def __iadd__(self, other: "CostCounts"):
        self.macs += other.macs
        self.eltwise += other.eltwise
        return self


@dataclass
class CostReport:
    """Per-block cost summary; timing lives in its own section so golden
    comparisons can drop it mechanically."""

    block: str
    input_shape: tuple
    params: int
    macs: int
    flops: int
    eltwise_ops: int
    convention: str = CONVENTION
    timing: dict = field(default_factory=dict)

    def to_json_dict(self) -> dict:
        return {
            "block": self.block,
            "input_shape": list(self.input_shape),
            "params": self.params,
            "macs": self.macs,
            "flops": self.flops,
            "eltwise_ops": self.eltwise_ops,
            "convention": self.convention,
            "timing": self.timing,
        }


def count_params(block: ParamBlock) -> int:
    """Exact learnable element count (weights plus biases)."""
    return sum(t.size for t in block.params().values())


def conv_macs(spec: ConvSpec, n: int, h: int, w: int) -> int:
    ho, wo = spec.out_hw(h, w)
    return n * spec.c_out * ho * wo * (spec.c_in // spec.groups) * spec.k * spec.k


def _conv_cost(spec: ConvSpec, n: int, h: int, w: int) -> CostCounts:
    ho, wo = spec.out_hw(h, w)
    bias_elt = n * spec.c_out * ho * wo if spec.bias else 0
    return CostCounts(conv_macs(spec, n, h, w), bias_elt)


def _spatial_attention_cost(sa: SpatialAttention, n, c, h, w) -> CostCounts:
    cost = CostCounts(0, 2 * n * c * h * w)  # avg and max pooling
    cost += _conv_cost(sa.conv_specs()["conv"], n, h, w)
    cost.eltwise += n * sa.mask_channels * h * w  # sigmoid
    return cost


def _channel_attention_cost(ca: ChannelAttention, n, c, h, w) -> CostCounts:
    cost = CostCounts(0, n * c * h * w)  # global average pool
    cost += _conv_cost(ca.conv_specs()["reduce"], n, 1, 1)
    cost.eltwise += n * (c // ca.ratio)  # relu
    cost += _conv_cost(ca.conv_specs()["expand"], n, 1, 1)
    cost.eltwise += n * c  # sigmoid
    return cost


def _mscf_cost(block: MscfBlock, n, h, w) -> CostCounts:
    cfg = block.cfg
    size = n * cfg.c * h * w
    cost = CostCounts()
    for i in range(cfg.n_scales):
        cost += _conv_cost(block.conv_specs()[f"scale{i}"], n, h, w)
    cost += _spatial_attention_cost(block._children["sa"], n, cfg.n_scales * cfg.c, h, w)
    cost.eltwise += cfg.n_scales * size  # mask * feature per scale
    cost.eltwise += (cfg.n_scales - 1) * size  # scale accumulation
    cost.eltwise += size  # gate against the input
    if cfg.use_ca:
        cost += _channel_attention_cost(block._children["ca"], n, cfg.c, h, w)
        cost.eltwise += size  # channel weights applied
    return cost


def _gconv_cost(block: GConvBlock, n, h, w) -> CostCounts:
    cfg = block.cfg
    hid_size = n * cfg.hidden * h * w
    cost = _conv_cost(block.conv_specs()["proj"], n, h, w)
    cost += _conv_cost(block.conv_specs()["dw"], n, h, w)
    cost.eltwise += (3 if cfg.activation == "sigmoid_gate" else 1) * hid_size
    cost.eltwise += hid_size  # gate * value branch
    cost += _conv_cost(block.conv_specs()["restore"], n, h, w)
    cost.eltwise += n * cfg.c * h * w  # residual add
    return cost


def _gmcf_cost(block: GmcfBottleneck, n, h, w) -> CostCounts:
    size = n * block.cfg.c * h * w
    cost = _mscf_cost(block._children["mscf"], n, h, w)
    cost.eltwise += 2 * size  # batch norm
    cost.eltwise += size  # first shortcut add
    cost += _gconv_cost(block._children["gconv"], n, h, w)
    return cost


def _gmcf_block_cost(block: GmcfBlock, n, h, w) -> CostCounts:
    cost = _conv_cost(block.conv_specs()["cv1"], n, h, w)
    for i in range(block.cfg.n_bottlenecks):
        cost += _gmcf_cost(block._children[f"m{i}"], n, h, w)
    cost += _conv_cost(block.conv_specs()["cv2"], n, h, w)
    return cost


def count_costs(block: ParamBlock, input_shape) -> CostCounts:
    """Analytical MAC and elementwise counts for one forward pass."""
    n, c, h, w = input_shape
    if isinstance(block, ConvLayer):
        return _conv_cost(block.cfg, n, h, w)
    if isinstance(block, MscfBlock):
        return _mscf_cost(block, n, h, w)
    if isinstance(block, GConvBlock):
        return _gconv_cost(block, n, h, w)
    if isinstance(block, GmcfBottleneck):
        return _gmcf_cost(block, n, h, w)
    if isinstance(block, GmcfBlock):
        return _gmcf_block_cost(block, n, h, w)
    raise TypeError(f"no cost model for {type(block).__name__}")


def count_macs(block: ParamBlock, input_shape) -> int:
    return count_costs(block, input_shape).macs


def bench(block: ParamBlock, input_shape, reps: int, warmup: int = 2,
          seed: int = 0, threads: str | None = None) -> dict:
    """Median/IQR wall time of eval-mode forward over ``reps`` runs."""
    if reps < 3:
        raise ValueError("bench needs reps >= 3")
    dtype = next(iter(block.params().values())).dtype if block.params() else np.float64
    x = Rng(seed).tensor(input_shape, dtype=dtype)
    for _ in range(warmup):
        block.forward(x)
    samples = []
    for _ in range(reps):
        t0 = time.perf_counter_ns()
        block.forward(x)
        samples.append(time.perf_counter_ns() - t0)
    q1, med, q3 = np.percentile(samples, [25, 50, 75])
    return {
        "samples_ns": samples,
        "median_ns": float(med),
        "iqr_ns": float(q3 - q1),
        "reps": reps,
        "warmup": warmup,
        "threads": threads if threads is not None else "default",
    }


def cost_report(block: ParamBlock, input_shape, kind: str | None = None,
                bench_reps: int = 0, threads: str | None = None) -> CostReport:
    counts = count_costs(block, input_shape)
    timing = bench(block, input_shape, bench_reps, threads=threads) if bench_reps else {}
    return CostReport(
        block=kind or getattr(block, "kind", type(block).__name__),
        input_shape=tuple(input_shape),
        params=count_params(block),
        macs=counts.macs,
        flops=2 * counts.macs,
        eltwise_ops=counts.eltwise,
        timing=timing,
    )


def ffn_cost(c: int, input_shape) -> CostReport:
    """Baseline: a plain two-layer pointwise feed-forward with hidden
    width 2c (conv1x1 -> relu -> conv1x1), for side-by-side comparison."""
    n, _, h, w = input_shape
    up = ConvSpec(c, 2 * c, 1)
    down = ConvSpec(2 * c, c, 1)
    cost = _conv_cost(up, n, h, w)
    cost.eltwise += n * 2 * c * h * w  # relu
    down_cost = _conv_cost(down, n, h, w)
    cost += down_cost
    params = up.param_count + down.param_count
    return CostReport(
        block="ffn-2c",
        input_shape=tuple(input_shape),
        params=params,
        macs=cost.macs,
        flops=2 * cost.macs,
        eltwise_ops=cost.eltwise,
    )


def format_table(reports: "list[CostReport]") -> str:
    """Aligned plain-text table over cost reports."""
    headers = ["block", "input", "params", "MACs", "FLOPs", "eltwise", "median_ns"]
    rows = []
    for r in reports:
        rows.append(
            [
                r.block,
                "x".join(str(d) for d in r.input_shape),
                f"{r.params:,}",
                f"{r.macs:,}",
                f"{r.flops:,}",
                f"{r.eltwise_ops:,}",
                f"{r.timing.get('median_ns', ''):,.0f}" if r.timing else "-",
            ]
        )
    widths = [max(len(h), *(len(row[i]) for row in rows)) for i, h in enumerate(headers)]
    lines = [
        "  ".join(h.ljust(widths[i]) for i, h in enumerate(headers)),
        "  ".join("-" * widths[i] for i in range(len(headers))),
    ]
    for row in rows:
        lines.append("  ".join(cell.ljust(widths[i]) for i, cell in enumerate(row)))
    lines.append(f"# {CONVENTION}")
    return "\n".join(lines)
