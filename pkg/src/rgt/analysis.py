"""Closed-form parameter/FLOP accounting and linear CKA.

FLOPs follow the convention of super-resolution model-size tables: one
multiply-accumulate counts as one FLOP. Layer norm costs 5 and softmax 8
operations per element; bias adds and pointwise activations are free.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .attention import RgsaConfig, WindowSpec, effective_recursion
from .config import ModelConfig
from .model import rgt_forward
from .tensor import Tensor
from .weights import WeightStore

LN_FLOPS_PER_ELEMENT = 5
SOFTMAX_FLOPS_PER_ELEMENT = 8


@dataclass(frozen=True)
class CostEntry:
    path: str
    params: int
    flops: int


@dataclass
class CostReport:
    entries: list[CostEntry] = field(default_factory=list)
    height: int = 0
    width: int = 0
    scale: int = 0

    @property
    def total_params(self) -> int:
        return sum(e.params for e in self.entries)

    @property
    def total_flops(self) -> int:
        return sum(e.flops for e in self.entries)

    def add(self, path: str, params: int = 0, flops: int = 0) -> None:
        if params < 0 or flops < 0:
            raise ValueError(f"negative cost for {path}")
        self.entries.append(CostEntry(path, int(params), int(flops)))

    def extend(self, other: "CostReport", prefix: str = "") -> None:
        self.entries.extend(CostEntry(prefix + e.path, e.params, e.flops) for e in other.entries)

    def rollup(self, depth: int) -> "CostReport":
        """Merge entries sharing the first ``depth`` dotted path components (0 keeps everything)."""
        if depth <= 0:
            return self
        merged: dict[str, list[int]] = {}
        for e in self.entries:
            key = ".".join(e.path.split(".")[:depth])
            acc = merged.setdefault(key, [0, 0])
            acc[0] += e.params
            acc[1] += e.flops
        return CostReport([CostEntry(k, p, f) for k, (p, f) in merged.items()], self.height, self.width, self.scale)

    def to_csv(self) -> str:
        rows = ["path,params,flops"] + [f"{e.path},{e.params},{e.flops}" for e in self.entries]
        rows.append(f"total,{self.total_params},{self.total_flops}")
        return "\n".join(rows) + "\n"

    def to_table(self, show_flops: bool = True) -> str:
        rows = [(e.path, f"{e.params:,}", f"{e.flops:,}") for e in self.entries]
        rows.append(("total", f"{self.total_params:,}", f"{self.total_flops:,}"))
        wp = max(len(r[0]) for r in rows + [("path", "", "")])
        wn = max(len(r[1]) for r in rows + [("", "params", "")])
        wf = max(len(r[2]) for r in rows + [("", "", "flops")])
        head = f"{'path':<{wp}}  {'params':>{wn}}"
        if show_flops:
            head += f"  {'flops':>{wf}}"
        lines = [head]
        for p, n, f in rows:
            line = f"{p:<{wp}}  {n:>{wn}}"
            if show_flops:
                line += f"  {f:>{wf}}"
            lines.append(line)
        if show_flops and self.height:
            lines.append(f"input {self.height}x{self.width}, x{self.scale}: "
                         f"{self.total_params / 1e6:.2f}M params, {self.total_flops / 1e9:.2f}G flops")
        elif self.scale:
            lines.append(f"x{self.scale}: {self.total_params / 1e6:.2f}M params")
        return "\n".join(lines) + "\n"


def _conv(rep: CostReport, path, k, cin, cout, out_hw=0, groups=1):
    per_out = k * k * (cin // groups) * cout
    rep.add(path, per_out + cout, per_out * out_hw)


def _linear(rep: CostReport, path, cin, cout, tokens=0):
    rep.add(path, cin * cout + cout, cin * cout * tokens)


def _norm(rep: CostReport, path, c, tokens=0):
    rep.add(path, 2 * c, LN_FLOPS_PER_ELEMENT * c * tokens)


def _padded(n: int, w: int) -> int:
    return -(-n // w) * w


def lsa_cost(dim: int, heads: int, win: WindowSpec, H: int = 0, W: int = 0) -> CostReport:
    rep = CostReport(height=H, width=W)
    n = H * W
    _linear(rep, "qkv", dim, 3 * dim, n)
    for name, (wh, ww) in (("h", (win.wh, win.ww)), ("v", (win.ww, win.wh))):
        if not n:
            continue
        hp, wp = _padded(H, wh), _padded(W, ww)
        L = wh * ww
        # both q.k^T and attn.v: every padded token meets L keys across dim/2 channels
        rep.add(f"windows_{name}.matmul", 0, 2 * hp * wp * L * (dim // 2))
        rep.add(f"windows_{name}.softmax", 0, SOFTMAX_FLOPS_PER_ELEMENT * (heads // 2) * hp * wp * L)
    _linear(rep, "proj", dim, dim, n)
    return rep


def rgsa_cost(cfg: RgsaConfig, H: int = 0, W: int = 0, rep_size: tuple[int, int] | None = None) -> CostReport:
    """Cost of one RG-SA layer.

    ``rep_size`` pins the representative map used by the refinement convs and
    the cross-attention, independent of the input size.
    """
    rep = CostReport(height=H, width=W)
    C, cr, s = cfg.dim, cfg.reduced_dim, cfg.s_r
    n = H * W
    h, w = H, W
    steps = effective_recursion(H, W, cfg) if n else 0
    per_out = s * s * C
    total = 0
    for _ in range(steps):
        h, w = max(h, s) // s, max(w, s) // s
        total += per_out * h * w
    rep.add("rgm.reduce", per_out + C, total)
    if rep_size is not None and n:
        h, w = rep_size
    m = h * w if n else 0
    _conv(rep, "rgm.dw", 3, C, C, m, groups=C)
    _conv(rep, "rgm.pw", 1, C, cr, m)
    _linear(rep, "q", C, cr, n)
    _linear(rep, "k", cr, cr, m)
    _linear(rep, "v", cr, C, m)
    rep.add("cross.qk", 0, n * m * cr)
    rep.add("cross.av", 0, n * m * C)
    rep.add("cross.softmax", 0, SOFTMAX_FLOPS_PER_ELEMENT * cfg.heads * n * m)
    _linear(rep, "proj", C, C, n)
    return rep


def dense_sa_flops(dim: int, H: int, W: int) -> int:
    """Global self-attention reference: ``2 (HW)^2 C`` for the two products plus ``4 HW C^2`` projections."""
    n = H * W
    return 2 * n * n * dim + 4 * n * dim * dim


def _mlp_cost(rep: CostReport, prefix: str, cfg: ModelConfig, n: int):
    C, hid = cfg.dim, cfg.hidden_dim
    _linear(rep, f"{prefix}.fc1", C, hid, n)
    if cfg.mlp == "gated":
        _conv(rep, f"{prefix}.gate", 3, hid // 2, hid // 2, n, groups=hid // 2)
        _linear(rep, f"{prefix}.fc2", hid // 2, C, n)
    else:
        _linear(rep, f"{prefix}.fc2", hid, C, n)


def _cost(cfg: ModelConfig, H: int, W: int) -> CostReport:
    rep = CostReport(height=H, width=W, scale=cfg.scale)
    C, F, n = cfg.dim, cfg.recon_feats, H * W
    _conv(rep, "shallow", 3, 3, C, n)
    for g in range(cfg.n1):
        for b, kind in enumerate(cfg.block_kinds()):
            p = f"groups.{g}.blocks.{b}"
            _norm(rep, f"{p}.norm1", C, n)
            if kind == "lsa":
                rep.extend(lsa_cost(C, cfg.heads, cfg.window, H, W), f"{p}.attn.")
            else:
                rep.extend(rgsa_cost(cfg.rgsa, H, W), f"{p}.attn.")
            _norm(rep, f"{p}.norm2", C, n)
            _mlp_cost(rep, f"{p}.mlp", cfg, n)
            if cfg.skip_mode == "hai":
                rep.add(f"{p}.alpha", C, 0)
        _conv(rep, f"groups.{g}.conv", 3, C, C, n)
    _conv(rep, "body_conv", 3, C, C, n)
    _conv(rep, "recon.pre", 3, C, F, n)
    h, w = H, W
    for i, r in enumerate([2, 2] if cfg.scale == 4 else [cfg.scale]):
        _conv(rep, f"recon.up.{i}", 3, F, r * r * F, h * w)
        h, w = h * r, w * r
    _conv(rep, "recon.last", 3, F, 3, h * w)
    return rep


def count_params(cfg: ModelConfig) -> CostReport:
    return _cost(cfg, 0, 0)


def count_flops(cfg: ModelConfig, H: int, W: int) -> CostReport:
    if H < 1 or W < 1:
        raise ValueError("H and W must be positive")
    return _cost(cfg, H, W)


# ------------------------------------------------------------------ CKA


class CkaError(ValueError):
    pass


def cka(X, Y) -> float:
    """Linear centered kernel alignment between two ``n x d`` activation matrices."""
    x = np.asarray(getattr(X, "data", X), dtype=np.float64)
    y = np.asarray(getattr(Y, "data", Y), dtype=np.float64)
    if x.ndim != 2 or y.ndim != 2 or x.shape[0] != y.shape[0]:
        raise ValueError(f"need n x d1 and n x d2 matrices, got {x.shape} and {y.shape}")
    if x.shape[0] < 2:
        raise ValueError("need at least two samples")
    x = x - x.mean(axis=0)
    y = y - y.mean(axis=0)
    nx, ny = np.linalg.norm(x.T @ x), np.linalg.norm(y.T @ y)
    if nx == 0 or ny == 0:
        raise CkaError("CKA undefined for zero-variance features")
    value = np.linalg.norm(y.T @ x) ** 2 / (nx * ny)
    return float(min(max(value, 0.0), 1.0))


def collect_block_activations(cfg: ModelConfig, weights: WeightStore, lr) -> list[np.ndarray]:
    """One ``(H*W) x C`` matrix per transformer block output, in block order."""
    record: list[Tensor] = []
    x = lr if isinstance(lr, Tensor) else Tensor(lr)
    if x.ndim != 3:
        raise ValueError("collect_block_activations takes a single H x W x 3 image")
    rgt_forward(x, weights, cfg, record=record)
    return [t.data.reshape(-1, t.shape[-1]) for t in record]


def cka_matrix(acts: Sequence[np.ndarray]) -> np.ndarray:
    k = len(acts)
    out = np.eye(k)
    for i in range(k):
        for j in range(i + 1, k):
            out[i, j] = out[j, i] = cka(acts[i], acts[j])
    return out
