"""Recursive-generalization cross-attention and rectangle-window local attention."""

from __future__ import annotations

import math
from dataclasses import dataclass, fields
from typing import Mapping, NamedTuple

import numpy as np

from .tensor import Tensor, concat, conv2d, matmul, pad2d, softmax


class ConfigError(ValueError):
    pass


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ weight + bias`` with ``weight`` stored as ``in x out``."""
    y = matmul(x, weight)
    return y + bias if bias is not None else y


@dataclass(frozen=True)
class WindowSpec:
    wh: int = 8
    ww: int = 32

    def __post_init__(self):
        if self.wh <= 0 or self.ww <= 0:
            raise ConfigError(f"window dims must be positive, got {self.wh}x{self.ww}")

    def transposed(self) -> "WindowSpec":
        return WindowSpec(self.ww, self.wh)


@dataclass(frozen=True)
class RgsaConfig:
    """Geometry of one RG-SA layer.

    ``min_recursion`` floors the number of strided reductions; it lets a
    model evaluated with a larger ``h`` keep at least the reduction depth it
    was trained with. ``recursion_enabled=False`` applies the strided
    convolution at most once.
    """

    dim: int
    heads: int
    s_r: int = 4
    h: int = 4
    c_r: float = 0.5
    min_recursion: int = 0
    recursion_enabled: bool = True

    def __post_init__(self):
        if self.s_r < 2:
            raise ConfigError(f"s_r must be >= 2, got {self.s_r}")
        if self.h < 1:
            raise ConfigError(f"h must be >= 1, got {self.h}")
        if not 0 < self.c_r <= 1:
            raise ConfigError(f"c_r must lie in (0, 1], got {self.c_r}")
        if self.heads < 1 or self.dim % self.heads:
            raise ConfigError(f"dim {self.dim} not divisible by heads {self.heads}")
        if self.reduced_dim < 1 or self.reduced_dim % self.heads:
            raise ConfigError(f"reduced dim {self.reduced_dim} not divisible by heads {self.heads}")
        if self.min_recursion < 0:
            raise ConfigError("min_recursion must be non-negative")

    @property
    def reduced_dim(self) -> int:
        return int(round(self.dim * self.c_r))


def recursion_count(H: int, W: int, s_r: int, h: int) -> int:
    """Largest ``T >= 0`` with ``h * s_r**T <= max(H, W)``, i.e. floor(log_s_r(max(H,W)/h))."""
    if s_r < 2:
        raise ConfigError(f"s_r must be >= 2, got {s_r}")
    if min(H, W, h) < 1:
        raise ValueError("H, W and h must be positive")
    m, t = max(H, W), 0
    while h * s_r ** (t + 1) <= m:
        t += 1
    return t


def effective_recursion(H: int, W: int, cfg: RgsaConfig) -> int:
    t = max(recursion_count(H, W, cfg.s_r, cfg.h), cfg.min_recursion)
    return t if cfg.recursion_enabled else min(t, 1)


def _reduced_extent(n: int, s: int) -> int:
    return max(n, s) // s


def representative_size(H: int, W: int, cfg: RgsaConfig) -> tuple[int, int]:
    """Spatial size of the representative map for an ``H x W`` input."""
    for _ in range(effective_recursion(H, W, cfg)):
        H, W = _reduced_extent(H, cfg.s_r), _reduced_extent(W, cfg.s_r)
    return H, W


@dataclass(frozen=True)
class RgsaWeights:
    """Parameters of one RG-SA layer (``C`` = dim, ``Cr`` = reduced dim).

    ``reduce_w`` is the single strided depth-wise kernel reused at every
    recursion step.
    """

    reduce_w: Tensor  # s_r x s_r x 1 x C
    reduce_b: Tensor
    dw_w: Tensor  # 3 x 3 x 1 x C
    dw_b: Tensor
    pw_w: Tensor  # 1 x 1 x C x Cr
    pw_b: Tensor
    q_w: Tensor  # C x Cr
    q_b: Tensor
    k_w: Tensor  # Cr x Cr
    k_b: Tensor
    v_w: Tensor  # Cr x C
    v_b: Tensor
    proj_w: Tensor  # C x C
    proj_b: Tensor

    # store names relative to the attention prefix
    NAMES = {
        "reduce_w": "rgm.reduce.weight",
        "reduce_b": "rgm.reduce.bias",
        "dw_w": "rgm.dw.weight",
        "dw_b": "rgm.dw.bias",
        "pw_w": "rgm.pw.weight",
        "pw_b": "rgm.pw.bias",
        "q_w": "q.weight",
        "q_b": "q.bias",
        "k_w": "k.weight",
        "k_b": "k.bias",
        "v_w": "v.weight",
        "v_b": "v.bias",
        "proj_w": "proj.weight",
        "proj_b": "proj.bias",
    }

    @staticmethod
    def shapes(cfg: RgsaConfig) -> dict[str, tuple[int, ...]]:
        c, cr, s = cfg.dim, cfg.reduced_dim, cfg.s_r
        return {
            "reduce_w": (s, s, 1, c),
            "reduce_b": (c,),
            "dw_w": (3, 3, 1, c),
            "dw_b": (c,),
            "pw_w": (1, 1, c, cr),
            "pw_b": (cr,),
            "q_w": (c, cr),
            "q_b": (cr,),
            "k_w": (cr, cr),
            "k_b": (cr,),
            "v_w": (cr, c),
            "v_b": (c,),
            "proj_w": (c, c),
            "proj_b": (c,),
        }

    @classmethod
    def from_mapping(cls, params: Mapping[str, Tensor], prefix: str = "") -> "RgsaWeights":
        return cls(**{f.name: params[prefix + cls.NAMES[f.name]] for f in fields(cls)})

    @classmethod
    def random(cls, cfg: RgsaConfig, rng: np.random.Generator, scale: float = 0.3) -> "RgsaWeights":
        return cls(**{k: Tensor(rng.normal(0, scale, s)) for k, s in cls.shapes(cfg).items()})

    def replace(self, **kw) -> "RgsaWeights":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(kw)
        return RgsaWeights(**vals)


@dataclass(frozen=True)
class LsaWeights:
    qkv_w: Tensor  # C x 3C, output laid out as [q | k | v]
    qkv_b: Tensor
    proj_w: Tensor
    proj_b: Tensor

    NAMES = {
        "qkv_w": "qkv.weight",
        "qkv_b": "qkv.bias",
        "proj_w": "proj.weight",
        "proj_b": "proj.bias",
    }

    @staticmethod
    def shapes(dim: int) -> dict[str, tuple[int, ...]]:
        return {"qkv_w": (dim, 3 * dim), "qkv_b": (3 * dim,), "proj_w": (dim, dim), "proj_b": (dim,)}

    @classmethod
    def from_mapping(cls, params: Mapping[str, Tensor], prefix: str = "") -> "LsaWeights":
        return cls(**{f.name: params[prefix + cls.NAMES[f.name]] for f in fields(cls)})

    @classmethod
    def random(cls, dim: int, rng: np.random.Generator, scale: float = 0.3) -> "LsaWeights":
        return cls(**{k: Tensor(rng.normal(0, scale, s)) for k, s in cls.shapes(dim).items()})


def _as_batch(x: Tensor) -> tuple[Tensor, bool]:
    if x.ndim == 3:
        return x.reshape(1, *x.shape), True
    if x.ndim == 4:
        return x, False
    raise ValueError(f"expected H x W x C or B x H x W x C, got {x.shape}")


def rgm_forward(x: Tensor, w: RgsaWeights, cfg: RgsaConfig) -> Tensor:
    """Recursive generalization: shared strided depth-wise reduction, then 3x3 DW and 1x1 PW."""
    x4, squeeze = _as_batch(x)
    _, H, W, C = x4.shape
    s = cfg.s_r
    y = x4
    for _ in range(effective_recursion(H, W, cfg)):
        h, wd = y.shape[1], y.shape[2]
        if h < s or wd < s:
            y = pad2d(y, 0, max(s - h, 0), 0, max(s - wd, 0))
        y = conv2d(y, w.reduce_w, w.reduce_b, stride=s, padding=0, groups=C)
    y = conv2d(y, w.dw_w, w.dw_b, stride=1, padding=1, groups=C)
    y = conv2d(y, w.pw_w, w.pw_b)
    return y.reshape(y.shape[1:]) if squeeze else y


def rgsa_forward(x: Tensor, w: RgsaWeights, cfg: RgsaConfig, trace: dict | None = None) -> Tensor:
    """Multi-head cross-attention from every position to the representative map.

    If ``trace`` is a dict it receives the attention matrix (``attn``), the
    per-head values (``v``) and the pre-projection output (``mixed``).
    """
    x4, squeeze = _as_batch(x)
    B, H, W, C = x4.shape
    if C != cfg.dim:
        raise ValueError(f"input has {C} channels, config expects {cfg.dim}")
    heads, cr = cfg.heads, cfg.reduced_dim
    dq, dv = cr // heads, C // heads
    rep = rgm_forward(x4, w, cfg)
    n, m = H * W, rep.shape[1] * rep.shape[2]
    rep = rep.reshape(B, m, cr)
    q = linear(x4.reshape(B, n, C), w.q_w, w.q_b).reshape(B, n, heads, dq).transpose(0, 2, 1, 3)
    k = linear(rep, w.k_w, w.k_b).reshape(B, m, heads, dq).transpose(0, 2, 1, 3)
    v = linear(rep, w.v_w, w.v_b).reshape(B, m, heads, dv).transpose(0, 2, 1, 3)
    attn = softmax(matmul(q, k.swapaxes(-1, -2)) * (1.0 / math.sqrt(dq)), axis=-1)
    mixed = matmul(attn, v)
    if trace is not None:
        trace.update(attn=attn.data, v=v.data, mixed=mixed.data, rep_size=(rep.shape[1],))
    out = linear(mixed.transpose(0, 2, 1, 3).reshape(B, n, C), w.proj_w, w.proj_b)
    out = out.reshape(B, H, W, C)
    return out.reshape(H, W, C) if squeeze else out


class PadInfo(NamedTuple):
    batch: int | None  # None for an unbatched H x W x C input
    height: int
    width: int
    padded_height: int
    padded_width: int


def window_partition(x: Tensor, win: WindowSpec) -> tuple[Tensor, PadInfo]:
    """Split into non-overlapping ``wh x ww`` windows, row-major, zero-padding bottom/right.

    Returns ``(n_windows [* B]) x (wh * ww) x C`` windows and the padding record.
    """
    x4, squeeze = _as_batch(x)
    B, H, W, C = x4.shape
    Hp, Wp = -(-H // win.wh) * win.wh, -(-W // win.ww) * win.ww
    if Hp != H or Wp != W:
        x4 = pad2d(x4, 0, Hp - H, 0, Wp - W)
    nh, nw = Hp // win.wh, Wp // win.ww
    wins = x4.reshape(B, nh, win.wh, nw, win.ww, C).transpose(0, 1, 3, 2, 4, 5)
    wins = wins.reshape(B * nh * nw, win.wh * win.ww, C)
    return wins, PadInfo(None if squeeze else B, H, W, Hp, Wp)


def window_reverse(windows: Tensor, win: WindowSpec, info: PadInfo) -> Tensor:
    B = info.batch or 1
    nh, nw = info.padded_height // win.wh, info.padded_width // win.ww
    C = windows.shape[-1]
    x = windows.reshape(B, nh, nw, win.wh, win.ww, C).transpose(0, 1, 3, 2, 4, 5)
    x = x.reshape(B, info.padded_height, info.padded_width, C)
    if info.padded_height != info.height or info.padded_width != info.width:
        x = x[:, : info.height, : info.width]
    return x.reshape(info.height, info.width, C) if info.batch is None else x


def window_valid_mask(H: int, W: int, win: WindowSpec, batch: int = 1) -> np.ndarray:
    """Boolean ``(batch * n_windows) x (wh * ww)`` mask of non-padding tokens."""
    Hp, Wp = -(-H // win.wh) * win.wh, -(-W // win.ww) * win.ww
    valid = np.zeros((Hp, Wp), dtype=bool)
    valid[:H, :W] = True
    nh, nw = Hp // win.wh, Wp // win.ww
    valid = valid.reshape(nh, win.wh, nw, win.ww).transpose(0, 2, 1, 3).reshape(nh * nw, -1)
    return np.tile(valid, (batch, 1))


def _window_attention(q: Tensor, k: Tensor, v: Tensor, heads: int, win: WindowSpec, trace):
    B, H, W, C = q.shape
    d = C // heads
    qw, info = window_partition(q, win)
    kw, _ = window_partition(k, win)
    vw, _ = window_partition(v, win)
    nwin, L = qw.shape[0], qw.shape[1]

    def split(t):
        return t.reshape(nwin, L, heads, d).transpose(0, 2, 1, 3)

    mask = None
    if info.padded_height != H or info.padded_width != W:
        mask = window_valid_mask(H, W, win, B)[:, None, None, :]
    scores = matmul(split(qw), split(kw).swapaxes(-1, -2)) * (1.0 / math.sqrt(d))
    attn = softmax(scores, axis=-1, mask=mask)
    if trace is not None:
        trace.setdefault("attn", []).append(attn.data)
    out = matmul(attn, split(vw)).transpose(0, 2, 1, 3).reshape(nwin, L, C)
    return window_reverse(out, win, info)


def lsa_forward(
    x: Tensor,
    w: LsaWeights,
    win: WindowSpec,
    heads: int,
    split: bool = True,
    trace: dict | None = None,
) -> Tensor:
    """Rectangle-window self-attention.

    With ``split`` the first half of the heads attend inside ``wh x ww``
    windows and the second half inside the transposed ``ww x wh`` windows;
    otherwise every head uses ``wh x ww``.
    """
    x4, squeeze = _as_batch(x)
    B, H, W, C = x4.shape
    if split and heads % 2:
        raise ConfigError(f"split-orientation window attention needs an even head count, got {heads}")
    if C % heads:
        raise ConfigError(f"dim {C} not divisible by heads {heads}")
    qkv = linear(x4, w.qkv_w, w.qkv_b)
    q, k, v = qkv[..., :C], qkv[..., C : 2 * C], qkv[..., 2 * C :]
    if split:
        half = C // 2
        parts = [
            _window_attention(q[..., :half], k[..., :half], v[..., :half], heads // 2, win, trace),
            _window_attention(q[..., half:], k[..., half:], v[..., half:], heads // 2, win.transposed(), trace),
        ]
        mixed = concat(parts, axis=-1)
    else:
        mixed = _window_attention(q, k, v, heads, win, trace)
    out = linear(mixed, w.proj_w, w.proj_b)
    return out.reshape(H, W, C) if squeeze else out
