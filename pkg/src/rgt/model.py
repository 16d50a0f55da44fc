"""The RGT network: blocks with hybrid adaptive integration, residual groups, full forward."""

from __future__ import annotations

from contextlib import contextmanager
from typing import Mapping

import numpy as np

from .attention import LsaWeights, RgsaWeights, linear, lsa_forward, rgsa_forward
from .config import ModelConfig
from .tensor import NumericError, Tensor, conv2d, gelu, layer_norm, leaky_relu, pixel_shuffle
from .weights import WeightStore

LN_EPS = 1e-5


@contextmanager
def _layer(path: str):
    try:
        yield
    except NumericError as e:
        raise NumericError(f"{path}: {e}") from e


def _upsample_stages(scale: int) -> list[int]:
    return [2, 2] if scale == 4 else [scale]


def param_shapes(cfg: ModelConfig) -> list[tuple[str, tuple[int, ...], str]]:
    """Every parameter as ``(path, shape, init_kind)`` in construction order.

    ``init_kind`` is one of linear, conv, bias, ln_weight, ln_bias, alpha.
    """
    C, F, hid = cfg.dim, cfg.recon_feats, cfg.hidden_dim
    out: list[tuple[str, tuple[int, ...], str]] = []

    def conv(path, k, cin, cout, groups=1):
        out.append((f"{path}.weight", (k, k, cin // groups, cout), "conv"))
        out.append((f"{path}.bias", (cout,), "bias"))

    def lin(path, cin, cout):
        out.append((f"{path}.weight", (cin, cout), "linear"))
        out.append((f"{path}.bias", (cout,), "bias"))

    conv("shallow", 3, 3, C)
    rg = cfg.rgsa
    for g in range(cfg.n1):
        for b, kind in enumerate(cfg.block_kinds()):
            p = f"groups.{g}.blocks.{b}"
            out.append((f"{p}.norm1.weight", (C,), "ln_weight"))
            out.append((f"{p}.norm1.bias", (C,), "ln_bias"))
            if kind == "lsa":
                lin(f"{p}.attn.qkv", C, 3 * C)
            else:
                conv(f"{p}.attn.rgm.reduce", cfg.s_r, C, C, groups=C)
                conv(f"{p}.attn.rgm.dw", 3, C, C, groups=C)
                conv(f"{p}.attn.rgm.pw", 1, C, rg.reduced_dim)
                lin(f"{p}.attn.q", C, rg.reduced_dim)
                lin(f"{p}.attn.k", rg.reduced_dim, rg.reduced_dim)
                lin(f"{p}.attn.v", rg.reduced_dim, C)
            lin(f"{p}.attn.proj", C, C)
            out.append((f"{p}.norm2.weight", (C,), "ln_weight"))
            out.append((f"{p}.norm2.bias", (C,), "ln_bias"))
            if cfg.mlp == "gated":
                lin(f"{p}.mlp.fc1", C, hid)
                conv(f"{p}.mlp.gate", 3, hid // 2, hid // 2, groups=hid // 2)
                lin(f"{p}.mlp.fc2", hid // 2, C)
            else:
                lin(f"{p}.mlp.fc1", C, hid)
                lin(f"{p}.mlp.fc2", hid, C)
            if cfg.skip_mode == "hai":
                out.append((f"{p}.alpha", (C,), "alpha"))
        conv(f"groups.{g}.conv", 3, C, C)
    conv("body_conv", 3, C, C)
    conv("recon.pre", 3, C, F)
    for i, r in enumerate(_upsample_stages(cfg.scale)):
        conv(f"recon.up.{i}", 3, F, r * r * F)
    conv("recon.last", 3, F, 3)
    return out


def _trunc_normal(rng: np.random.Generator, shape, std: float) -> np.ndarray:
    x = rng.normal(0.0, std, shape)
    bad = np.abs(x) > 2 * std
    while bad.any():
        x[bad] = rng.normal(0.0, std, int(bad.sum()))
        bad = np.abs(x) > 2 * std
    return x


def init_weights(cfg: ModelConfig, seed: int = 0) -> WeightStore:
    """Deterministic initialization.

    Linear weights ~ truncated normal (std 0.02, cut at 2 std); conv kernels ~
    normal with std 1/sqrt(fan_in); LN scale 1; biases and HAI adaptors 0.
    """
    rng = np.random.default_rng(seed)
    items = {}
    for path, shape, kind in param_shapes(cfg):
        if kind == "linear":
            arr = _trunc_normal(rng, shape, 0.02)
        elif kind == "conv":
            fan_in = shape[0] * shape[1] * shape[2]
            arr = rng.normal(0.0, 1.0 / np.sqrt(fan_in), shape)
        elif kind == "ln_weight":
            arr = np.ones(shape)
        else:
            arr = np.zeros(shape)
        items[path] = Tensor(arr)
    return WeightStore(items)


def mlp_forward(x: Tensor, p: Mapping[str, Tensor], cfg: ModelConfig) -> Tensor:
    h = gelu(linear(x, p["fc1.weight"], p["fc1.bias"]))
    if cfg.mlp == "gated":
        half = cfg.hidden_dim // 2
        gate = conv2d(h[..., half:], p["gate.weight"], p["gate.bias"], stride=1, padding=1, groups=half)
        h = h[..., :half] * gate
    return linear(h, p["fc2.weight"], p["fc2.bias"])


def attention_forward(x: Tensor, p: Mapping[str, Tensor], kind: str, cfg: ModelConfig) -> Tensor:
    if kind == "lsa":
        return lsa_forward(x, LsaWeights.from_mapping(p, "attn."), cfg.window, cfg.heads)
    if kind == "rgsa":
        return rgsa_forward(x, RgsaWeights.from_mapping(p, "attn."), cfg.rgsa)
    raise ValueError(f"unknown block kind {kind!r}")


def block_body(z: Tensor, p: Mapping[str, Tensor], kind: str, cfg: ModelConfig) -> Tensor:
    """Pre-norm transformer block with its two internal residuals."""
    u = z + attention_forward(layer_norm(z, p["norm1.weight"], p["norm1.bias"], LN_EPS), p, kind, cfg)
    return u + mlp_forward(layer_norm(u, p["norm2.weight"], p["norm2.bias"], LN_EPS), p.scope("mlp."), cfg)


def block_forward(z: Tensor, p: Mapping[str, Tensor], kind: str, cfg: ModelConfig) -> Tensor:
    """Block output plus the outer connection selected by ``cfg.skip_mode``."""
    out = block_body(z, p, kind, cfg)
    if out.shape != z.shape:
        raise RuntimeError(f"block changed shape {z.shape} -> {out.shape}")
    if cfg.skip_mode == "hai":
        return out + p["alpha"] * z
    if cfg.skip_mode == "vanilla":
        return out + z
    return out


def residual_group_forward(
    f: Tensor,
    p: Mapping[str, Tensor],
    cfg: ModelConfig,
    record: list | None = None,
    path: str = "group",
) -> Tensor:
    z = f
    for i, kind in enumerate(cfg.block_kinds()):
        with _layer(f"{path}.blocks.{i}"):
            z = block_forward(z, p.scope(f"blocks.{i}."), kind, cfg)
        if record is not None:
            record.append(z)
    with _layer(f"{path}.conv"):
        return conv2d(z, p["conv.weight"], p["conv.bias"], padding=1) + f


def rgt_forward(
    lr: Tensor | np.ndarray,
    weights: WeightStore,
    cfg: ModelConfig,
    record: list | None = None,
) -> Tensor:
    """Super-resolve ``H x W x 3`` (or batched ``B x H x W x 3``) input in [0, 1].

    If ``record`` is a list, every block output is appended to it in order.
    """
    x = lr if isinstance(lr, Tensor) else Tensor(lr)
    if x.shape[-1] != 3 or x.ndim not in (3, 4):
        raise ValueError(f"expected H x W x 3 input, got {x.shape}")
    w = weights
    with _layer("shallow"):
        f0 = conv2d(x, w["shallow.weight"], w["shallow.bias"], padding=1)
    f = f0
    for g in range(cfg.n1):
        f = residual_group_forward(f, w.scope(f"groups.{g}."), cfg, record, path=f"groups.{g}")
    with _layer("body_conv"):
        f = conv2d(f, w["body_conv.weight"], w["body_conv.bias"], padding=1) + f0
    with _layer("recon"):
        y = leaky_relu(conv2d(f, w["recon.pre.weight"], w["recon.pre.bias"], padding=1))
        for i, r in enumerate(_upsample_stages(cfg.scale)):
            y = pixel_shuffle(conv2d(y, w[f"recon.up.{i}.weight"], w[f"recon.up.{i}.bias"], padding=1), r)
        return conv2d(y, w["recon.last.weight"], w["recon.last.bias"], padding=1)
