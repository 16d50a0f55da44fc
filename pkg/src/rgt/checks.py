"""Verification suites shared by the command line and the test-suite.

Each suite returns :class:`CheckResult` rows; a row passes when its measured
value is within its limit.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .analysis import count_params
from .attention import (
    LsaWeights,
    RgsaWeights,
    WindowSpec,
    linear,
    lsa_forward,
    representative_size,
    rgm_forward,
    rgsa_forward,
    window_partition,
    window_reverse,
)
from .config import TINY, ModelConfig
from .model import init_weights, rgt_forward
from .tensor import (
    Tensor,
    concat,
    conv2d,
    gelu,
    grad_check,
    layer_norm,
    leaky_relu,
    l1_loss,
    matmul,
    pad2d,
    pixel_shuffle,
    pixel_unshuffle,
    softmax,
)
from .train import loss_and_grads
from .weights import WeightStore, dump_weights, load_weights

OP_TOLERANCE = 1e-4
MODEL_TOLERANCE = 1e-3
# central differences at 1e-5 balance truncation (~h^2) against roundoff (~eps/h)
FD_STEP = 1e-5


@dataclass(frozen=True)
class CheckResult:
    name: str
    value: float
    limit: float

    @property
    def passed(self) -> bool:
        return bool(self.value <= self.limit)

    def line(self) -> str:
        status = "ok  " if self.passed else "FAIL"
        return f"{status} {self.name:<44} {self.value:.3e} (limit {self.limit:.0e})"


def _away_from_zero(rng: np.random.Generator, shape) -> np.ndarray:
    """Values with |x| in [0.2, 1.2], keeping kinks of abs/leaky-relu out of finite-difference reach."""
    return rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.2, 1.2, shape)


def _op_cases(rng: np.random.Generator) -> list[tuple[str, Callable[[Tensor], Tensor], np.ndarray]]:
    """(name, f, x) triples; every op is exercised on three shapes."""
    cases = []

    def add(name, op, x):
        r = np.random.default_rng(rng.integers(2**32))
        weights = r.normal(size=np.shape(op(Tensor(x)).data))
        cases.append((name, lambda t, op=op, w=weights: (op(t) * Tensor(w)).sum(), x))

    shapes = [(3,), (2, 5), (2, 3, 4)]
    for s in shapes:
        other = rng.normal(size=s)
        add(f"add{s}", lambda t, o=other: t + Tensor(o), rng.normal(size=s))
        add(f"add_broadcast{s}", lambda t, o=other: Tensor(o) + t[..., :1], rng.normal(size=s))
        add(f"sub{s}", lambda t, o=other: Tensor(o) - t, rng.normal(size=s))
        add(f"mul{s}", lambda t, o=other: t * Tensor(o) * t, rng.normal(size=s))
        add(f"div{s}", lambda t, o=other: Tensor(o) / t, _away_from_zero(rng, s))
        add(f"pow{s}", lambda t: t**3, rng.normal(size=s))
        add(f"neg{s}", lambda t: -t, rng.normal(size=s))
        add(f"abs{s}", lambda t: t.abs(), _away_from_zero(rng, s))
        add(f"exp{s}", lambda t: t.exp(), rng.normal(size=s))
        add(f"sum{s}", lambda t: (t * t).sum(axis=-1), rng.normal(size=s))
        add(f"mean{s}", lambda t: (t * t).mean(axis=0, keepdims=True), rng.normal(size=s))
        add(f"reshape{s}", lambda t: (t * t).reshape(-1), rng.normal(size=s))
        add(f"transpose{s}", lambda t: (t * t).transpose(), rng.normal(size=s))
        add(f"getitem{s}", lambda t: t[..., ::2] * t[..., ::2], rng.normal(size=s))
        add(f"softmax{s}", lambda t: softmax(t, axis=-1), rng.normal(size=s))
        add(f"gelu{s}", gelu, rng.normal(size=s))
        add(f"leaky_relu{s}", leaky_relu, _away_from_zero(rng, s))
        target = other + np.sign(rng.normal(size=s))
        add(f"l1_loss{s}", lambda t, y=target: l1_loss(t, y), other + 0.5 * rng.uniform(-1, 1, s))
        add(f"concat{s}", lambda t, o=other: concat([t * t, Tensor(o)], axis=-1), rng.normal(size=s))

    for m, k, n in [(2, 3, 4), (5, 1, 2), (3, 4, 3)]:
        b = rng.normal(size=(k, n))
        a = rng.normal(size=(m, k))
        add(f"matmul_left({m},{k},{n})", lambda t, b=b: matmul(t, Tensor(b)), rng.normal(size=(m, k)))
        add(f"matmul_right({m},{k},{n})", lambda t, a=a: matmul(Tensor(a), t), rng.normal(size=(k, n)))
    add("matmul_batched(2,3,4,2)", lambda t, b=rng.normal(size=(2, 4, 2)): matmul(t, Tensor(b)), rng.normal(size=(2, 3, 4)))

    for s in [(2, 4), (3, 5), (2, 2, 6)]:
        mask = rng.random(s) > 0.3
        mask[..., 0] = True
        add(f"softmax_masked{s}", lambda t, m=mask: softmax(t, axis=-1, mask=m), rng.normal(size=s))

    for s in [(4,), (3, 5), (2, 3, 6)]:
        c = s[-1]
        g, b = rng.normal(size=c), rng.normal(size=c)
        x = rng.normal(size=s)
        add(f"layer_norm_x{s}", lambda t, g=g, b=b: layer_norm(t, Tensor(g), Tensor(b)), x)
        add(f"layer_norm_gamma{s}", lambda t, x=x, b=b: layer_norm(Tensor(x), t, Tensor(b)), g)
        add(f"layer_norm_beta{s}", lambda t, x=x, g=g: layer_norm(Tensor(x), Tensor(g), t), b)

    conv_geoms = [
        # (input shape, k, cin, cout, stride, padding, groups)
        ((5, 5, 2), 3, 2, 3, 1, 1, 1),
        ((2, 6, 7, 4), 3, 4, 4, 2, 1, 4),
        ((8, 8, 3), 4, 3, 3, 4, 0, 3),
    ]
    for shp, k, cin, cout, st, pd, gr in conv_geoms:
        ker = rng.normal(size=(k, k, cin // gr, cout))
        bias = rng.normal(size=cout)
        x = rng.normal(size=shp)
        tag = f"{shp},k{k},s{st},g{gr}"
        add(f"conv2d_x[{tag}]", lambda t, ker=ker, bias=bias, st=st, pd=pd, gr=gr: conv2d(
            t, Tensor(ker), Tensor(bias), stride=st, padding=pd, groups=gr), x)
        add(f"conv2d_kernel[{tag}]", lambda t, x=x, bias=bias, st=st, pd=pd, gr=gr: conv2d(
            Tensor(x), t, Tensor(bias), stride=st, padding=pd, groups=gr), ker)
        add(f"conv2d_bias[{tag}]", lambda t, x=x, ker=ker, st=st, pd=pd, gr=gr: conv2d(
            Tensor(x), Tensor(ker), t, stride=st, padding=pd, groups=gr), bias)

    for s, r in [((2, 3, 4), 2), ((1, 2, 18), 3), ((2, 2, 2, 8), 2)]:
        add(f"pixel_shuffle{s}", lambda t, r=r: pixel_shuffle(t * t, r), rng.normal(size=s))
    for s, r in [((4, 6, 1), 2), ((6, 3, 2), 3), ((2, 4, 4, 2), 2)]:
        add(f"pixel_unshuffle{s}", lambda t, r=r: pixel_unshuffle(t * t, r), rng.normal(size=s))
    for s, pads in [((3, 3, 1), (1, 0, 2, 1)), ((2, 4, 2), (0, 3, 0, 0)), ((2, 2, 3, 2), (1, 1, 1, 1))]:
        add(f"pad2d{s}", lambda t, p=pads: pad2d(t * t, *p), rng.normal(size=s))
    for s in [(4, 3), (2, 5, 3), (3, 3, 3)]:
        w, b = rng.normal(size=(3, 2)), rng.normal(size=2)
        add(f"linear{s}", lambda t, w=w, b=b: linear(t, Tensor(w), Tensor(b)), rng.normal(size=s))
    return cases


def op_gradchecks(seed: int = 0) -> list[CheckResult]:
    """Central-difference check of every tape-backed tensor operation."""
    rng = np.random.default_rng(seed)
    return [CheckResult(name, grad_check(f, x, step=FD_STEP), OP_TOLERANCE) for name, f, x in _op_cases(rng)]


def _live_weights(cfg: ModelConfig, seed: int) -> WeightStore:
    """Initial weights with biases, norms and adaptors jittered so no parameter sits at a degenerate zero."""
    base = init_weights(cfg, seed)
    rng = np.random.default_rng(seed + 1)
    changes = {}
    for k, v in base.items():
        if v.ndim == 1:
            changes[k] = v.data + 0.1 * rng.normal(size=v.shape)
        elif k.endswith("weight") and v.ndim == 2:
            changes[k] = v.data * 10  # lift 0.02-scale projections so attention is not uniform
    return base.updated(changes)


def shift_invariant(key: str, idx: tuple[int, ...], cfg: ModelConfig) -> bool:
    """Key-bias scalars: they shift every logit of a query row equally, which softmax ignores.

    Their true gradient is exactly zero, so a relative finite-difference error
    is meaningless for them.
    """
    if key.endswith("attn.k.bias"):
        return True
    return key.endswith("attn.qkv.bias") and cfg.dim <= idx[0] < 2 * cfg.dim


def model_gradcheck(cfg: ModelConfig = TINY, size: int = 8, samples: int = 50, seed: int = 0) -> CheckResult:
    """Autodiff vs central differences on ``samples`` randomly chosen scalar parameters."""
    rng = np.random.default_rng(seed)
    weights = _live_weights(cfg, seed)
    lr = rng.uniform(0, 1, (size, size, 3))
    proj = rng.normal(size=(size * cfg.scale, size * cfg.scale, 3))

    keys = list(weights)
    sizes = np.array([weights[k].size for k in keys], dtype=float)
    # half the draws uniform over tensors, half over scalars, so small tensors are not starved
    picks = []
    for i in range(samples):
        if i % 2 == 0:
            key = keys[rng.integers(len(keys))]
        else:
            key = keys[rng.choice(len(keys), p=sizes / sizes.sum())]
        idx = tuple(int(rng.integers(n)) for n in weights[key].shape)
        while shift_invariant(key, idx, cfg):
            key = keys[rng.integers(len(keys))]
            idx = tuple(int(rng.integers(n)) for n in weights[key].shape)
        picks.append((key, idx))

    worst = 0.0
    for key, idx in picks:
        def f(t: Tensor, key=key) -> Tensor:
            out = rgt_forward(Tensor(lr), weights.updated({key: t}), cfg)
            return (out * Tensor(proj)).sum()

        worst = max(worst, grad_check(f, weights[key], step=FD_STEP, indices=[idx]))
    return CheckResult(f"end-to-end gradcheck ({samples} params)", worst, MODEL_TOLERANCE)


# ----------------------------------------------------------- shape suite


def _check(name: str, ok: bool) -> CheckResult:
    return CheckResult(name, 0.0 if ok else 1.0, 0.0)


def shape_suite(seed: int = 0) -> list[CheckResult]:
    """Shape contracts and structural invariants on small random instances."""
    rng = np.random.default_rng(seed)
    out: list[CheckResult] = []

    for r in (2, 3, 4):
        cfg = TINY.variant(scale=r)
        w = init_weights(cfg, seed)
        for H, W in ((8, 8), (9, 12), (13, 8)):
            y = rgt_forward(rng.uniform(0, 1, (H, W, 3)), w, cfg)
            out.append(_check(f"rgt_forward {H}x{W} x{r} -> {y.shape}", y.shape == (r * H, r * W, 3)))

    rg = TINY.variant(h=4, dim=8).rgsa
    rw = RgsaWeights.random(rg, rng)
    worst_band = True
    for H, W in ((16, 16), (17, 40), (63, 20), (64, 64), (100, 31)):
        rep = rgm_forward(Tensor(rng.normal(size=(H, W, rg.dim))), rw, rg)
        h_eff = max(rep.shape[0], rep.shape[1])
        worst_band &= rg.h <= h_eff < rg.s_r * rg.h and (rep.shape[0], rep.shape[1]) == representative_size(H, W, rg)
    out.append(_check("RGM size band h <= h_eff < s_r*h", worst_band))

    trace: dict = {}
    rgsa_forward(Tensor(rng.normal(size=(12, 10, rg.dim))), rw, rg, trace)
    out.append(CheckResult("RG-SA attention rows sum to 1", float(np.abs(trace["attn"].sum(-1) - 1).max()), 1e-12))
    lw = LsaWeights.random(rg.dim, rng)
    ltrace: dict = {}
    lsa_forward(Tensor(rng.normal(size=(10, 13, rg.dim))), lw, WindowSpec(4, 8), 2, trace=ltrace)
    dev = max(float(np.abs(a.sum(-1) - 1).max()) for a in ltrace["attn"])
    out.append(CheckResult("L-SA attention rows sum to 1", dev, 1e-12))

    win = WindowSpec(3, 5)
    x = rng.normal(size=(2, 7, 11, 3))
    wins, info = window_partition(Tensor(x), win)
    out.append(_check("window partition round trip", np.array_equal(window_reverse(wins, win, info).data, x)))

    x = rng.normal(size=(5, 6, 12))
    out.append(_check("pixel shuffle inverse", np.array_equal(pixel_unshuffle(pixel_shuffle(Tensor(x), 2), 2).data, x)))

    for name, cfg in (("tiny", TINY), ("tiny/plain-mlp", TINY.variant(mlp="plain")), ("tiny/no-skip", TINY.variant(skip_mode="none"))):
        out.append(_check(f"count_params == init scalars ({name})",
                          count_params(cfg).total_params == init_weights(cfg, seed).num_scalars()))

    w = init_weights(TINY, seed)
    out.append(_check("weight serialization round trip", dump_weights(load_weights(dump_weights(w))) == dump_weights(w)))
    out.append(_check("config JSON round trip", ModelConfig.from_json(TINY.to_json()) == TINY))

    lr = rng.uniform(0, 1, (8, 8, 3))
    hr = rng.uniform(0, 1, (16, 16, 3))
    _, grads = loss_and_grads(TINY, _live_weights(TINY, seed), [(lr, hr)])
    dead = sorted(k for k, g in grads.items() if not np.any(g) and not k.endswith("attn.k.bias"))
    out.append(_check("gradient reaches every parameter" + (f" (dead: {', '.join(dead)})" if dead else ""), not dead))
    return out


def summarize(results: list[CheckResult]) -> tuple[str, bool]:
    lines = [r.line() for r in results]
    ok = all(r.passed for r in results)
    worst = max((r.value for r in results), default=0.0)
    lines.append(f"{sum(r.passed for r in results)}/{len(results)} passed; max error {worst:.3e}")
    return "\n".join(lines) + "\n", ok
